//! Counter-based Gaussian streams.
//!
//! Every draw is a pure function of `(master_seed, trial_index, step,
//! component)`, so ensembles reproduce bit-identically regardless of thread
//! count, platform, or the order in which trials run. The generator is
//! Philox2x64-10 with a fixed Box-Muller transform on top.

use crate::math;

const PHILOX_M: u64 = 0xD2B7_4407_B1CE_6E93;
const PHILOX_W: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn philox2x64(mut ctr: [u64; 2], mut key: u64) -> [u64; 2] {
    for _ in 0..10 {
        let prod = (ctr[0] as u128) * (PHILOX_M as u128);
        let hi = (prod >> 64) as u64;
        let lo = prod as u64;
        ctr = [hi ^ key ^ ctr[1], lo];
        key = key.wrapping_add(PHILOX_W);
    }
    ctr
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `u64` to a uniform double in `(0, 1]`.
#[inline]
fn to_unit(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// One reproducible Gaussian stream, keyed by `(master_seed, trial_index)`
/// with a per-step counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseStream {
    master_seed: u64,
    trial_index: u64,
    key: u64,
    step: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, trial_index: u64) -> Self {
        let key = splitmix(splitmix(master_seed ^ 0x5353_4e4c_5f31_4421).wrapping_add(trial_index));
        NoiseStream { master_seed, trial_index, key, step: 0 }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn trial_index(&self) -> u64 {
        self.trial_index
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Standard normal for `(step, component)`; pure, no state change.
    #[inline]
    pub fn normal_at(&self, step: u64, component: u64) -> f64 {
        let r = philox2x64([step, component], self.key);
        let u1 = to_unit(r[0]);
        let u2 = to_unit(r[1]);
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(math::TWO_PI * u2)
    }

    /// Fills `out` with i.i.d. standard normals for the current step and
    /// advances the step cursor.
    pub fn fill_standard_normals(&mut self, out: &mut [f64]) {
        let step = self.step;
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = self.normal_at(step, j as u64);
        }
        self.step += 1;
    }
}
