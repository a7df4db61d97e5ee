//! Scalar and profile diagnostics: discrete mass and energy, the focusing
//! scale `L`, the focusing parameter `a`, and rescaled core profiles against
//! the ground state.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, State};
use crate::math;


/// Discrete mass `½ Σ_j |u_j|² (Δx_j + Δx_{j-1})` with the pseudo-spacing
/// convention at the endpoints.
pub fn discrete_mass(state: &State, grid: &Grid) -> f64 {
    let mut s = 0.0;
    for (j, v) in state.values.iter().enumerate() {
        s += v.norm_sqr() * grid.weight(j);
    }
    s
}

/// Composite trapezoid mass `Σ_j (|u_j|² + |u_{j+1}|²)/2 · Δx_j`.
pub fn trapezoid_mass(state: &State, grid: &Grid) -> f64 {
    let mut s = 0.0;
    for j in 0..grid.n_intervals() {
        s += 0.5
            * (state.values[j].norm_sqr() + state.values[j + 1].norm_sqr())
            * grid.spacings()[j];
    }
    s
}

/// Squared gradient norm `Σ_j |u_{j+1} - u_j|² / Δx_j` (forward differences,
/// the same sum that appears in the discrete energy).
pub fn grad_norm_sq(state: &State, grid: &Grid) -> f64 {
    let mut s = 0.0;
    for j in 0..grid.n_intervals() {
        let d = state.values[j + 1] - state.values[j];
        s += d.norm_sqr() / grid.spacings()[j];
    }
    s
}

/// Kinetic and potential parts of the discrete energy; the energy is their
/// difference, their sum is a natural positive scale for relative drift.
pub fn discrete_energy_parts(state: &State, grid: &Grid, sigma: f64) -> (f64, f64) {
    let kinetic = 0.5 * grad_norm_sq(state, grid);
    let mut pot = 0.0;
    for (j, v) in state.values.iter().enumerate() {
        let rho = v.norm_sqr();
        pot += math::pow_sigma(rho, sigma) * rho * 2.0 * grid.weight(j);
    }
    let potential = pot / (4.0 * (sigma + 1.0));
    (kinetic, potential)
}

/// Discrete energy adapted to the non-uniform mesh; the gradient sum runs
/// over the interior differences, the last ghost difference vanishing under
/// the Neumann closure.
pub fn discrete_energy(state: &State, grid: &Grid, sigma: f64) -> f64 {
    let (k, p) = discrete_energy_parts(state, grid, sigma);
    k - p
}

/// Max-minus-min of a recorded mass column.
pub fn mass_error(mass: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &m in mass {
        lo = lo.min(m);
        hi = hi.max(m);
    }
    if mass.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Scaling index `s = 1/2 - 1/σ`.
pub fn scaling_index(sigma: f64) -> f64 {
    0.5 - 1.0 / sigma
}

/// Focusing scale `L = ‖∇u‖₂^{-1/(1-s)}`; this is the exponent that makes
/// `‖u_x‖ ~ L^{-(1-s)}` and reproduces the 0.50 log-log slope.
pub fn blowup_scale_l(state: &State, grid: &Grid, sigma: f64) -> Result<f64> {
    let g2 = grad_norm_sq(state, grid);
    if !(g2 > 0.0) {
        return Err(Error::ZeroField);
    }
    let one_minus_s = 0.5 + 1.0 / sigma;
    Ok(math::powf(g2, -0.5 / one_minus_s))
}

/// Focusing parameter
/// `a = -(2/α) (‖∇u‖₂²)^{-(2/α+1)} ∫ |u|^{2σ} Im(u_xx ū) dx`, `α = 1 + 2/σ`,
/// which equals `-L_t L` along the flow.
pub fn focusing_parameter_a(state: &State, grid: &Grid, sigma: f64) -> Result<f64> {
    let g2 = grad_norm_sq(state, grid);
    if !(g2 > 0.0) {
        return Err(Error::ZeroField);
    }
    let alpha = 1.0 + 2.0 / sigma;
    let d2 = grid.apply_d2(&state.values)?;
    let mut integral = 0.0;
    for (j, v) in state.values.iter().enumerate() {
        let rho = v.norm_sqr();
        let im = (d2[j] * v.conj()).im;
        integral += math::pow_sigma(rho, sigma) * im * grid.weight(j);
    }
    Ok(-(2.0 / alpha) * math::powf(g2, -(2.0 / alpha + 1.0)) * integral)
}

/// Ground state `Q(x) = (1+σ)^{1/(2σ)} sech^{1/σ}(σ x)`.
pub fn ground_state_q(sigma: f64, x: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    let y = math::abs(sigma * x);
    // sech(y) written to stay finite for large y
    let e = math::exp(-y);
    let sech = 2.0 * e / (1.0 + e * e);
    math::powf(1.0 + sigma, 0.5 / sigma) * math::powf(sech, 1.0 / sigma)
}

/// Peak amplitude `Q(0)`.
pub fn ground_state_peak(sigma: f64) -> f64 {
    math::powf(1.0 + sigma, 0.5 / sigma)
}

/// Sub-grid peak of `|u|` by a three-point parabola on `|u|²`.
///
/// Returns `(x_c, |u|(x_c))`. Fails when the discrete maximum is not unique
/// (several non-adjacent near-maximal nodes) or sits on a plateau or at the
/// boundary.
pub fn parabolic_peak(state: &State, grid: &Grid) -> Result<(f64, f64)> {
    let n = state.values.len();
    if n != grid.n_nodes() {
        return Err(Error::LengthMismatch { expected: grid.n_nodes(), got: n });
    }
    let mut k_max = 0;
    let mut y_max = -1.0;
    for (j, v) in state.values.iter().enumerate() {
        let y = v.norm_sqr();
        if y > y_max {
            y_max = y;
            k_max = j;
        }
    }
    if !(y_max > 0.0) {
        return Err(Error::ZeroField);
    }
    // near-maximal nodes must form one short run around the argmax
    let near = (1.0 - 1e-9) * y_max;
    let mut lo = k_max;
    let mut hi = k_max;
    for (j, v) in state.values.iter().enumerate() {
        if v.norm_sqr() >= near {
            lo = lo.min(j);
            hi = hi.max(j);
        }
    }
    let mut run = 0usize;
    for v in state.values[lo..=hi].iter() {
        if v.norm_sqr() >= near {
            run += 1;
        }
    }
    if hi - lo + 1 != run || run > 2 {
        return Err(Error::AmbiguousCenter);
    }
    if k_max == 0 || k_max == n - 1 {
        return Err(Error::AmbiguousCenter);
    }

    let (x1, x2, x3) = (grid.nodes()[k_max - 1], grid.nodes()[k_max], grid.nodes()[k_max + 1]);
    let (y1, y2, y3) = (
        state.values[k_max - 1].norm_sqr(),
        state.values[k_max].norm_sqr(),
        state.values[k_max + 1].norm_sqr(),
    );
    let quad_coeff = y1 / ((x1 - x2) * (x1 - x3))
        + y2 / ((x2 - x1) * (x2 - x3))
        + y3 / ((x3 - x1) * (x3 - x2));
    if !(quad_coeff < 0.0) {
        return Err(Error::AmbiguousCenter);
    }
    let denom = y1 * (x2 - x3) + y2 * (x3 - x1) + y3 * (x1 - x2);
    let x_v = 0.5 * (y1 * (x2 * x2 - x3 * x3) + y2 * (x3 * x3 - x1 * x1) + y3 * (x1 * x1 - x2 * x2))
        / denom;
    let p = |x: f64| {
        y1 * (x - x2) * (x - x3) / ((x1 - x2) * (x1 - x3))
            + y2 * (x - x1) * (x - x3) / ((x2 - x1) * (x2 - x3))
            + y3 * (x - x1) * (x - x2) / ((x3 - x1) * (x3 - x2))
    };
    Ok((x_v, math::sqrt(p(x_v).max(y2))))
}

/// Rescaled core profile against the ground state.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSnapshot {
    /// Rescaled coordinates `ξ`, symmetric about 0.
    pub xi: Vec<f64>,
    /// `ℓ^{1/σ} |u(x_c + ξ ℓ)|`.
    pub rescaled: Vec<f64>,
    /// `Q(ξ)`.
    pub q_ref: Vec<f64>,
    /// Time stamp of the snapshot.
    pub time: f64,
    /// Profile scale `ℓ` used for the rescaling.
    pub scale_l: f64,
}

/// Extracts the rescaled core profile `ℓ^{1/σ} |u(x_c + ξ ℓ)|` on a uniform
/// `ξ` grid, paired with `Q(ξ)`.
///
/// The scale `ℓ` is fixed by matching the peak to `Q(0)`, so both curves
/// peak at `ξ = 0` with the same value; any exact dilation of `Q` maps back
/// onto `Q` up to interpolation error.
pub fn rescaled_profile(
    state: &State,
    grid: &Grid,
    sigma: f64,
    xi_max: f64,
    samples: usize,
) -> Result<ProfileSnapshot> {
    if samples < 3 || !(xi_max > 0.0) {
        return Err(Error::Config("profile needs xi_max > 0 and at least 3 samples"));
    }
    let (x_c, amp) = parabolic_peak(state, grid)?;
    let q0 = ground_state_peak(sigma);
    let ell = math::powf(q0 / amp, sigma);
    let ell_pow = math::powf(ell, 1.0 / sigma);
    let mut xi = Vec::with_capacity(samples);
    let mut rescaled = Vec::with_capacity(samples);
    let mut q_ref = Vec::with_capacity(samples);
    for i in 0..samples {
        let x = -xi_max + 2.0 * xi_max * i as f64 / (samples - 1) as f64;
        xi.push(x);
        rescaled.push(ell_pow * grid.interp_abs(&state.values, x_c + x * ell));
        q_ref.push(ground_state_q(sigma, x));
    }
    Ok(ProfileSnapshot { xi, rescaled, q_ref, time: state.time, scale_l: ell })
}

/// Per-step observables recorded along a run.
#[derive(Debug, Clone, Default)]
pub struct TimeSeries {
    pub stride: usize,
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
    pub mass: Vec<f64>,
    pub trap_mass: Vec<f64>,
    pub energy: Vec<f64>,
    pub sup_norm: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
}

impl TimeSeries {
    pub fn new(stride: usize) -> Self {
        TimeSeries { stride: stride.max(1), ..Default::default() }
    }

    /// Records one sample; `L` and `a` are NaN where undefined (zero field).
    pub fn push_sample(&mut self, state: &State, grid: &Grid, sigma: f64) {
        self.t.push(state.time);
        self.tau.push(state.tau);
        self.mass.push(discrete_mass(state, grid));
        self.trap_mass.push(trapezoid_mass(state, grid));
        self.energy.push(discrete_energy(state, grid, sigma));
        self.sup_norm.push(state.sup_norm());
        let g2 = grad_norm_sq(state, grid);
        self.grad_norm.push(math::sqrt(g2));
        self.l.push(blowup_scale_l(state, grid, sigma).unwrap_or(f64::NAN));
        self.a.push(focusing_parameter_a(state, grid, sigma).unwrap_or(f64::NAN));
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Mass error `max_m M - min_m M` over the recorded rows.
    pub fn mass_error(&self) -> f64 {
        mass_error(&self.mass)
    }
}
