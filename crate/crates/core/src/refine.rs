//! Adaptive time stepping toward random blow-up times and mass-conservative
//! spatial mesh refinement.
//!
//! The time step follows `Δt_m = Δt₀ / ‖u‖_∞^{2σ}`, which makes the
//! rescaled-time increment `Δτ = Δt₀` per step. Refinement splits the cells
//! under the focusing core and rescales the interpolated values per original
//! cell so each cell's trapezoid mass (and hence the total discrete mass) is
//! preserved to roundoff.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, State};
use crate::math;
use crate::observables::ground_state_peak;
use crate::Complex64;

/// How new node values are interpolated inside a refined cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolationMode {
    /// Linear in `|u|` and in the (unwrapped) phase; the default.
    MagnitudePhase,
    /// Linear in the real and imaginary parts.
    RealImag,
}

/// Controls for dynamics-mode runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinePolicy {
    /// Base time step `Δt₀`.
    pub dt0: f64,
    /// Stop once `‖u‖_∞^σ` reaches this value.
    pub sup_stop: f64,
    /// Refine when the focusing core spans fewer than this many cells.
    pub refine_trigger_ratio: f64,
    /// Each refined cell splits into this many equal subcells.
    pub refine_factor: usize,
    /// Fraction of the peak amplitude that delimits the core window.
    pub core_selector: f64,
    /// Disabled for preset-refined sweep runs.
    pub dynamic_refinement: bool,
    pub interpolation: InterpolationMode,
}

impl Default for RefinePolicy {
    fn default() -> Self {
        RefinePolicy {
            dt0: 0.002,
            sup_stop: 1e10,
            refine_trigger_ratio: 20.0,
            refine_factor: 2,
            core_selector: 0.5,
            dynamic_refinement: true,
            interpolation: InterpolationMode::MagnitudePhase,
        }
    }
}

impl RefinePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt0 > 0.0) {
            return Err(Error::Config("dt0 must be positive"));
        }
        if !(self.sup_stop > 1.0) {
            return Err(Error::Config("sup_stop must exceed 1"));
        }
        if self.refine_factor < 2 {
            return Err(Error::Config("refine factor must be at least 2"));
        }
        if !(self.core_selector > 0.0 && self.core_selector < 1.0) {
            return Err(Error::Config("core selector must lie in (0, 1)"));
        }
        if !(self.refine_trigger_ratio > 0.0) {
            return Err(Error::Config("refine trigger ratio must be positive"));
        }
        Ok(())
    }
}

/// `Δt_m = Δt₀ / ‖u‖_∞^{2σ}` and the rescaled-time increment `Δτ = Δt₀`.
pub fn next_dt(state: &State, policy: &RefinePolicy, sigma: f64) -> Result<(f64, f64)> {
    let sup = state.sup_norm();
    if !(sup > 0.0) {
        return Err(Error::ZeroField);
    }
    let dt = policy.dt0 / math::pow_sigma(sup * sup, sigma);
    Ok((dt, policy.dt0))
}

/// Sup-norm, argmax node, and the node span `[j_lo, j_hi]` of the region
/// `|u| >= selector·‖u‖_∞`.
fn core_span(state: &State, policy: &RefinePolicy) -> Option<(f64, usize, usize, usize)> {
    let mut sup2 = 0.0f64;
    let mut peak = 0usize;
    for (j, v) in state.values.iter().enumerate() {
        let a = v.norm_sqr();
        if a > sup2 {
            sup2 = a;
            peak = j;
        }
    }
    if !(sup2 > 0.0) {
        return None;
    }
    let thresh2 = policy.core_selector * policy.core_selector * sup2;
    let mut lo = usize::MAX;
    let mut hi = 0;
    for (j, v) in state.values.iter().enumerate() {
        if v.norm_sqr() >= thresh2 {
            if lo == usize::MAX {
                lo = j;
            }
            hi = j;
        }
    }
    Some((math::sqrt(sup2), peak, lo, hi))
}

/// Focusing length estimated from the amplitude, `(Q(0)/‖u‖_∞)^σ`.
fn focusing_length(sup: f64, sigma: f64) -> f64 {
    math::powf(ground_state_peak(sigma) / sup, sigma)
}

/// True when the focusing core is resolved by fewer cells than the trigger
/// ratio demands.
///
/// Two measures are combined: the node count across the half-max region,
/// and the amplitude-implied focusing length against the mesh size at the
/// peak. The second matters early on, when the half-max region is still
/// dominated by the broad pedestal of the initial data while the collapse
/// scale has already dropped under the mesh; without it, noise scatters the
/// marginally resolved transition into a permanent stall.
pub fn needs_refinement(state: &State, grid: &Grid, policy: &RefinePolicy, sigma: f64) -> bool {
    if !policy.dynamic_refinement {
        return false;
    }
    match core_span(state, policy) {
        Some((sup, peak, lo, hi)) => {
            if ((hi - lo) as f64) < policy.refine_trigger_ratio {
                return true;
            }
            let dx_peak = grid.spacing_before(peak).max(grid.spacing_after(peak));
            2.0 * focusing_length(sup, sigma) / dx_peak < policy.refine_trigger_ratio
        }
        None => false,
    }
}

fn wrap_angle(mut a: f64) -> f64 {
    while a > core::f64::consts::PI {
        a -= math::TWO_PI;
    }
    while a <= -core::f64::consts::PI {
        a += math::TWO_PI;
    }
    a
}

/// Splits the cells under the core window into `refine_factor` equal parts,
/// interpolating the field and preserving each original cell's trapezoid
/// mass exactly; returns the refreshed flag telling the caller to rebuild
/// the covariance factor for the new grid.
pub fn refine_mesh(
    state: &State,
    grid: &Grid,
    policy: &RefinePolicy,
    sigma: f64,
) -> Result<(State, Grid, bool)> {
    policy.validate()?;
    if state.values.len() != grid.n_nodes() {
        return Err(Error::LengthMismatch { expected: grid.n_nodes(), got: state.values.len() });
    }
    let (sup, peak, lo, hi) = core_span(state, policy).ok_or(Error::ZeroField)?;
    // Clip the half-max window to a peak-centered neighborhood a few
    // focusing lengths wide; the tail outside keeps the fine mesh it
    // received while it was the core, so only the active region is split.
    let dx_peak = grid.spacing_before(peak).max(grid.spacing_after(peak));
    let half_width = (5.0 * focusing_length(sup, sigma)).max(4.0 * dx_peak);
    let x_peak = grid.nodes()[peak];
    let nodes = grid.nodes();
    let mut lo = lo.max(
        nodes.partition_point(|&x| x < x_peak - half_width).saturating_sub(1),
    );
    let mut hi = hi.min(nodes.partition_point(|&x| x <= x_peak + half_width));
    if lo >= hi {
        lo = peak.saturating_sub(1);
        hi = (peak + 1).min(grid.n_intervals());
    }
    // two guard cells on each side of the window
    let guard = 2usize;
    let n_cells = grid.n_intervals();
    let cell_lo = lo.saturating_sub(guard);
    let cell_hi = (hi + guard).min(n_cells); // refine cells [cell_lo, cell_hi)
    if cell_lo == 0 || cell_hi == n_cells {
        return Err(Error::RefineAtBoundary);
    }
    let (state, grid) = refine_cells(state, grid, policy, cell_lo, cell_hi)?;
    Ok((state, grid, true))
}

/// Splits cells `[cell_lo, cell_hi)` into `refine_factor` equal parts each,
/// with the mass-conservative interpolation.
pub fn refine_cells(
    state: &State,
    grid: &Grid,
    policy: &RefinePolicy,
    cell_lo: usize,
    cell_hi: usize,
) -> Result<(State, Grid)> {
    if cell_hi > grid.n_intervals() || cell_lo >= cell_hi {
        return Err(Error::Config("invalid refinement cell range"));
    }
    let n_cells = grid.n_intervals();
    let factor = policy.refine_factor;
    let nodes = grid.nodes();
    let values = &state.values;
    let mut new_nodes: Vec<f64> = Vec::with_capacity(grid.n_nodes() + (cell_hi - cell_lo) * (factor - 1));
    let mut new_values: Vec<Complex64> = Vec::with_capacity(new_nodes.capacity());

    for j in 0..n_cells {
        new_nodes.push(nodes[j]);
        new_values.push(values[j]);
        if j < cell_lo || j >= cell_hi {
            continue;
        }
        let (xa, xb) = (nodes[j], nodes[j + 1]);
        let (ua, ub) = (values[j], values[j + 1]);
        let h = xb - xa;
        let delta = h / factor as f64;
        let (qa, qb) = (ua.norm_sqr(), ub.norm_sqr());
        // interior interpolants
        let mut interior: Vec<Complex64> = Vec::with_capacity(factor - 1);
        match policy.interpolation {
            InterpolationMode::MagnitudePhase => {
                let (ma, mb) = (ua.norm(), ub.norm());
                let pa = if ma > 0.0 { math::atan2(ua.im, ua.re) } else { math::atan2(ub.im, ub.re) };
                let pb = if mb > 0.0 { math::atan2(ub.im, ub.re) } else { pa };
                let dp = wrap_angle(pb - pa);
                for i in 1..factor {
                    let t = i as f64 / factor as f64;
                    let m = ma + t * (mb - ma);
                    let p = pa + t * dp;
                    interior.push(Complex64::new(m * math::cos(p), m * math::sin(p)));
                }
            }
            InterpolationMode::RealImag => {
                for i in 1..factor {
                    let t = i as f64 / factor as f64;
                    interior.push(ua + (ub - ua) * t);
                }
            }
        }
        // one real scale per original cell so the refined trapezoid mass
        // equals the original cell mass
        let m_orig = 0.5 * (qa + qb) * h;
        let m_end = 0.5 * (qa + qb) * delta;
        let m_int: f64 = interior.iter().map(|v| v.norm_sqr()).sum::<f64>() * delta;
        if m_int > 0.0 {
            let s = math::sqrt((m_orig - m_end).max(0.0) / m_int);
            for v in interior.iter_mut() {
                *v *= s;
            }
        }
        for (i, v) in interior.into_iter().enumerate() {
            new_nodes.push(xa + (i + 1) as f64 * delta);
            new_values.push(v);
        }
    }
    new_nodes.push(nodes[n_cells]);
    new_values.push(values[n_cells]);

    let new_grid = Grid::from_nodes(new_nodes)?;
    let new_state = State {
        values: new_values,
        time: state.time,
        tau: state.tau,
        step_index: state.step_index,
    };
    Ok((new_state, new_grid))
}
