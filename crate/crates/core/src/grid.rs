//! Non-uniform 1D meshes with Neumann pseudo-points, the three-point
//! second-difference operator, and the quadrature weights shared by the
//! discrete mass and energy.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::Complex64;

/// Relative tolerance used when checking that requested spacings tile the
/// domain exactly.
pub const TILING_TOL: f64 = 1e-9;

/// A strictly increasing 1D mesh `x_0 < … < x_N` on `[-L_c, L_c]`.
///
/// The boundary rows carry pseudo-spacings `Δx_{-1} = Δx_0` and
/// `Δx_N = Δx_{N-1}`, which realize the homogeneous Neumann closure.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    spacings: Vec<f64>,
    half_length: f64,
    fingerprint: u64,
}

impl Grid {
    /// Builds a grid from an explicit node sequence (strictly increasing,
    /// at least 3 nodes).
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Config("grid needs at least 3 nodes"));
        }
        let mut spacings = Vec::with_capacity(nodes.len() - 1);
        for pair in nodes.windows(2) {
            let dx = pair[1] - pair[0];
            if !(dx > 0.0) {
                return Err(Error::Config("grid nodes must be strictly increasing"));
            }
            spacings.push(dx);
        }
        let half_length = 0.5 * (nodes[nodes.len() - 1] - nodes[0]);
        let fingerprint = fingerprint_nodes(&nodes);
        Ok(Grid { nodes, spacings, half_length, fingerprint })
    }

    /// Number of intervals `N`.
    pub fn n_intervals(&self) -> usize {
        self.spacings.len()
    }

    /// Number of nodes `N + 1`.
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    /// Hash of the node coordinates; covariance factors are keyed on this.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// `Δx_{j-1}` with the pseudo-spacing convention at the left boundary.
    #[inline]
    pub fn spacing_before(&self, j: usize) -> f64 {
        if j == 0 {
            self.spacings[0]
        } else {
            self.spacings[j - 1]
        }
    }

    /// `Δx_j` with the pseudo-spacing convention at the right boundary.
    #[inline]
    pub fn spacing_after(&self, j: usize) -> f64 {
        if j == self.spacings.len() {
            self.spacings[self.spacings.len() - 1]
        } else {
            self.spacings[j]
        }
    }

    /// Cell weight `w_j = (Δx_{j-1} + Δx_j) / 2`.
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        0.5 * (self.spacing_before(j) + self.spacing_after(j))
    }

    /// Dual cell `[x_{j-1/2}, x_{j+1/2}]` around node `j`, using the
    /// pseudo-spacings at the two boundary nodes.
    #[inline]
    pub fn dual_cell(&self, j: usize) -> (f64, f64) {
        let x = self.nodes[j];
        (x - 0.5 * self.spacing_before(j), x + 0.5 * self.spacing_after(j))
    }

    /// Quadrature weights `w_j` for all nodes.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|j| self.weight(j)).collect()
    }

    /// Three-point second-difference coefficients with the Neumann ghost
    /// values folded into the first and last rows.
    ///
    /// Returns `(sub, diag, sup)` so that
    /// `(D₂ f)_j = sub[j]·f_{j-1} + diag[j]·f_j + sup[j]·f_{j+1}`
    /// (with `sub[0]` and `sup[N]` unused).
    pub fn d2_coefficients(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n_nodes();
        let mut sub = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        let mut sup = Vec::with_capacity(n);
        for j in 0..n {
            let hm = self.spacing_before(j);
            let hp = self.spacing_after(j);
            let a = 2.0 / (hm * (hm + hp));
            let c = 2.0 / (hp * (hm + hp));
            let b = -2.0 / (hm * hp);
            if j == 0 {
                sub.push(0.0);
                diag.push(b + a);
                sup.push(c);
            } else if j == n - 1 {
                sub.push(a);
                diag.push(b + c);
                sup.push(0.0);
            } else {
                sub.push(a);
                diag.push(b);
                sup.push(c);
            }
        }
        (sub, diag, sup)
    }

    /// Applies the second-difference operator to a complex field.
    pub fn apply_d2(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.n_nodes();
        if f.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: f.len() });
        }
        let (sub, diag, sup) = self.d2_coefficients();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let mut v = diag[j] * f[j];
            if j > 0 {
                v += sub[j] * f[j - 1];
            }
            if j + 1 < n {
                v += sup[j] * f[j + 1];
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Linear interpolation of `|u|` at an arbitrary coordinate; zero
    /// outside the mesh.
    pub fn interp_abs(&self, values: &[Complex64], x: f64) -> f64 {
        let nodes = &self.nodes;
        if x < nodes[0] || x > nodes[nodes.len() - 1] {
            return 0.0;
        }
        let k = match nodes.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(i) => return values[i].norm(),
            Err(i) => i - 1,
        };
        let t = (x - nodes[k]) / self.spacings[k];
        let a = values[k].norm();
        let b = values[k + 1].norm();
        a + t * (b - a)
    }
}

fn fingerprint_nodes(nodes: &[f64]) -> u64 {
    // FNV-1a over the raw bit patterns.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &x in nodes {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn exact_count(x: f64) -> Option<u64> {
    let r = math::round(x);
    if r >= 1.0 && math::abs(x - r) <= TILING_TOL * if x > 1.0 { x } else { 1.0 } {
        Some(r as u64)
    } else {
        None
    }
}

/// Uniform grid on `[-L_c, L_c]` with `N = 2 L_c / dx` intervals (`N` even).
pub fn make_uniform_grid(l_c: f64, dx: f64) -> Result<Grid> {
    if !(l_c > 0.0) || !(dx > 0.0) {
        return Err(Error::Config("uniform grid requires L_c > 0 and dx > 0"));
    }
    let half = exact_count(l_c / dx)
        .ok_or(Error::Config("2 L_c / dx must be an even integer"))? as i64;
    let mut nodes = Vec::with_capacity(2 * half as usize + 1);
    for k in -half..=half {
        nodes.push(k as f64 * dx);
    }
    // Snap the endpoints so the box is exactly [-L_c, L_c].
    nodes[0] = -l_c;
    let last = nodes.len() - 1;
    nodes[last] = l_c;
    Grid::from_nodes(nodes)
}

/// Grid with spacing `dx_outer / refine_factor` on
/// `[-core_half_width, core_half_width]` and `dx_outer` outside.
///
/// `refine_factor = 1` reproduces the uniform grid.
pub fn make_preset_refined_grid(
    l_c: f64,
    dx_outer: f64,
    core_half_width: f64,
    refine_factor: u32,
) -> Result<Grid> {
    if !(l_c > 0.0) || !(dx_outer > 0.0) {
        return Err(Error::Config("preset grid requires L_c > 0 and dx_outer > 0"));
    }
    if !(core_half_width > 0.0 && core_half_width < l_c) {
        return Err(Error::Config("core half-width must lie in (0, L_c)"));
    }
    if refine_factor < 1 {
        return Err(Error::Config("refine factor must be at least 1"));
    }
    let dx_inner = dx_outer / refine_factor as f64;
    let n_inner = exact_count(core_half_width / dx_inner)
        .ok_or(Error::Config("core region does not tile with the inner spacing"))?;
    let n_outer = exact_count((l_c - core_half_width) / dx_outer)
        .ok_or(Error::Config("outer region does not tile with dx_outer"))?;

    // Positive half, mirrored exactly onto the negative half.
    let mut positive = Vec::with_capacity((n_inner + n_outer) as usize);
    for k in 1..=n_inner {
        positive.push(k as f64 * dx_inner);
    }
    let li = positive.len();
    if li > 0 {
        positive[li - 1] = core_half_width;
    }
    for k in 1..=n_outer {
        positive.push(core_half_width + k as f64 * dx_outer);
    }
    let lo = positive.len();
    positive[lo - 1] = l_c;

    let mut nodes = Vec::with_capacity(2 * positive.len() + 1);
    for &x in positive.iter().rev() {
        nodes.push(-x);
    }
    nodes.push(0.0);
    nodes.extend_from_slice(&positive);
    Grid::from_nodes(nodes)
}

/// Complex field values on a grid at one instant, plus clock bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// `u_j`, one complex value per grid node.
    pub values: Vec<Complex64>,
    /// Physical time `t_m`.
    pub time: f64,
    /// Rescaled time `τ_m`.
    pub tau: f64,
    /// Step counter `m`.
    pub step_index: u64,
}

impl State {
    pub fn new(values: Vec<Complex64>) -> Self {
        State { values, time: 0.0, tau: 0.0, step_index: 0 }
    }

    /// Builds the initial state by sampling `f` at the grid nodes.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(f64) -> Complex64) -> Self {
        State::new(grid.nodes().iter().map(|&x| f(x)).collect())
    }

    /// Nodal sup-norm `max_j |u_j|`.
    pub fn sup_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for v in &self.values {
            let a = v.norm_sqr();
            if a > m {
                m = a;
            }
        }
        math::sqrt(m)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}
