//! The three implicit midpoint schemes: mass-energy conservative (MEC),
//! Crank-Nicolson (CN), and linear extrapolation (LE).
//!
//! All three advance
//! `i (u^{m+1} - u^m)/Δt + D₂ u^{m+1/2} + V̂ u^{m+1/2} = ε f̃ u^{m+1/2}`
//! with `u^{m+1/2} = (u^m + u^{m+1})/2` and a real frozen potential `V̂`.
//! Because the noise enters through the midpoint with a real `f̃`, every
//! solved step conserves the discrete mass pathwise, whether or not the
//! fixed-point iteration for the nonlinear potential has converged.


use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, State};
use crate::linalg::{solve_block_tridiagonal_2x2, solve_tridiagonal, tridiagonal_residual};
use crate::math;
use crate::Complex64;

/// Accept threshold for the tridiagonal solve residual; elimination runs
/// without pivoting, so each solve is verified.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Mec,
    Cn,
    Le,
}

/// Scheme selection and the fixed-point controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    /// Nonlinearity power σ ≥ 2; integer values take an exact product path.
    pub sigma: f64,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iters: usize,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, sigma: f64) -> Result<Self> {
        if !(sigma >= 2.0) {
            return Err(Error::Config("nonlinearity power sigma must be >= 2"));
        }
        Ok(SchemeConfig { scheme, sigma, fixed_point_tol: 1e-12, fixed_point_max_iters: 100 })
    }

    pub fn with_tolerance(mut self, tol: f64, max_iters: usize) -> Result<Self> {
        if !(tol > 0.0) || max_iters == 0 {
            return Err(Error::Config("fixed-point tolerance must be positive, iterations >= 1"));
        }
        self.fixed_point_tol = tol;
        self.fixed_point_max_iters = max_iters;
        Ok(self)
    }
}

/// Everything one step needs besides the state: the step sizes, the sampled
/// noise vector, and (for LE) the previous potential.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Current step size `Δt_m`.
    pub dt: f64,
    /// Increment credited to the rescaled clock `τ`.
    pub dtau: f64,
    /// Sampled noise vector `f̃^{m+1/2}` (all zeros for ε = 0).
    pub noise: &'a [f64],
    /// Noise strength ε.
    pub eps: f64,
    /// `V^{m-1}_j = |u^{m-1}_j|^{2σ}` from the previously accepted step.
    pub prev_potential: Option<&'a [f64]>,
    /// `Δt_{m-1}` of the previously accepted step.
    pub prev_dt: Option<f64>,
}

/// `V_j = |u_j|^{2σ}` for a whole field.
pub fn potential(values: &[Complex64], sigma: f64) -> Vec<f64> {
    values.iter().map(|v| math::pow_sigma(v.norm_sqr(), sigma)).collect()
}

/// Midpoint noise term `ε · (u^m + u^{m+1})/2 · f̃` elementwise. In the
/// solver the `u^{m+1}` half sits in the matrix and the `u^m` half on the
/// right side; this form is the diagnostic view of the same coupling.
pub fn stratonovich_rhs(
    u_m: &[Complex64],
    u_next: &[Complex64],
    f_tilde: &[f64],
    eps: f64,
) -> Vec<Complex64> {
    debug_assert_eq!(u_m.len(), u_next.len());
    debug_assert_eq!(u_m.len(), f_tilde.len());
    u_m.iter()
        .zip(u_next.iter())
        .zip(f_tilde.iter())
        .map(|((a, b), f)| (a + b) * (0.5 * eps * f))
        .collect()
}

/// MEC nonlinear coefficient
/// `(|u^{m+1}|^{2(σ+1)} - |u^m|^{2(σ+1)}) / ((σ+1)(|u^{m+1}|² - |u^m|²))`,
/// computed for integer σ by the exact polynomial sum
/// `Σ_{k=0}^{σ} |u^{m+1}|^{2k} |u^m|^{2(σ-k)} / (σ+1)`, which has no 0/0.
fn mec_coefficient(rho_old: f64, rho_new: f64, sigma: f64) -> f64 {
    if let Some(k) = math::as_small_integer(sigma) {
        let mut sum = 0.0;
        let mut p_new = 1.0;
        for i in 0..=k {
            sum += p_new * math::ipow(rho_old, k - i);
            p_new *= rho_new;
        }
        sum / (sigma + 1.0)
    } else {
        let den = rho_new - rho_old;
        if math::abs(den) < 1e-12 * rho_old * rho_old {
            math::powf(rho_old, sigma)
        } else {
            (math::powf(rho_new, sigma + 1.0) - math::powf(rho_old, sigma + 1.0))
                / ((sigma + 1.0) * den)
        }
    }
}

/// `dV̂/dρ_new` for the frozen-coefficient potentials, used by the Newton
/// fallback. `rho_old = |u^m|²`, `rho_new = |v|²`.
fn potential_and_derivative(scheme: Scheme, sigma: f64, rho_old: f64, mid_or_new: f64) -> (f64, f64) {
    match scheme {
        Scheme::Cn => {
            // V = rho_mid^sigma as a function of rho_mid; the caller maps
            // the chain rule through the midpoint.
            let v = math::pow_sigma(mid_or_new, sigma);
            let dv = if mid_or_new > 0.0 { sigma * v / mid_or_new } else { 0.0 };
            (v, dv)
        }
        Scheme::Mec => {
            if let Some(k) = math::as_small_integer(sigma) {
                let mut sum = 0.0;
                let mut p_new = 1.0;
                for i in 0..=k {
                    sum += p_new * math::ipow(rho_old, k - i);
                    p_new *= mid_or_new;
                }
                let mut dsum = 0.0;
                let mut p = 1.0; // rho_new^{i-1}
                for i in 1..=k {
                    dsum += i as f64 * p * math::ipow(rho_old, k - i);
                    p *= mid_or_new;
                }
                (sum / (sigma + 1.0), dsum / (sigma + 1.0))
            } else {
                let den = mid_or_new - rho_old;
                if math::abs(den) < 1e-12 * rho_old * rho_old {
                    let v = math::powf(rho_old, sigma);
                    let dv = if rho_old > 0.0 { 0.5 * sigma * v / rho_old } else { 0.0 };
                    (v, dv)
                } else {
                    let pn = math::powf(mid_or_new, sigma + 1.0);
                    let po = math::powf(rho_old, sigma + 1.0);
                    let v = (pn - po) / ((sigma + 1.0) * den);
                    let dv = (math::powf(mid_or_new, sigma) * den - (pn - po) / (sigma + 1.0))
                        / (den * den);
                    (v, dv)
                }
            }
        }
        Scheme::Le => unreachable!(),
    }
}

struct ImplicitSystem {
    sub: Vec<Complex64>,
    diag: Vec<Complex64>,
    sup: Vec<Complex64>,
    rhs: Vec<Complex64>,
}

/// Assembles and solves
/// `[i/Δt + ½(D₂ + V̂ - ε f̃)] u^{m+1} = [i/Δt - ½(D₂ + V̂ - ε f̃)] u^m`.
fn solve_implicit(
    u_m: &[Complex64],
    v_hat: &[f64],
    ctx: &StepContext<'_>,
    d2: &(Vec<f64>, Vec<f64>, Vec<f64>),
) -> Result<(Vec<Complex64>, ImplicitSystem)> {
    let n = u_m.len();
    let (d2_sub, d2_diag, d2_sup) = d2;
    let i_over_dt = Complex64::new(0.0, 1.0 / ctx.dt);
    let mut sub = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    let mut sup = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    for j in 0..n {
        let w = v_hat[j] - ctx.eps * ctx.noise[j];
        sub.push(Complex64::new(0.5 * d2_sub[j], 0.0));
        diag.push(i_over_dt + 0.5 * (d2_diag[j] + w));
        sup.push(Complex64::new(0.5 * d2_sup[j], 0.0));
        // (L u^m)_j with L = ½(D₂ + V̂ - ε f̃)
        let mut lu = (d2_diag[j] + w) * u_m[j];
        if j > 0 {
            lu += d2_sub[j] * u_m[j - 1];
        }
        if j + 1 < n {
            lu += d2_sup[j] * u_m[j + 1];
        }
        rhs.push(i_over_dt * u_m[j] - 0.5 * lu);
    }
    let x = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
    Ok((x, ImplicitSystem { sub, diag, sup, rhs }))
}

/// Residual `F(v) = (i/dt)(v - u) + ½(D₂ + V̂(v) - εf̃)(v + u)` of the
/// implicit relation at the iterate `v`.
fn implicit_residual(
    u_m: &[Complex64],
    v: &[Complex64],
    cfg: &SchemeConfig,
    ctx: &StepContext<'_>,
    d2: &(Vec<f64>, Vec<f64>, Vec<f64>),
) -> Vec<Complex64> {
    let n = u_m.len();
    let (d2_sub, d2_diag, d2_sup) = d2;
    let i_over_dt = Complex64::new(0.0, 1.0 / ctx.dt);
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mid = (u_m[j] + v[j]) * 0.5;
        let v_hat = match cfg.scheme {
            Scheme::Cn => math::pow_sigma(mid.norm_sqr(), cfg.sigma),
            Scheme::Mec => {
                potential_and_derivative(Scheme::Mec, cfg.sigma, u_m[j].norm_sqr(), v[j].norm_sqr()).0
            }
            Scheme::Le => unreachable!(),
        };
        let w = v_hat - ctx.eps * ctx.noise[j];
        let mut acc = i_over_dt * (v[j] - u_m[j]) + w * mid;
        let mut d2mid = d2_diag[j] * mid;
        if j > 0 {
            d2mid += d2_sub[j] * (u_m[j - 1] + v[j - 1]) * 0.5;
        }
        if j + 1 < n {
            d2mid += d2_sup[j] * (u_m[j + 1] + v[j + 1]) * 0.5;
        }
        acc += d2mid;
        out.push(acc);
    }
    out
}

fn sup_norm_of(values: &[Complex64]) -> f64 {
    let mut m = 0.0f64;
    for v in values {
        m = m.max(v.norm());
    }
    m
}

/// Newton iteration on the implicit relation in real coordinates, used
/// when the plain fixed-point iteration stops contracting (it provably
/// cannot contract once `Δt · |u|^{2σ}` is order one). The Jacobian is
/// block-tridiagonal with 2x2 blocks and the step is damped by a residual
/// line search.
fn newton_solve(
    u_m: &[Complex64],
    start: &[Complex64],
    cfg: &SchemeConfig,
    ctx: &StepContext<'_>,
    d2: &(Vec<f64>, Vec<f64>, Vec<f64>),
    tol: f64,
) -> Result<Vec<Complex64>> {
    let n = u_m.len();
    let (d2_sub, d2_diag, d2_sup) = d2;
    let mut v: Vec<Complex64> = start.to_vec();
    let mut residual = implicit_residual(u_m, &v, cfg, ctx, d2);
    let mut res_norm = sup_norm_of(&residual);
    let scale = 1.0 / ctx.dt + sup_norm_of(u_m);
    for _ in 0..60 {
        if !res_norm.is_finite() {
            return Err(Error::Overflow);
        }
        // assemble the 2x2 block-tridiagonal Jacobian at v
        let mut sub = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        let mut sup = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        let inv_dt = 1.0 / ctx.dt;
        for j in 0..n {
            sub.push([0.5 * d2_sub[j], 0.0, 0.0, 0.5 * d2_sub[j]]);
            sup.push([0.5 * d2_sup[j], 0.0, 0.0, 0.5 * d2_sup[j]]);
            let mid = (u_m[j] + v[j]) * 0.5;
            let (v_hat, dv) = match cfg.scheme {
                Scheme::Cn => {
                    let (val, d) =
                        potential_and_derivative(Scheme::Cn, cfg.sigma, 0.0, mid.norm_sqr());
                    // d|mid|^2 / d(v_re, v_im) = (mid_re, mid_im)
                    (val, d)
                }
                Scheme::Mec => potential_and_derivative(
                    Scheme::Mec,
                    cfg.sigma,
                    u_m[j].norm_sqr(),
                    v[j].norm_sqr(),
                ),
                Scheme::Le => unreachable!(),
            };
            let w = v_hat - ctx.eps * ctx.noise[j];
            // gradient of v_hat wrt (a, b) of v_j
            let (ga, gb) = match cfg.scheme {
                Scheme::Cn => (dv * mid.re, dv * mid.im),
                Scheme::Mec => (dv * 2.0 * v[j].re, dv * 2.0 * v[j].im),
                Scheme::Le => unreachable!(),
            };
            // block: i/dt * J + ½(d2diag + w) I + mid ⊗ ∇V̂
            let c = 0.5 * (d2_diag[j] + w);
            let block = [
                c + mid.re * ga,
                -inv_dt + mid.re * gb,
                inv_dt + mid.im * ga,
                c + mid.im * gb,
            ];
            diag.push(block);
            rhs.push([residual[j].re, residual[j].im]);
        }
        solve_block_tridiagonal_2x2(&sub, &diag, &sup, &mut rhs)?;
        // damped update
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..6 {
            let trial: Vec<Complex64> = v
                .iter()
                .zip(rhs.iter())
                .map(|(x, d)| x - Complex64::new(lambda * d[0], lambda * d[1]))
                .collect();
            let trial_res = implicit_residual(u_m, &trial, cfg, ctx, d2);
            let trial_norm = sup_norm_of(&trial_res);
            if trial_norm < res_norm {
                v = trial;
                residual = trial_res;
                res_norm = trial_norm;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            return Err(Error::FixedPointDiverged { residual: res_norm / scale, iterations: 60 });
        }
        let step_size = rhs
            .iter()
            .fold(0.0f64, |m, d| m.max(math::sqrt(d[0] * d[0] + d[1] * d[1])));
        if step_size * lambda < tol && res_norm < tol * scale {
            return Ok(v);
        }
    }
    Err(Error::FixedPointDiverged { residual: res_norm / scale, iterations: 60 })
}

fn check_finite(values: &[Complex64]) -> Result<()> {
    for v in values {
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Overflow);
        }
    }
    Ok(())
}

fn sup_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut m = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        m = m.max((x - y).norm());
    }
    m
}

/// Advances one step under the selected scheme.
pub fn step(state: &State, cfg: &SchemeConfig, ctx: &StepContext<'_>, grid: &Grid) -> Result<State> {
    let n = grid.n_nodes();
    if state.values.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: state.values.len() });
    }
    if ctx.noise.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: ctx.noise.len() });
    }
    if !(ctx.dt > 0.0) {
        return Err(Error::Config("step size must be positive"));
    }
    let d2 = grid.d2_coefficients();
    let u_m = &state.values;

    let (values, system) = match cfg.scheme {
        Scheme::Le => {
            let (Some(v_prev), Some(dt_prev)) = (ctx.prev_potential, ctx.prev_dt) else {
                return Err(Error::Config("LE step needs the previous potential; bootstrap with CN"));
            };
            if v_prev.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: v_prev.len() });
            }
            let v_m = potential(u_m, cfg.sigma);
            let scale = ctx.dt / (2.0 * dt_prev);
            let v_hat: Vec<f64> = v_m
                .iter()
                .zip(v_prev.iter())
                .map(|(vm, vp)| (1.0 + scale) * vm - scale * vp)
                .collect();
            solve_implicit(u_m, &v_hat, ctx, &d2)?
        }
        Scheme::Cn | Scheme::Mec => {
            let rho_old: Vec<f64> = u_m.iter().map(|v| v.norm_sqr()).collect();
            let sup_m = state.sup_norm();
            let tol = cfg.fixed_point_tol * (1.0 + sup_m);
            let mut v = u_m.clone();
            let mut accepted = None;
            let mut best = u_m.clone();
            let mut best_residual = f64::INFINITY;
            let mut residual;
            for _ in 0..cfg.fixed_point_max_iters {
                let v_hat: Vec<f64> = match cfg.scheme {
                    Scheme::Cn => u_m
                        .iter()
                        .zip(v.iter())
                        .map(|(a, b)| math::pow_sigma(((a + b) * 0.5).norm_sqr(), cfg.sigma))
                        .collect(),
                    Scheme::Mec => rho_old
                        .iter()
                        .zip(v.iter())
                        .map(|(&ro, b)| mec_coefficient(ro, b.norm_sqr(), cfg.sigma))
                        .collect(),
                    Scheme::Le => unreachable!(),
                };
                let (next, system) = match solve_implicit(u_m, &v_hat, ctx, &d2) {
                    Ok(pair) => pair,
                    Err(_) => break,
                };
                if check_finite(&next).is_err() {
                    break;
                }
                residual = sup_diff(&next, &v);
                if residual < best_residual {
                    best_residual = residual;
                    best = next.clone();
                }
                v = next;
                if residual < tol {
                    accepted = Some((v.clone(), system));
                    break;
                }
            }
            match accepted {
                Some(pair) => pair,
                None => {
                    // Picard stopped contracting; fall back to a damped
                    // Newton iteration on the same implicit relation.
                    let v = newton_solve(u_m, &best, cfg, ctx, &d2, tol)?;
                    check_finite(&v)?;
                    let v_hat: Vec<f64> = match cfg.scheme {
                        Scheme::Cn => u_m
                            .iter()
                            .zip(v.iter())
                            .map(|(a, b)| math::pow_sigma(((a + b) * 0.5).norm_sqr(), cfg.sigma))
                            .collect(),
                        Scheme::Mec => rho_old
                            .iter()
                            .zip(v.iter())
                            .map(|(&ro, b)| mec_coefficient(ro, b.norm_sqr(), cfg.sigma))
                            .collect(),
                        Scheme::Le => unreachable!(),
                    };
                    // verify v also solves its own frozen-coefficient
                    // system (this is what the downstream residual check
                    // inspects)
                    let i_over_dt = Complex64::new(0.0, 1.0 / ctx.dt);
                    let (d2_sub, d2_diag, d2_sup) = &d2;
                    let mut sub = Vec::with_capacity(n);
                    let mut diag = Vec::with_capacity(n);
                    let mut sup = Vec::with_capacity(n);
                    let mut rhs = Vec::with_capacity(n);
                    for j in 0..n {
                        let w = v_hat[j] - ctx.eps * ctx.noise[j];
                        sub.push(Complex64::new(0.5 * d2_sub[j], 0.0));
                        diag.push(i_over_dt + 0.5 * (d2_diag[j] + w));
                        sup.push(Complex64::new(0.5 * d2_sup[j], 0.0));
                        let mut lu = (d2_diag[j] + w) * u_m[j];
                        if j > 0 {
                            lu += d2_sub[j] * u_m[j - 1];
                        }
                        if j + 1 < n {
                            lu += d2_sup[j] * u_m[j + 1];
                        }
                        rhs.push(i_over_dt * u_m[j] - 0.5 * lu);
                    }
                    (v, ImplicitSystem { sub, diag, sup, rhs })
                }
            }
        }
    };

    check_finite(&values)?;
    let r = tridiagonal_residual(&system.sub, &system.diag, &system.sup, &values, &system.rhs);
    if !(r < SOLVE_RESIDUAL_TOL) {
        return Err(Error::SolveResidual { residual: r });
    }
    Ok(State {
        values,
        time: state.time + ctx.dt,
        tau: state.tau + ctx.dtau,
        step_index: state.step_index + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_uniform_grid, Grid};
    use crate::observables::{discrete_energy, discrete_energy_parts, discrete_mass, ground_state_q};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn zero_noise(n: usize) -> Vec<f64> {
        vec![0.0; n]
    }

    fn ctx_free(dt: f64, noise: &[f64]) -> StepContext<'_> {
        StepContext { dt, dtau: dt, noise, eps: 0.0, prev_potential: None, prev_dt: None }
    }

    fn q_state(grid: &Grid, sigma: f64, amplitude: f64) -> State {
        State::from_fn(grid, |x| c(amplitude * ground_state_q(sigma, x)))
    }

    #[test]
    fn zero_field_is_a_fixed_point_of_all_schemes() {
        let g = make_uniform_grid(2.0, 0.1).unwrap();
        let n = g.n_nodes();
        let zero = State::new(vec![c(0.0); n]);
        let noise = zero_noise(n);
        for scheme in [Scheme::Mec, Scheme::Cn] {
            let cfg = SchemeConfig::new(scheme, 2.0).unwrap();
            let out = step(&zero, &cfg, &ctx_free(0.01, &noise), &g).unwrap();
            assert!(out.values.iter().all(|v| v.norm() == 0.0));
        }
        let v_prev = vec![0.0; n];
        let cfg = SchemeConfig::new(Scheme::Le, 2.0).unwrap();
        let ctx = StepContext {
            dt: 0.01,
            dtau: 0.01,
            noise: &noise,
            eps: 0.0,
            prev_potential: Some(&v_prev),
            prev_dt: Some(0.01),
        };
        let out = step(&zero, &cfg, &ctx, &g).unwrap();
        assert!(out.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn mec_conserves_mass_and_energy_deterministically() {
        let g = make_uniform_grid(20.0, 0.1).unwrap();
        let sigma = 2.0;
        let u0 = q_state(&g, sigma, 1.0);
        let cfg = SchemeConfig::new(Scheme::Mec, sigma).unwrap();
        let noise = zero_noise(g.n_nodes());
        let m0 = discrete_mass(&u0, &g);
        let h0 = discrete_energy(&u0, &g, sigma);
        let (k0, p0) = discrete_energy_parts(&u0, &g, sigma);
        let scale = k0 + p0;
        let mut u = u0;
        for _ in 0..10 {
            u = step(&u, &cfg, &ctx_free(0.01, &noise), &g).unwrap();
            let m = discrete_mass(&u, &g);
            let h = discrete_energy(&u, &g, sigma);
            assert!((m - m0).abs() < 1e-12 * m0, "mass drift {}", (m - m0).abs());
            assert!((h - h0).abs() < 1e-12 * scale, "energy drift {}", (h - h0).abs());
        }
    }

    #[test]
    fn all_schemes_conserve_mass_with_noise() {
        let g = make_uniform_grid(5.0, 0.1).unwrap();
        let n = g.n_nodes();
        let sigma = 2.0;
        // deterministic pseudo-noise vector
        let noise: Vec<f64> = (0..n).map(|j| ((j * 37 + 11) % 17) as f64 / 3.0 - 2.5).collect();
        let u0 = q_state(&g, sigma, 0.9);
        let m0 = discrete_mass(&u0, &g);
        for scheme in [Scheme::Mec, Scheme::Cn] {
            let cfg = SchemeConfig::new(scheme, sigma).unwrap();
            let ctx = StepContext {
                dt: 0.01,
                dtau: 0.01,
                noise: &noise,
                eps: 0.5,
                prev_potential: None,
                prev_dt: None,
            };
            let u1 = step(&u0, &cfg, &ctx, &g).unwrap();
            let m1 = discrete_mass(&u1, &g);
            assert!((m1 - m0).abs() < 1e-11 * m0, "{scheme:?}: {}", (m1 - m0).abs());
        }
        // LE with a CN bootstrap potential
        let v_prev = potential(&u0.values, sigma);
        let cfg = SchemeConfig::new(Scheme::Le, sigma).unwrap();
        let ctx = StepContext {
            dt: 0.01,
            dtau: 0.01,
            noise: &noise,
            eps: 0.5,
            prev_potential: Some(&v_prev),
            prev_dt: Some(0.01),
        };
        let u1 = step(&u0, &cfg, &ctx, &g).unwrap();
        let m1 = discrete_mass(&u1, &g);
        assert!((m1 - m0).abs() < 1e-11 * m0);
    }

    #[test]
    fn global_phase_gauge_commutes() {
        let g = make_uniform_grid(5.0, 0.1).unwrap();
        let n = g.n_nodes();
        let sigma = 2.0;
        let noise: Vec<f64> = (0..n).map(|j| ((j * 13 + 5) % 23) as f64 / 5.0 - 2.0).collect();
        let theta = 0.7;
        let rot = Complex64::new(math::cos(theta), math::sin(theta));
        let u0 = q_state(&g, sigma, 0.95);
        let u0_rot = State::new(u0.values.iter().map(|z| z * rot).collect());
        for scheme in [Scheme::Mec, Scheme::Cn] {
            let cfg = SchemeConfig::new(scheme, sigma).unwrap();
            let ctx = StepContext {
                dt: 0.01,
                dtau: 0.01,
                noise: &noise,
                eps: 0.3,
                prev_potential: None,
                prev_dt: None,
            };
            let a = step(&u0, &cfg, &ctx, &g).unwrap();
            let b = step(&u0_rot, &cfg, &ctx, &g).unwrap();
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert!((x * rot - y).norm() < 1e-12, "{scheme:?}");
            }
        }
    }

    #[test]
    fn even_initial_data_stays_even() {
        let g = make_uniform_grid(5.0, 0.1).unwrap();
        let sigma = 2.0;
        let u0 = q_state(&g, sigma, 1.05);
        let cfg = SchemeConfig::new(Scheme::Mec, sigma).unwrap();
        let noise = zero_noise(g.n_nodes());
        let mut u = u0;
        for _ in 0..20 {
            u = step(&u, &cfg, &ctx_free(0.01, &noise), &g).unwrap();
        }
        let n = g.n_intervals();
        let mut asym = 0.0f64;
        for k in 0..=n / 2 {
            asym = asym.max((u.values[n / 2 - k] - u.values[n / 2 + k]).norm());
        }
        assert!(asym < 1e-10, "asymmetry {asym}");
    }

    #[test]
    fn cn_single_step_matches_dense_oracle_n2() {
        // independent dense fixed-point solve of the 3x3 implicit system
        let g = make_uniform_grid(1.0, 1.0).unwrap();
        let u0 = State::new(vec![c(0.3), Complex64::new(0.9, 0.2), c(-0.4)]);
        let sigma = 2.0;
        let dt = 0.05;
        let cfg = SchemeConfig::new(Scheme::Cn, sigma).unwrap().with_tolerance(1e-14, 200).unwrap();
        let noise = zero_noise(3);
        let ours = step(&u0, &cfg, &ctx_free(dt, &noise), &g).unwrap();

        // dense oracle
        let (sub, diag, sup) = g.d2_coefficients();
        let dense_d2 = |f: &[Complex64]| -> Vec<Complex64> {
            (0..3)
                .map(|j| {
                    let mut v = diag[j] * f[j];
                    if j > 0 {
                        v += sub[j] * f[j - 1];
                    }
                    if j < 2 {
                        v += sup[j] * f[j + 1];
                    }
                    v
                })
                .collect()
        };
        let mut v = u0.values.clone();
        for _ in 0..200 {
            // build A and rhs for frozen potential, solve by Gaussian elimination
            let v_hat: Vec<f64> = u0
                .values
                .iter()
                .zip(v.iter())
                .map(|(a, b)| ((a + b) * 0.5).norm_sqr().powi(2))
                .collect();
            let mut a = [[Complex64::new(0.0, 0.0); 3]; 3];
            let idt = Complex64::new(0.0, 1.0 / dt);
            for j in 0..3 {
                a[j][j] = idt + 0.5 * (diag[j] + v_hat[j]);
                if j > 0 {
                    a[j][j - 1] = c(0.5 * sub[j]);
                }
                if j < 2 {
                    a[j][j + 1] = c(0.5 * sup[j]);
                }
            }
            let lu = dense_d2(&u0.values);
            let mut b: Vec<Complex64> = (0..3)
                .map(|j| idt * u0.values[j] - 0.5 * (lu[j] + v_hat[j] * u0.values[j]))
                .collect();
            // 3x3 Gaussian elimination with partial pivoting
            let mut m = a;
            for col in 0..3 {
                let mut piv = col;
                for r in col + 1..3 {
                    if m[r][col].norm() > m[piv][col].norm() {
                        piv = r;
                    }
                }
                m.swap(col, piv);
                b.swap(col, piv);
                for r in col + 1..3 {
                    let f = m[r][col] / m[col][col];
                    for cc in col..3 {
                        let t = f * m[col][cc];
                        m[r][cc] -= t;
                    }
                    let t = f * b[col];
                    b[r] -= t;
                }
            }
            let mut x = [Complex64::new(0.0, 0.0); 3];
            for r in (0..3).rev() {
                let mut s = b[r];
                for cc in r + 1..3 {
                    s -= m[r][cc] * x[cc];
                }
                x[r] = s / m[r][r];
            }
            let next: Vec<Complex64> = x.to_vec();
            let delta = sup_diff(&next, &v);
            v = next;
            if delta < 1e-15 {
                break;
            }
        }
        for (ours, oracle) in ours.values.iter().zip(v.iter()) {
            assert!((ours - oracle).norm() < 1e-12, "{ours} vs {oracle}");
        }
    }

    #[test]
    fn le_bootstrap_tracks_cn() {
        // one CN step, then LE; |u| trajectories agree to 1e-4 over t in [0,1]
        let g = make_uniform_grid(10.0, 0.1).unwrap();
        let sigma = 2.0;
        let dt = 0.01;
        let steps = 100;
        let noise = zero_noise(g.n_nodes());
        let u0 = q_state(&g, sigma, 0.9);

        let cn_cfg = SchemeConfig::new(Scheme::Cn, sigma).unwrap();
        let mut cn = u0.clone();
        for _ in 0..steps {
            cn = step(&cn, &cn_cfg, &ctx_free(dt, &noise), &g).unwrap();
        }

        let le_cfg = SchemeConfig::new(Scheme::Le, sigma).unwrap();
        let mut prev_pot = potential(&u0.values, sigma);
        let mut le = step(&u0, &cn_cfg, &ctx_free(dt, &noise), &g).unwrap();
        for _ in 1..steps {
            let cur_pot = potential(&le.values, sigma);
            let ctx = StepContext {
                dt,
                dtau: dt,
                noise: &noise,
                eps: 0.0,
                prev_potential: Some(&prev_pot),
                prev_dt: Some(dt),
            };
            le = step(&le, &le_cfg, &ctx, &g).unwrap();
            prev_pot = cur_pot;
        }
        let mut worst = 0.0f64;
        for (a, b) in cn.values.iter().zip(le.values.iter()) {
            worst = worst.max((a.norm() - b.norm()).abs());
        }
        assert!(worst < 1e-4, "sup |.|-difference {worst}");
    }

    #[test]
    fn stratonovich_rhs_reference_values() {
        let zeros = stratonovich_rhs(&[c(1.0)], &[c(3.0)], &[2.0], 0.0);
        assert_eq!(zeros[0], c(0.0));
        let zeros = stratonovich_rhs(&[c(1.0)], &[c(3.0)], &[0.0], 0.5);
        assert_eq!(zeros[0], c(0.0));
        let v = stratonovich_rhs(&[c(1.0)], &[c(3.0)], &[2.0], 0.5);
        assert_eq!(v[0], c(2.0));
    }

    #[test]
    fn mec_coefficient_matches_quotient_form() {
        // integer sigma: polynomial sum equals the quotient whenever the
        // denominator is well separated from zero
        let mut worst = 0.0f64;
        for i in 0..200 {
            let ro = 0.1 + (i as f64) * 0.017;
            let rn = 0.1 + ((i * 7 + 3) % 200) as f64 * 0.013;
            if (rn - ro).abs() <= 1e-8 {
                continue;
            }
            for sigma in [2.0f64, 3.0] {
                let poly = mec_coefficient(ro, rn, sigma);
                let quot = (rn.powf(sigma + 1.0) - ro.powf(sigma + 1.0)) / ((sigma + 1.0) * (rn - ro));
                worst = worst.max((poly - quot).abs() / quot.abs());
            }
        }
        assert!(worst < 1e-10, "worst relative difference {worst}");
    }

    #[test]
    fn mec_coefficient_degenerate_point_is_finite() {
        let v = mec_coefficient(0.7, 0.7, 2.0);
        assert!((v - 0.7f64.powi(2)).abs() < 1e-15);
        let v = mec_coefficient(0.7, 0.7, 2.5);
        assert!((v - 0.7f64.powf(2.5)).abs() < 1e-12);
    }

    #[test]
    fn newton_fallback_rescues_noncontractive_steps() {
        let g = make_uniform_grid(5.0, 0.1).unwrap();
        let sigma = 2.0;
        // large amplitude and large dt: the Picard iteration cannot
        // contract, the Newton fallback still solves the implicit relation
        let u0 = State::from_fn(&g, |x| c(6.0 * math::exp(-x * x)));
        let cfg = SchemeConfig::new(Scheme::Mec, sigma).unwrap().with_tolerance(1e-12, 8).unwrap();
        let noise = zero_noise(g.n_nodes());
        let m0 = discrete_mass(&u0, &g);
        let u1 = step(&u0, &cfg, &ctx_free(0.5, &noise), &g).unwrap();
        let m1 = discrete_mass(&u1, &g);
        assert!((m1 - m0).abs() < 1e-10 * m0, "mass drift {}", (m1 - m0).abs());
    }

    #[test]
    fn non_finite_input_is_an_overflow_error() {
        let g = make_uniform_grid(5.0, 0.1).unwrap();
        let mut u0 = State::from_fn(&g, |x| c(math::exp(-x * x)));
        u0.values[3] = Complex64::new(f64::NAN, 0.0);
        let cfg = SchemeConfig::new(Scheme::Mec, 2.0).unwrap().with_tolerance(1e-12, 8).unwrap();
        let noise = zero_noise(g.n_nodes());
        let err = step(&u0, &cfg, &ctx_free(0.01, &noise), &g).unwrap_err();
        assert!(
            matches!(err, Error::FixedPointDiverged { .. } | Error::Overflow | Error::SolveResidual { .. }),
            "unexpected error {err:?}"
        );
    }
}
