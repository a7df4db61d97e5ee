//! Closed-form upper bounds for the expected instantaneous and maximal
//! discrete energy, evaluated with exact finite sums for comparison against
//! Monte Carlo means.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math;
use crate::noise::{NoiseKind, NoiseModel};

/// `1 + sqrt(2e)/sqrt(pi)`, the constant of the Gaussian-max estimate
/// `E max_k γ_k |G_k| <= (1 + sqrt(2e)/sqrt(pi)) Σ γ_k`.
pub const GAUSSIAN_MAX_CONSTANT: f64 = 2.3154892469589138;

/// `C = (sqrt(3)/2) (1 + sqrt(2e)/sqrt(pi))` from the diagonal energy bound.
pub const ENERGY_BOUND_CONSTANT: f64 = 2.0052725100561191;

/// Inputs shared by the energy bounds: initial discrete energy and mass,
/// the uniform meshes, the noise strength and the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub h0: f64,
    pub m0: f64,
    pub dx: f64,
    pub dt: f64,
    pub l_c: f64,
    pub eps: f64,
    pub t: f64,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0 && self.dt > 0.0 && self.t > 0.0 && self.l_c > 0.0) {
            return Err(Error::Config("bound inputs need positive dx, dt, t, L_c"));
        }
        if self.eps < 0.0 {
            return Err(Error::Config("bound inputs need eps >= 0"));
        }
        Ok(())
    }
}

/// Instantaneous and maximal energy bounds; the closed-form fields carry the
/// integral-estimate variants where one exists for the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBound {
    pub instantaneous: f64,
    pub maximal: f64,
    pub instantaneous_closed_form: Option<f64>,
    pub maximal_closed_form: Option<f64>,
}

/// Energy bound for the diagonal (eigenvalue) models:
/// `H0 + (ε/2 or ε) · M0 · C / (√Δx Δt^{3/2}) · [√Φ(0) + 2 Σ √Φ(jΔx)] · t`,
/// using the exact finite sum; the closed-form variant substitutes the
/// integral estimate of the sum where the model provides one.
pub fn qwiener_energy_bound(inputs: &BoundInputs, model: &NoiseModel) -> Result<EnergyBound> {
    inputs.validate()?;
    if !model.kind.is_diagonal() {
        return Err(Error::UnsupportedDiagnostic(
            "the Q-Wiener energy bound applies to the diagonal models",
        ));
    }
    let n_half = math::round(inputs.l_c / inputs.dx);
    if math::abs(inputs.l_c / inputs.dx - n_half) > 1e-9 * n_half.max(1.0) {
        return Err(Error::Config("L_c / dx must be integral for the bound sums"));
    }
    let n_half = n_half as u64;
    let mut sum = 0.0;
    for j in 1..=n_half {
        sum += math::sqrt(model.kind.eigenvalue(j as f64 * inputs.dx));
    }
    let bracket = math::sqrt(model.kind.eigenvalue(0.0)) + 2.0 * sum;
    let unit = inputs.m0 * ENERGY_BOUND_CONSTANT
        / (math::sqrt(inputs.dx) * inputs.dt * math::sqrt(inputs.dt))
        * inputs.t;
    let instantaneous = inputs.h0 + 0.5 * inputs.eps * unit * bracket;
    let maximal = inputs.h0 + inputs.eps * unit * bracket;

    let bracket_cf = match model.kind {
        NoiseKind::GaussianDecay { beta } if beta < 1.0 => {
            Some(1.0 + math::sqrt(2.0 * core::f64::consts::PI) / (inputs.dx * math::sqrt(1.0 - beta)))
        }
        NoiseKind::PolynomialDecay { beta, n } if n * (1.0 - beta) > 2.0 => {
            Some(1.0 + 4.0 / ((n * (1.0 - beta) - 2.0) * inputs.dx))
        }
        _ => None,
    };
    let (icf, mcf) = match bracket_cf {
        Some(b) => (
            Some(inputs.h0 + 0.5 * inputs.eps * unit * b),
            Some(inputs.h0 + inputs.eps * unit * b),
        ),
        None => (None, None),
    };
    Ok(EnergyBound {
        instantaneous,
        maximal,
        instantaneous_closed_form: icf,
        maximal_closed_form: mcf,
    })
}

/// Diagonal bound `δ` for the homogeneous models on a uniform mesh:
/// `δ = Δx^{-β/2}` for the Riesz kernel and the Taylor-bracket root for the
/// exponential kernel.
pub fn delta_for_model(model: &NoiseModel, dx: f64) -> Result<f64> {
    if !(dx > 0.0) {
        return Err(Error::Config("delta needs dx > 0"));
    }
    match model.kind {
        NoiseKind::Riesz { beta, .. } => Ok(math::powf(dx, -0.5 * beta)),
        NoiseKind::Exponential { beta } => {
            let z = beta * dx;
            Ok(math::sqrt(1.0 - z / 3.0 + z * z / 12.0))
        }
        _ => Err(Error::UnsupportedDiagnostic("delta is defined for the homogeneous models")),
    }
}

/// Energy bound for the homogeneous models:
/// `H0 + (ε/√2 or √2 ε) · M0 · δ · √(ln(4 L_c) + |ln Δx|) / Δt^{3/2} · t`
/// for `Δx ∈ (0, 1)`; `δ²` must dominate the covariance diagonal.
pub fn homogeneous_energy_bound(
    inputs: &BoundInputs,
    model: &NoiseModel,
    delta: f64,
) -> Result<EnergyBound> {
    inputs.validate()?;
    if model.kind.is_diagonal() {
        return Err(Error::UnsupportedDiagnostic(
            "the homogeneous energy bound applies to the Riesz and exponential models",
        ));
    }
    if !(inputs.dx < 1.0) {
        return Err(Error::Config("the homogeneous bound is stated for dx in (0, 1)"));
    }
    if !(delta > 0.0) {
        return Err(Error::Config("delta must be positive"));
    }
    let root = math::sqrt(math::ln(4.0 * inputs.l_c) + math::abs(math::ln(inputs.dx)));
    let unit = inputs.m0 * delta * root / (inputs.dt * math::sqrt(inputs.dt)) * inputs.t;
    let sqrt2 = math::sqrt(2.0);
    Ok(EnergyBound {
        instantaneous: inputs.h0 + inputs.eps / sqrt2 * unit,
        maximal: inputs.h0 + sqrt2 * inputs.eps * unit,
        instantaneous_closed_form: None,
        maximal_closed_form: None,
    })
}

/// Discrete views of `m_φ = sup_x Σ_j λ_j |∇(φ e_j)(x)|²` for the diagonal
/// models, alongside the closed-form asymptote.
///
/// With disjoint hat supports the pointwise sum collapses to a single term,
/// so the sup is `max_j λ_j c²`; the asymptote instead estimates the summed
/// bound `Σ_j λ_j sup |e_j'|²`. Both are reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MPhiDiagnostics {
    /// `max_x Σ_j λ_j |e_j'(x)|²` evaluated on the half-cell pieces.
    pub pointwise: f64,
    /// `Σ_j λ_j sup_x |e_j'(x)|²`.
    pub summed: f64,
    /// Closed-form asymptote for the model (the summed form).
    pub asymptotic: f64,
}

/// Pointwise sup and summed bound of `Σ_j λ_j |e_j'(x)|²` for an arbitrary
/// eigenvalue sequence; the hat supports are disjoint, so the pointwise sum
/// has a single term per half-cell.
pub fn m_phi_from_lambdas(lambdas: &[f64], grid: &Grid) -> Result<(f64, f64)> {
    let n = grid.n_intervals();
    if lambdas.len() != n + 1 {
        return Err(Error::LengthMismatch { expected: n + 1, got: lambdas.len() });
    }
    // |g_j'| = c_j = 2 sqrt(3) / dx^{3/2} on each half-cell; e_0 and e_N
    // carry an extra factor sqrt(2).
    let mut pointwise = 0.0f64;
    let mut summed = 0.0;
    for (j, &lambda) in lambdas.iter().enumerate() {
        let dxl = grid.spacing_before(j);
        let dxr = grid.spacing_after(j);
        let c2l = 12.0 / (dxl * dxl * dxl);
        let c2r = 12.0 / (dxr * dxr * dxr);
        let scale = if j == 0 || j == n { 2.0 } else { 1.0 };
        let local = scale * lambda * c2l.max(c2r);
        pointwise = pointwise.max(local);
        summed += local;
    }
    Ok((pointwise, summed))
}

/// Evaluates the `m_φ` diagnostics on a uniform grid.
pub fn m_phi_discrete(model: &NoiseModel, grid: &Grid) -> Result<MPhiDiagnostics> {
    if !model.kind.is_diagonal() {
        return Err(Error::UnsupportedDiagnostic("m_phi diagnostics apply to the diagonal models"));
    }
    let dx0 = grid.spacings()[0];
    for &h in grid.spacings() {
        if math::abs(h - dx0) > 1e-12 * dx0 {
            return Err(Error::UnsupportedDiagnostic("m_phi diagnostics require a uniform grid"));
        }
    }
    let lambdas: alloc::vec::Vec<f64> =
        grid.nodes().iter().map(|&x| model.kind.eigenvalue(x)).collect();
    let (pointwise, summed) = m_phi_from_lambdas(&lambdas, grid)?;
    let l_c = grid.half_length();
    let dx4 = dx0 * dx0 * dx0 * dx0;
    let asymptotic = match model.kind {
        NoiseKind::GaussianDecay { beta } => {
            if beta < 1.0 {
                12.0 / dx4 * math::sqrt(core::f64::consts::PI / (1.0 - beta))
            } else {
                12.0 / dx4 * 2.0 * l_c
            }
        }
        NoiseKind::PolynomialDecay { beta, n } => {
            let a = n * (1.0 - beta);
            if math::abs(a - 1.0) < 1e-12 {
                24.0 * math::ln(l_c + 1.0) / dx4
            } else if a > 1.0 {
                24.0 / (dx4 * (a - 1.0))
            } else {
                24.0 * (math::powf(l_c + 1.0, 1.0 - a) - 1.0) / (dx4 * (1.0 - a))
            }
        }
        _ => unreachable!(),
    };
    Ok(MPhiDiagnostics { pointwise, summed, asymptotic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_uniform_grid;
    use crate::rng::NoiseStream;

    fn inputs() -> BoundInputs {
        BoundInputs { h0: 0.1, m0: 2.2, dx: 0.1, dt: 0.01, l_c: 20.0, eps: 0.5, t: 20.0 }
    }

    #[test]
    fn constants_match_their_definitions() {
        let c = 1.0 + math::sqrt(2.0 * core::f64::consts::E) / math::sqrt(core::f64::consts::PI);
        assert!((GAUSSIAN_MAX_CONSTANT - c).abs() < 1e-15);
        assert!((ENERGY_BOUND_CONSTANT - 0.5 * math::sqrt(3.0) * c).abs() < 1e-15);
    }

    #[test]
    fn zero_eps_returns_initial_energy() {
        let mut inp = inputs();
        inp.eps = 0.0;
        let model = NoiseModel::new(NoiseKind::GaussianDecay { beta: 0.5 }, 0.0).unwrap();
        let b = qwiener_energy_bound(&inp, &model).unwrap();
        assert_eq!(b.instantaneous, inp.h0);
        assert_eq!(b.maximal, inp.h0);
        let model = NoiseModel::new(NoiseKind::riesz(0.5), 0.0).unwrap();
        let b = homogeneous_energy_bound(&inp, &model, 1.0).unwrap();
        assert_eq!(b.instantaneous, inp.h0);
        assert_eq!(b.maximal, inp.h0);
    }

    #[test]
    fn maximal_bound_doubles_the_increment() {
        let inp = inputs();
        let model = NoiseModel::new(NoiseKind::GaussianDecay { beta: 0.5 }, inp.eps).unwrap();
        let b = qwiener_energy_bound(&inp, &model).unwrap();
        let inc = b.instantaneous - inp.h0;
        assert!((b.maximal - inp.h0 - 2.0 * inc).abs() < 1e-9 * inc, "{b:?}");
        let model = NoiseModel::new(NoiseKind::riesz(0.5), inp.eps).unwrap();
        let b = homogeneous_energy_bound(&inp, &model, 1.3).unwrap();
        let inc = b.instantaneous - inp.h0;
        assert!((b.maximal - inp.h0 - 2.0 * inc).abs() < 1e-9 * inc);
    }

    #[test]
    fn finite_sum_is_below_the_integral_estimate() {
        // Gaussian decay, beta = 0.5: sum <= sqrt(2 pi) / (2 dx sqrt(1-beta))
        let inp = inputs();
        let beta = 0.5;
        let model = NoiseModel::new(NoiseKind::GaussianDecay { beta }, inp.eps).unwrap();
        let n_half = (inp.l_c / inp.dx) as u64;
        let mut sum = 0.0;
        for j in 1..=n_half {
            sum += math::sqrt(model.kind.eigenvalue(j as f64 * inp.dx));
        }
        let integral = math::sqrt(2.0 * core::f64::consts::PI)
            / (2.0 * inp.dx * math::sqrt(1.0 - beta));
        assert!(sum <= integral, "{sum} vs {integral}");
        let b = qwiener_energy_bound(&inp, &model).unwrap();
        assert!(b.instantaneous <= b.instantaneous_closed_form.unwrap());
        assert!(b.maximal <= b.maximal_closed_form.unwrap());
    }

    #[test]
    fn delta_reference_values() {
        let riesz = NoiseModel::new(NoiseKind::riesz(0.5), 0.1).unwrap();
        let d = delta_for_model(&riesz, 0.1).unwrap();
        assert!((d - math::powf(0.1, -0.25)).abs() < 1e-14);
        assert!((d - 1.7782794100389228).abs() < 1e-12, "delta {d}");

        let expo = NoiseModel::new(NoiseKind::Exponential { beta: 0.5 }, 0.1).unwrap();
        let d2 = delta_for_model(&expo, 0.1).unwrap();
        let d2sq = d2 * d2;
        assert!(d2sq >= 1.0 - 0.5 * 0.1 / 3.0 && d2sq <= 1.0);
    }

    #[test]
    fn homogeneous_bound_rejects_coarse_mesh() {
        let mut inp = inputs();
        inp.dx = 1.5;
        let model = NoiseModel::new(NoiseKind::riesz(0.5), inp.eps).unwrap();
        assert!(homogeneous_energy_bound(&inp, &model, 1.0).is_err());
    }

    #[test]
    fn bounds_are_monotone_in_t_eps_m0() {
        let base = inputs();
        let model = NoiseModel::new(NoiseKind::GaussianDecay { beta: 0.3 }, base.eps).unwrap();
        let hom = NoiseModel::new(NoiseKind::Exponential { beta: 0.7 }, base.eps).unwrap();
        let b0 = qwiener_energy_bound(&base, &model).unwrap();
        let h0 = homogeneous_energy_bound(&base, &hom, 1.0).unwrap();
        for scale in [1.5, 2.0, 10.0] {
            for field in 0..3 {
                let mut inp = base;
                match field {
                    0 => inp.t *= scale,
                    1 => inp.eps *= scale,
                    _ => inp.m0 *= scale,
                }
                let b = qwiener_energy_bound(&inp, &model).unwrap();
                assert!(b.instantaneous >= b0.instantaneous);
                assert!(b.maximal >= b0.maximal);
                let h = homogeneous_energy_bound(&inp, &hom, 1.0).unwrap();
                assert!(h.instantaneous >= h0.instantaneous);
                assert!(h.maximal >= h0.maximal);
            }
        }
    }

    #[test]
    fn gaussian_max_estimate_holds_empirically() {
        // E max_k gamma_k |G_k| <= (1 + sqrt(2e)/sqrt(pi)) sum gamma_k
        let stream = NoiseStream::new(2024, 0);
        let n = 24usize;
        let gammas: alloc::vec::Vec<f64> =
            (0..n).map(|k| 0.05 + ((k * 31 + 7) % 13) as f64 / 13.0).collect();
        let sum: f64 = gammas.iter().sum();
        let reps = 10_000u64;
        let mut acc = 0.0;
        for r in 0..reps {
            let mut m = 0.0f64;
            for (k, g) in gammas.iter().enumerate() {
                m = m.max(g * math::abs(stream.normal_at(r, k as u64)));
            }
            acc += m;
        }
        let mean = acc / reps as f64;
        assert!(mean <= GAUSSIAN_MAX_CONSTANT * sum, "mean {mean} vs {}", GAUSSIAN_MAX_CONSTANT * sum);
    }

    #[test]
    fn m_phi_reference_values() {
        let g = make_uniform_grid(2.0, 0.5).unwrap();
        let model = NoiseModel::new(NoiseKind::GaussianDecay { beta: 1.0 }, 0.1).unwrap();
        // lambda = 1 everywhere: interior single-term value is 12/dx^3, the
        // endpoints carry the sqrt(2)^2 = 2 factor
        let d = m_phi_discrete(&model, &g).unwrap();
        let c2 = 12.0 / (0.5f64 * 0.5 * 0.5);
        assert!((d.pointwise - 2.0 * c2).abs() < 1e-9 * c2);

        let zerolike = NoiseModel::new(NoiseKind::GaussianDecay { beta: 0.0 }, 0.1).unwrap();
        let g2 = make_uniform_grid(20.0, 0.02).unwrap();
        let d2 = m_phi_discrete(&zerolike, &g2).unwrap();
        let ratio = d2.summed / d2.asymptotic;
        assert!(ratio > 0.5 && ratio < 2.0, "ratio {ratio}");
    }

    #[test]
    fn m_phi_rejects_full_models() {
        let g = make_uniform_grid(1.0, 0.5).unwrap();
        let model = NoiseModel::new(NoiseKind::riesz(0.5), 0.1).unwrap();
        assert!(m_phi_discrete(&model, &g).is_err());
    }

    #[test]
    fn m_phi_vanishes_for_zero_eigenvalues() {
        let g = make_uniform_grid(1.0, 0.25).unwrap();
        let lambdas = alloc::vec![0.0; g.n_nodes()];
        let (p, s) = m_phi_from_lambdas(&lambdas, &g).unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(s, 0.0);
    }
}
