//! The four subcommands: `evolve`, `sweep`, `blowup`, `noise-check`.
//!
//! Each consumes a validated [`RunConfig`](crate::config::RunConfig) and
//! writes its datasets as CSV into the output directory.

use std::io;
use std::path::Path;

use snls_core::bounds::{self, BoundInputs};
use snls_core::error::Error as CoreError;
use snls_core::grid::Grid;
use snls_core::noise::{
    build_covariance, homogeneous_covariance, hs_norm_diagnostics, sample_noise_vector,
    FactorRepr, NoiseModel,
};
use snls_core::observables::{discrete_energy, discrete_mass};
use snls_core::rng::NoiseStream;
use snls_core::schemes::Scheme;

use crate::config::{ConfigError, RunConfig};
use crate::csvio::{write_table, Cell};
use crate::montecarlo::{
    blowup_dynamics_run, center_statistics, run_energy_ensemble, run_evolve, run_indexed,
    run_sweep, Classification, RunMode,
};

/// Command failure, mapped to the process exit codes.
#[derive(Debug)]
pub enum CmdError {
    /// Exit code 2.
    Config(ConfigError),
    /// Exit code 3.
    Numerical(String),
    /// Exit code 3.
    Io(io::Error),
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e)
    }
}

impl From<CoreError> for CmdError {
    fn from(e: CoreError) -> Self {
        CmdError::Numerical(e.to_string())
    }
}

impl From<io::Error> for CmdError {
    fn from(e: io::Error) -> Self {
        CmdError::Io(e)
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(e) => write!(f, "{e}"),
            CmdError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CmdError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

fn is_uniform(grid: &Grid) -> bool {
    let dx = grid.spacings()[0];
    grid.spacings().iter().all(|&h| (h - dx).abs() <= 1e-12 * dx)
}

/// Theoretical energy bounds at time `t` for the configured model, when the
/// grid is uniform; `None` otherwise.
fn bounds_at(
    model: &NoiseModel,
    grid: &Grid,
    h0: f64,
    m0: f64,
    dt: f64,
    t: f64,
) -> Option<(f64, f64)> {
    if t <= 0.0 || !is_uniform(grid) {
        return None;
    }
    let dx = grid.spacings()[0];
    let inputs = BoundInputs { h0, m0, dx, dt, l_c: grid.half_length(), eps: model.epsilon, t };
    if model.kind.is_diagonal() {
        bounds::qwiener_energy_bound(&inputs, model).ok().map(|b| (b.instantaneous, b.maximal))
    } else {
        let delta = bounds::delta_for_model(model, dx).ok()?;
        bounds::homogeneous_energy_bound(&inputs, model, delta)
            .ok()
            .map(|b| (b.instantaneous, b.maximal))
    }
    .filter(|(i, m)| i.is_finite() && m.is_finite())
}

/// `evolve`: a fixed-step run (or trial ensemble) that writes
/// `timeseries.csv` and `summary.csv`, plus `mean_energy.csv` with the
/// theoretical bounds when more than one trial is requested.
pub fn cmd_evolve(config: &RunConfig, out: &Path) -> Result<(), CmdError> {
    let spec = config.experiment_fixed_step(Scheme::Mec, 0.01, 100.0, (20.0, 0.1))?;
    let beta = spec.betas[0];
    let eps = spec.epsilons[0];

    let record = run_evolve(&spec, beta, eps, 0, 0)?;
    let s = &record.series;
    let rows: Vec<Vec<Cell>> = (0..s.len())
        .map(|i| {
            vec![
                s.t[i].into(),
                s.tau[i].into(),
                s.mass[i].into(),
                s.trap_mass[i].into(),
                s.energy[i].into(),
                s.sup_norm[i].into(),
                s.grad_norm[i].into(),
                if s.l[i].is_finite() { s.l[i] } else { 0.0 }.into(),
                if s.a[i].is_finite() { s.a[i] } else { 0.0 }.into(),
            ]
        })
        .collect();
    write_table(
        out,
        "timeseries.csv",
        &["t", "tau", "mass", "trap_mass", "energy", "sup_norm", "grad_norm", "L", "a"],
        &rows,
    )?;

    let final_energy = *s.energy.last().unwrap();
    write_table(
        out,
        "summary.csv",
        &["mass_error", "final_energy", "classification"],
        &[vec![
            record.mass_error.into(),
            final_energy.into(),
            record.classification.as_str().into(),
        ]],
    )?;

    if spec.trials > 1 {
        let ens = run_energy_ensemble(&spec, beta, eps)?;
        let grid = spec.grid.build()?;
        let u0 = spec.ic.sample(&grid, spec.sigma);
        let h0 = discrete_energy(&u0, &grid, spec.sigma);
        let m0 = discrete_mass(&u0, &grid);
        let model = NoiseModel::new(spec.family.kind(beta), eps)
            .map_err(|e| CmdError::Numerical(e.to_string()))?;
        let RunMode::Classification { dt, .. } = spec.mode else { unreachable!() };
        let with_bounds = bounds_at(&model, &grid, h0, m0, dt, *ens.t.last().unwrap())
            .is_some();
        let mut rows: Vec<Vec<Cell>> = Vec::new();
        for i in 0..ens.t.len() {
            let mut row: Vec<Cell> = vec![
                ens.t[i].into(),
                ens.mean_energy[i].into(),
                ens.mean_running_max[i].into(),
            ];
            if with_bounds {
                let (bi, bm) = bounds_at(&model, &grid, h0, m0, dt, ens.t[i].max(dt))
                    .unwrap_or((f64::MAX, f64::MAX));
                row.push(bi.into());
                row.push(bm.into());
            }
            rows.push(row);
        }
        let header: Vec<&str> = if with_bounds {
            vec!["t", "mean_energy", "mean_running_max", "bound_instantaneous", "bound_maximal"]
        } else {
            vec!["t", "mean_energy", "mean_running_max"]
        };
        write_table(out, "mean_energy.csv", &header, &rows)?;
    }
    Ok(())
}

/// `sweep`: blow-up probability over the (β, ε) grid, written to
/// `sweep.csv`. The default mesh is the preset-refined sweep grid.
pub fn cmd_sweep(config: &RunConfig, out: &Path) -> Result<(), CmdError> {
    let mut config = config.clone();
    if config.get("grid.kind").is_none() {
        config.set("grid.kind", "preset");
    }
    if config.get("ic.amplitude").is_none() {
        config.set("ic.amplitude", "1.05");
    }
    let spec = config.experiment_fixed_step(Scheme::Le, 0.05, 5.0, (10.0, 0.1))?;
    let cells = run_sweep(&spec)?;
    let rows: Vec<Vec<Cell>> = cells
        .iter()
        .map(|c| {
            vec![
                c.beta.into(),
                c.epsilon.into(),
                c.trials.into(),
                c.blowups.into(),
                c.failed.into(),
                c.probability.into(),
                c.ci_halfwidth.into(),
            ]
        })
        .collect();
    write_table(
        out,
        "sweep.csv",
        &["beta", "epsilon", "trials", "blowups", "failed", "probability", "ci_halfwidth"],
        &rows,
    )?;
    Ok(())
}

/// `blowup`: dynamics-mode trials with rate traces (`rate_<k>.csv`), the
/// first blow-up profile (`profile.csv`), the centers (`centers.csv`) and,
/// with at least two blow-ups, their statistics (`stats.csv`).
pub fn cmd_blowup(config: &RunConfig, out: &Path) -> Result<(), CmdError> {
    let spec = config.experiment_dynamics()?;
    let beta = spec.betas[0];
    let eps = spec.epsilons[0];
    let outcomes = run_indexed(spec.trials, |trial| {
        let r = blowup_dynamics_run(&spec, beta, eps, trial);
        eprintln!("trial {trial}: {}", match &r {
            Ok(o) => o.classification.as_str(),
            Err(_) => "error",
        });
        r
    });
    let outcomes: Vec<_> = outcomes
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CmdError::Numerical(e.to_string()))?;

    let mut center_rows: Vec<Vec<Cell>> = Vec::new();
    let mut wrote_profile = false;
    for (k, o) in outcomes.iter().enumerate() {
        if let Some(rate) = &o.rate {
            let rows: Vec<Vec<Cell>> = (0..rate.log_l.len())
                .map(|i| {
                    vec![
                        rate.log_l[i].into(),
                        rate.log_tmt[i].into(),
                        if rate.a[i].is_finite() { rate.a[i] } else { 0.0 }.into(),
                    ]
                })
                .collect();
            write_table(out, &format!("rate_{k:03}.csv"), &["logL", "logTmt", "a"], &rows)?;
        }
        if o.classification == Classification::BlowUp {
            if let (false, Some(p)) = (wrote_profile, &o.profile) {
                let rows: Vec<Vec<Cell>> = (0..p.xi.len())
                    .map(|i| vec![p.xi[i].into(), p.rescaled[i].into(), p.q_ref[i].into()])
                    .collect();
                write_table(out, "profile.csv", &["xi", "rescaled_u", "Q_ref"], &rows)?;
                wrote_profile = true;
            }
            let t = o.rate.as_ref().map(|r| r.fitted_t).or(o.blowup_time).unwrap_or(f64::NAN);
            center_rows.push(vec![
                k.into(),
                o.center.unwrap_or(f64::NAN).into(),
                t.into(),
            ]);
        }
    }
    write_table(out, "centers.csv", &["trial", "x_c", "T"], &center_rows)?;
    if let Ok(stats) = center_statistics(&outcomes) {
        write_table(
            out,
            "stats.csv",
            &["mean", "variance"],
            &[vec![stats.mean.into(), stats.variance.into()]],
        )?;
    }
    Ok(())
}

/// `noise-check`: writes the covariance (`covariance.csv`) and a sampling
/// report (`report.csv`) with the empirical-covariance and max-estimate
/// checks, plus the Hilbert-Schmidt diagnostics for the diagonal models.
pub fn cmd_noise_check(config: &RunConfig, out: &Path) -> Result<(), CmdError> {
    let grid = config.grid_spec(20.0, 0.1)?.build()?;
    let beta = config.f64_or("noise.beta", 0.5)?;
    let eps = config.f64_or("noise.epsilon", 0.5)?;
    let family = config.noise_family()?;
    let model = NoiseModel::new(family.kind(beta), eps)
        .map_err(|e| CmdError::Numerical(e.to_string()))?;
    let draws = config.u64_or("mc.trials", 20_000)? as usize;
    let seed = config.u64_or("mc.seed", 1)?;

    let factor = build_covariance(&model, &grid)?;
    let n = grid.n_nodes();
    let mut report: Vec<Vec<Cell>> = Vec::new();

    match factor.repr() {
        FactorRepr::Diagonal { lambda, .. } => {
            let rows: Vec<Vec<Cell>> = lambda
                .iter()
                .enumerate()
                .map(|(j, &l)| vec![j.into(), l.into()])
                .collect();
            write_table(out, "covariance.csv", &["j", "lambda"], &rows)?;
            let hs = hs_norm_diagnostics(&model, &grid)?;
            report.push(vec!["hs00".into(), hs.hs00.into()]);
            report.push(vec!["hs00_asymptotic".into(), hs.asymptotic00.into()]);
            let mphi = bounds::m_phi_discrete(&model, &grid)?;
            report.push(vec!["m_phi_pointwise".into(), mphi.pointwise.into()]);
            report.push(vec!["m_phi_summed".into(), mphi.summed.into()]);
            report.push(vec!["m_phi_asymptotic".into(), mphi.asymptotic.into()]);
        }
        FactorRepr::Full(l) => {
            let gamma = homogeneous_covariance(&model, &grid)?;
            let mut rows: Vec<Vec<Cell>> = Vec::new();
            for i in 0..n {
                for j in 0..=i {
                    rows.push(vec![i.into(), j.into(), gamma.get(i, j).into()]);
                }
            }
            write_table(out, "covariance.csv", &["j", "k", "gamma"], &rows)?;
            let rec = snls_core::linalg::reconstruction_error(l, &gamma);
            report.push(vec!["cholesky_reconstruction_error".into(), rec.into()]);

            // empirical covariance of sqrt(dt) f over `draws` samples
            let mut stream = NoiseStream::new(seed, 0);
            let mut acc = vec![0.0f64; n * (n + 1) / 2];
            let mut max_abs = vec![0.0f64; n];
            let mut sum_max = 0.0;
            for _ in 0..draws {
                let f = sample_noise_vector(&factor, &mut stream, 1.0, &grid)?;
                let mut idx = 0;
                let mut m = 0.0f64;
                for i in 0..n {
                    for j in 0..=i {
                        acc[idx] += f[i] * f[j];
                        idx += 1;
                    }
                    max_abs[i] = max_abs[i].max(f[i].abs());
                    m = m.max(f[i].abs());
                }
                sum_max += m;
            }
            let mut worst = 0.0f64;
            let mut within = 0usize;
            let mut total = 0usize;
            let mut idx = 0;
            for i in 0..n {
                for j in 0..=i {
                    let emp = acc[idx] / draws as f64;
                    let truth = gamma.get(i, j);
                    let se = ((gamma.get(i, i) * gamma.get(j, j) + truth * truth)
                        / draws as f64)
                        .sqrt();
                    let dev = (emp - truth).abs();
                    worst = worst.max(dev);
                    if dev <= 3.0 * se {
                        within += 1;
                    }
                    total += 1;
                    idx += 1;
                }
            }
            report.push(vec!["empirical_cov_max_abs_error".into(), worst.into()]);
            report.push(vec![
                "empirical_cov_within_3se_fraction".into(),
                (within as f64 / total as f64).into(),
            ]);
            let delta = gamma.max_diagonal().sqrt();
            let pisier_rhs = delta * (2.0 * ((2 * n) as f64).ln()).sqrt();
            report.push(vec!["pisier_empirical_mean_max".into(), (sum_max / draws as f64).into()]);
            report.push(vec!["pisier_bound".into(), pisier_rhs.into()]);
        }
    }
    write_table(out, "report.csv", &["key", "value"], &report)?;
    Ok(())
}
