//! Flat `key = value` configuration files.
//!
//! The format is UTF-8 lines of `key = value` with `#` comments and blank
//! lines; keys are namespaced (`grid.dx`, `noise.kind`, `mc.trials`, …).
//! Unknown keys are rejected, every value is range-checked, and all
//! defaults follow the reference experiment setups.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use snls_core::refine::{InterpolationMode, RefinePolicy};
use snls_core::schemes::Scheme;

use crate::montecarlo::{
    ExperimentSpec, GridSpec, InitialCondition, NoiseFamily, RunMode,
};

/// Configuration error with the offending key path.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { key: key.to_string(), message: message.into() }
}

/// Every key the parser accepts, with its documentation line.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("sigma", "nonlinearity power sigma >= 2 (default 2)"),
    ("scheme", "mec | cn | le (default le for sweeps, mec otherwise)"),
    ("scheme.tol", "fixed-point tolerance (default 1e-12)"),
    ("scheme.max_iters", "fixed-point iteration budget (default 100)"),
    ("ic.kind", "ground_state | gaussian (default ground_state)"),
    ("ic.amplitude", "initial-condition amplitude (default 1)"),
    ("grid.kind", "uniform | preset (default uniform)"),
    ("grid.lc", "half-length of the computational box (default 20)"),
    ("grid.dx", "outer grid spacing (default 0.1)"),
    ("grid.core_half_width", "preset grid: refined core half-width (default 1)"),
    ("grid.refine_factor", "preset grid: core refinement factor (default 16)"),
    ("noise.kind", "gaussian_decay | polynomial_decay | riesz | exponential"),
    ("noise.beta", "correlation parameter beta (default 0.5)"),
    ("noise.epsilon", "noise strength epsilon >= 0 (default 0)"),
    ("noise.n", "polynomial-decay exponent n >= 1 (default 2)"),
    ("noise.riesz_unscaled", "experimental: drop the Riesz prefactor (default false)"),
    ("time.dt", "fixed time step (default 0.01 for evolve, 0.05 for sweep)"),
    ("time.horizon", "fixed-step horizon (default 100 for evolve, 5 for sweep)"),
    ("mc.trials", "trials per cell (default 1)"),
    ("mc.seed", "master seed (default 1)"),
    ("mc.blowup_factor", "amplitude multiple that flags blow-up (default 5)"),
    ("mc.record_stride", "record every k-th step (default 1)"),
    ("sweep.betas", "comma-separated beta list for sweeps"),
    ("sweep.epsilons", "comma-separated epsilon list for sweeps"),
    ("dynamics.dt0", "base adaptive step (default 0.002)"),
    ("dynamics.sup_stop", "stop when sup|u|^sigma reaches this (default 1e10)"),
    ("dynamics.refine_trigger", "refine when the core spans fewer cells (default 20)"),
    ("dynamics.refine_factor", "cell split factor on refinement (default 2)"),
    ("dynamics.core_selector", "fraction of peak delimiting the core (default 0.5)"),
    ("dynamics.interpolation", "magnitude_phase | real_imag (default magnitude_phase)"),
    ("dynamics.max_steps", "step budget for dynamics runs (default 5000000)"),
    ("dynamics.tau_max", "rescaled-time budget for dynamics runs (default 500)"),
    ("profile.xi_max", "half-width of the profile window (default 4)"),
    ("profile.samples", "profile sample count (default 161)"),
];

/// Parsed, validated key-value document.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(
                    &format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{raw}`"),
                ));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
                return Err(err(&key, "unknown key"));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(err(&key, "duplicate key"));
            }
        }
        Ok(RunConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(&path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse::<f64>().map_err(|_| err(key, format!("not a number: `{v}`"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse::<u64>().map_err(|_| err(key, format!("not an integer: `{v}`"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => Err(err(key, format!("expected true/false, got `{v}`"))),
        }
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    out.push(
                        part.parse::<f64>()
                            .map_err(|_| err(key, format!("not a number: `{part}`")))?,
                    );
                }
                if out.is_empty() {
                    return Err(err(key, "empty list"));
                }
                Ok(out)
            }
        }
    }

    fn range(&self, key: &str, v: f64, lo: f64, hi: f64) -> Result<f64, ConfigError> {
        if v >= lo && v <= hi {
            Ok(v)
        } else {
            Err(err(key, format!("value {v} outside [{lo}, {hi}]")))
        }
    }

    pub fn scheme(&self, default: Scheme) -> Result<Scheme, ConfigError> {
        match self.get("scheme") {
            None => Ok(default),
            Some("mec") => Ok(Scheme::Mec),
            Some("cn") => Ok(Scheme::Cn),
            Some("le") => Ok(Scheme::Le),
            Some(v) => Err(err("scheme", format!("expected mec|cn|le, got `{v}`"))),
        }
    }

    pub fn noise_family(&self) -> Result<NoiseFamily, ConfigError> {
        match self.get("noise.kind") {
            None | Some("gaussian_decay") => Ok(NoiseFamily::GaussianDecay),
            Some("polynomial_decay") => {
                let n = self.f64_or("noise.n", 2.0)?;
                if n < 1.0 {
                    return Err(err("noise.n", "must be >= 1"));
                }
                Ok(NoiseFamily::PolynomialDecay { n })
            }
            Some("riesz") => {
                Ok(NoiseFamily::Riesz { unscaled: self.bool_or("noise.riesz_unscaled", false)? })
            }
            Some("exponential") => Ok(NoiseFamily::Exponential),
            Some(v) => Err(err("noise.kind", format!("unknown noise kind `{v}`"))),
        }
    }

    pub fn initial_condition(&self) -> Result<InitialCondition, ConfigError> {
        let amplitude = self.f64_or("ic.amplitude", 1.0)?;
        if !(amplitude > 0.0) {
            return Err(err("ic.amplitude", "must be positive"));
        }
        match self.get("ic.kind") {
            None | Some("ground_state") => Ok(InitialCondition::GroundState { amplitude }),
            Some("gaussian") => Ok(InitialCondition::Gaussian { amplitude }),
            Some(v) => Err(err("ic.kind", format!("unknown initial condition `{v}`"))),
        }
    }

    pub fn grid_spec(&self, default_lc: f64, default_dx: f64) -> Result<GridSpec, ConfigError> {
        let l_c = self.f64_or("grid.lc", default_lc)?;
        let dx = self.f64_or("grid.dx", default_dx)?;
        self.range("grid.lc", l_c, 1e-6, 1e6)?;
        self.range("grid.dx", dx, 1e-9, 1.0)?;
        match self.get("grid.kind") {
            None | Some("uniform") => Ok(GridSpec::Uniform { l_c, dx }),
            Some("preset") => {
                let core = self.f64_or("grid.core_half_width", 1.0)?;
                let factor = self.u64_or("grid.refine_factor", 16)? as u32;
                if !(core > 0.0 && core < l_c) {
                    return Err(err("grid.core_half_width", "must lie in (0, L_c)"));
                }
                if factor < 1 {
                    return Err(err("grid.refine_factor", "must be >= 1"));
                }
                Ok(GridSpec::PresetRefined {
                    l_c,
                    dx_outer: dx,
                    core_half_width: core,
                    refine_factor: factor,
                })
            }
            Some(v) => Err(err("grid.kind", format!("unknown grid kind `{v}`"))),
        }
    }

    pub fn refine_policy(&self) -> Result<RefinePolicy, ConfigError> {
        let interpolation = match self.get("dynamics.interpolation") {
            None | Some("magnitude_phase") => InterpolationMode::MagnitudePhase,
            Some("real_imag") => InterpolationMode::RealImag,
            Some(v) => {
                return Err(err("dynamics.interpolation", format!("unknown mode `{v}`")))
            }
        };
        let policy = RefinePolicy {
            dt0: self.f64_or("dynamics.dt0", 0.002)?,
            sup_stop: self.f64_or("dynamics.sup_stop", 1e10)?,
            refine_trigger_ratio: self.f64_or("dynamics.refine_trigger", 20.0)?,
            refine_factor: self.u64_or("dynamics.refine_factor", 2)? as usize,
            core_selector: self.f64_or("dynamics.core_selector", 0.5)?,
            dynamic_refinement: true,
            interpolation,
        };
        policy.validate().map_err(|e| err("dynamics", e.to_string()))?;
        Ok(policy)
    }

    /// Assembles the experiment for the `evolve` and `sweep` commands
    /// (fixed-step classification mode).
    pub fn experiment_fixed_step(
        &self,
        default_scheme: Scheme,
        default_dt: f64,
        default_horizon: f64,
        default_grid: (f64, f64),
    ) -> Result<ExperimentSpec, ConfigError> {
        let sigma = self.f64_or("sigma", 2.0)?;
        self.range("sigma", sigma, 2.0, 16.0)?;
        let dt = self.f64_or("time.dt", default_dt)?;
        self.range("time.dt", dt, 1e-9, 1.0)?;
        let horizon = self.f64_or("time.horizon", default_horizon)?;
        self.range("time.horizon", horizon, dt, 1e9)?;
        let tol = self.f64_or("scheme.tol", 1e-12)?;
        let iters = self.u64_or("scheme.max_iters", 100)? as usize;
        let spec = ExperimentSpec {
            sigma,
            scheme: self.scheme(default_scheme)?,
            fixed_point_tol: tol,
            fixed_point_max_iters: iters.max(1),
            ic: self.initial_condition()?,
            grid: self.grid_spec(default_grid.0, default_grid.1)?,
            family: self.noise_family()?,
            betas: self.f64_list_or("sweep.betas", &[self.f64_or("noise.beta", 0.5)?])?,
            epsilons: self
                .f64_list_or("sweep.epsilons", &[self.f64_or("noise.epsilon", 0.0)?])?,
            trials: self.u64_or("mc.trials", 1)? as usize,
            blowup_factor: self.f64_or("mc.blowup_factor", 5.0)?,
            master_seed: self.u64_or("mc.seed", 1)?,
            record_stride: self.u64_or("mc.record_stride", 1)?.max(1) as usize,
            mode: RunMode::Classification { dt, horizon },
            max_steps: self.u64_or("dynamics.max_steps", 5_000_000)?,
            tau_max: self.f64_or("dynamics.tau_max", 500.0)?,
            profile_xi_max: self.f64_or("profile.xi_max", 4.0)?,
            profile_samples: self.u64_or("profile.samples", 161)?.max(3) as usize,
        };
        spec.validate().map_err(|e| err("(spec)", e.to_string()))?;
        Ok(spec)
    }

    /// Assembles the experiment for the `blowup` command (dynamics mode).
    pub fn experiment_dynamics(&self) -> Result<ExperimentSpec, ConfigError> {
        let sigma = self.f64_or("sigma", 2.0)?;
        self.range("sigma", sigma, 2.0, 16.0)?;
        let policy = self.refine_policy()?;
        let tol = self.f64_or("scheme.tol", 1e-12)?;
        let iters = self.u64_or("scheme.max_iters", 100)? as usize;
        let mut cfg = RunConfig { values: self.values.clone() };
        if cfg.get("ic.kind").is_none() {
            cfg.set("ic.kind", "gaussian");
        }
        if cfg.get("ic.amplitude").is_none() {
            cfg.set("ic.amplitude", "3");
        }
        let spec = ExperimentSpec {
            sigma,
            scheme: self.scheme(Scheme::Mec)?,
            fixed_point_tol: tol,
            fixed_point_max_iters: iters.max(1),
            ic: cfg.initial_condition()?,
            grid: self.grid_spec(5.0, 0.05)?,
            family: self.noise_family()?,
            betas: vec![self.f64_or("noise.beta", 0.5)?],
            epsilons: vec![self.f64_or("noise.epsilon", 0.0)?],
            trials: self.u64_or("mc.trials", 1)? as usize,
            blowup_factor: self.f64_or("mc.blowup_factor", 5.0)?,
            master_seed: self.u64_or("mc.seed", 1)?,
            record_stride: self.u64_or("mc.record_stride", 5)?.max(1) as usize,
            mode: RunMode::Dynamics { policy },
            max_steps: self.u64_or("dynamics.max_steps", 5_000_000)?,
            tau_max: self.f64_or("dynamics.tau_max", 500.0)?,
            profile_xi_max: self.f64_or("profile.xi_max", 4.0)?,
            profile_samples: self.u64_or("profile.samples", 161)?.max(3) as usize,
        };
        spec.validate().map_err(|e| err("(spec)", e.to_string()))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let cfg = RunConfig::parse(
            "# a comment\nsigma = 3\nnoise.kind = riesz # trailing\n\nmc.trials = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.get("sigma"), Some("3"));
        assert_eq!(cfg.get("mc.trials"), Some("10"));
        assert!(matches!(cfg.noise_family().unwrap(), NoiseFamily::Riesz { unscaled: false }));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let e = RunConfig::parse("grid.dy = 0.1\n").unwrap_err();
        assert_eq!(e.key, "grid.dy");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(RunConfig::parse("sigma = 2\nsigma = 3\n").is_err());
    }

    #[test]
    fn range_violations_carry_the_key_path() {
        let cfg = RunConfig::parse("sigma = 1.0\n").unwrap();
        let e = cfg
            .experiment_fixed_step(Scheme::Mec, 0.01, 1.0, (20.0, 0.1))
            .unwrap_err();
        assert_eq!(e.key, "sigma");
    }

    #[test]
    fn beta_epsilon_lists() {
        let cfg = RunConfig::parse("sweep.betas = 0.1, 0.5 ,0.9\nsweep.epsilons = 0.2\n").unwrap();
        let spec = cfg
            .experiment_fixed_step(Scheme::Le, 0.05, 5.0, (10.0, 0.1))
            .unwrap();
        assert_eq!(spec.betas, vec![0.1, 0.5, 0.9]);
        assert_eq!(spec.epsilons, vec![0.2]);
    }

    #[test]
    fn empty_beta_list_is_a_validation_error() {
        let cfg = RunConfig::parse("sweep.betas = ,\n").unwrap();
        assert!(cfg
            .experiment_fixed_step(Scheme::Le, 0.05, 5.0, (10.0, 0.1))
            .is_err());
    }

    #[test]
    fn dynamics_defaults_follow_the_blowup_setup() {
        let cfg = RunConfig::parse("").unwrap();
        let spec = cfg.experiment_dynamics().unwrap();
        assert!(matches!(spec.ic, InitialCondition::Gaussian { amplitude } if amplitude == 3.0));
        assert!(matches!(spec.grid, GridSpec::Uniform { l_c, dx } if l_c == 5.0 && dx == 0.05));
        let RunMode::Dynamics { policy } = spec.mode else { panic!() };
        assert_eq!(policy.dt0, 0.002);
        assert_eq!(policy.sup_stop, 1e10);
    }
}
