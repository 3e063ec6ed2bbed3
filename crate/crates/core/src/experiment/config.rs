use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, SimParams};
use crate::error::{Error, Result};
use crate::lattice::{ModeLattice, SpectralField};
use crate::noise::{NoiseKind, NoiseSpec, RngStream};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Ensemble,
    EnergyBalance,
    Moments,
    Tails,
    Hitting,
    Lyapunov,
    Convolution,
    Stationary,
    Mixing,
    Squeeze,
    Recurrence,
    Interpolation,
    Validate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 14] = [
        Self::Simulate,
        Self::Ensemble,
        Self::EnergyBalance,
        Self::Moments,
        Self::Tails,
        Self::Hitting,
        Self::Lyapunov,
        Self::Convolution,
        Self::Stationary,
        Self::Mixing,
        Self::Squeeze,
        Self::Recurrence,
        Self::Interpolation,
        Self::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Ensemble => "ensemble",
            Self::EnergyBalance => "energy_balance",
            Self::Moments => "moments",
            Self::Tails => "tails",
            Self::Hitting => "hitting",
            Self::Lyapunov => "lyapunov",
            Self::Convolution => "convolution",
            Self::Stationary => "stationary",
            Self::Mixing => "mixing",
            Self::Squeeze => "squeeze",
            Self::Recurrence => "recurrence",
            Self::Interpolation => "interpolation",
            Self::Validate => "validate",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Initial state on the configured lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// `amplitude * phi_mode`.
    Eigenmode {
        mode: Vec<usize>,
        amplitude: f64,
    },
    /// `phi_mode` scaled to grid sup norm `level`.
    SupLevel {
        mode: Vec<usize>,
        level: f64,
    },
    /// Random field with coefficient decay `|s|^{-decay}`, scaled to `||u|| = norm`.
    Random {
        decay: f64,
        norm: f64,
    },
}

impl InitialCondition {
    /// `stream` selects the random stream for the `Random` variant.
    pub fn build(&self, lattice: ModeLattice, seed: u64, stream: u64) -> Result<SpectralField> {
        let field = match self {
            Self::Zero => SpectralField::zeros(lattice),
            Self::Eigenmode { mode, amplitude } => {
                &SpectralField::eigenmode(lattice, mode)? * *amplitude
            }
            Self::SupLevel { mode, level } => {
                let phi = SpectralField::eigenmode(lattice, mode)?;
                &phi * (*level / phi.sup_norm())
            }
            Self::Random { decay, norm } => {
                let mut rng = RngStream::new(seed, stream);
                let f = SpectralField::random(lattice, *decay, &mut rng);
                let l2 = f.l2_norm();
                f.scaled(C64::new(norm / l2, 0.0))
            }
        };
        Ok(field)
    }
}

fn default_experiment() -> ExperimentKind {
    ExperimentKind::Simulate
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $value:expr;)*) => {
        $(fn $name() -> $ty { $value })*
    };
}

defaults! {
    d_dimension: usize = 1;
    d_modes: usize = 32;
    d_oversample: usize = 4;
    d_nu: f64 = 1.0;
    d_zero: f64 = 0.0;
    d_one: f64 = 1.0;
    d_true: bool = true;
    d_dt: f64 = 1e-3;
    d_stride: usize = 10;
    d_noise: NoiseKind = NoiseKind::PowerLaw { amplitude: 1.0, exponent: 2.0 };
    d_seed: u64 = 1;
    d_ensemble: usize = 64;
    d_u0: InitialCondition = InitialCondition::Eigenmode { mode: vec![1], amplitude: 1.0 };
    d_u0_b: InitialCondition = InitialCondition::Zero;
    d_output: String = "out".into();
    d_series: usize = 4;
    d_decay_tol: f64 = 1e-6;
    d_check_modes: usize = 8;
    d_sigmas: f64 = 3.0;
    d_energy_tol: f64 = 0.03;
    d_q_list: Vec<f64> = vec![1.0, 2.0, 4.0];
    d_c_list: Vec<f64> = vec![0.05, 0.1];
    d_windows: Vec<[f64; 2]> = vec![[0.0, 1.0]];
    d_rho_points: usize = 12;
    d_rho_lo: f64 = 0.5;
    d_rho_hi: f64 = 0.99;
    d_r2: f64 = 0.9;
    d_d: f64 = 0.5;
    d_big_l: f64 = 2.0;
    d_gammas: Vec<f64> = vec![0.1, 0.2];
    d_levels: Vec<f64> = vec![1.0, 2.0, 4.0, 8.0];
    d_censoring: f64 = 0.2;
    d_p_list: Vec<u32> = vec![1, 2, 3, 4, 5, 6];
    d_spread: f64 = 0.25;
    d_burn_in: f64 = 20.0;
    d_c_stat: f64 = 0.1;
    d_stat_tol: f64 = 0.05;
    d_t_grid: Vec<f64> = vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0];
    d_mix_threshold: f64 = 0.1;
    d_radius: usize = 1;
    d_bootstrap: usize = 200;
    d_mix_initial: f64 = 0.3;
    d_mix_decrease: f64 = 0.7;
    d_lambda: f64 = 50.0;
    d_control_modes: usize = 8;
    d_w0: f64 = 0.5;
    d_slope: f64 = -0.5;
    d_fraction: f64 = 0.9;
    d_baseline: f64 = -0.1;
    d_deltas: Vec<f64> = vec![0.2, 0.1, 0.05];
    d_m_list: Vec<f64> = vec![1.0, 2.0, 4.0];
    d_check_stride: usize = 10;
    d_dims: Vec<usize> = vec![1, 2];
    d_interp_modes: Vec<usize> = vec![32, 12];
    d_thetas: Vec<f64> = vec![0.3, 0.5, 0.7];
    d_fields: usize = 1000;
}

/// Every knob of every experiment, fully defaulted. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_experiment")]
    pub experiment: ExperimentKind,
    #[serde(default = "d_dimension")]
    pub dimension: usize,
    #[serde(default = "d_modes")]
    pub modes: usize,
    #[serde(default = "d_oversample")]
    pub grid_oversample: usize,
    #[serde(default = "d_nu")]
    pub nu: f64,
    #[serde(default = "d_zero")]
    pub a: f64,
    #[serde(default = "d_one")]
    pub r: f64,
    #[serde(default = "d_true")]
    pub nonlinearity_on: bool,
    #[serde(default = "d_true")]
    pub dealias: bool,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_one")]
    pub t_final: f64,
    #[serde(default = "d_stride")]
    pub record_stride: usize,
    #[serde(default = "d_noise")]
    pub noise: NoiseKind,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_ensemble")]
    pub ensemble_size: usize,
    #[serde(default = "d_u0")]
    pub u0: InitialCondition,
    /// Second initial condition for two-law experiments (mixing, recurrence).
    #[serde(default = "d_u0_b")]
    pub u0_b: InitialCondition,
    #[serde(default = "d_output")]
    pub output_path: String,
    /// Trajectories whose recorded observables are written as series records.
    #[serde(default = "d_series")]
    pub series_trajectories: usize,

    /// Zero-noise runs: relative slack in `||u(t)|| <= exp(-nu n t) ||u0||`.
    #[serde(default = "d_decay_tol")]
    pub decay_tolerance: f64,
    /// Linear ensembles: modes compared with the OU variance.
    #[serde(default = "d_check_modes")]
    pub check_modes: usize,
    #[serde(default = "d_sigmas")]
    pub oracle_sigmas: f64,
    #[serde(default = "d_energy_tol")]
    pub energy_tolerance: f64,

    #[serde(default = "d_q_list")]
    pub q_list: Vec<f64>,
    #[serde(default = "d_c_list")]
    pub c_list: Vec<f64>,
    /// `[start, length]` pairs.
    #[serde(default = "d_windows")]
    pub windows: Vec<[f64; 2]>,

    #[serde(default = "d_rho_points")]
    pub rho_points: usize,
    #[serde(default = "d_rho_lo")]
    pub rho_quantile_lo: f64,
    #[serde(default = "d_rho_hi")]
    pub rho_quantile_hi: f64,
    #[serde(default = "d_r2")]
    pub tail_r2: f64,
    #[serde(default = "d_one")]
    pub tail_decades: f64,

    #[serde(default = "d_d")]
    pub hit_d: f64,
    #[serde(default = "d_big_l")]
    pub hit_l: f64,
    #[serde(default = "d_one")]
    pub hit_r: f64,
    #[serde(default = "d_gammas")]
    pub gamma_list: Vec<f64>,
    /// Initial sup-norm levels for hitting, Lyapunov and recurrence sweeps.
    #[serde(default = "d_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "d_censoring")]
    pub max_censoring: f64,

    #[serde(default = "d_one")]
    pub lyapunov_t: f64,

    #[serde(default = "d_p_list")]
    pub p_list: Vec<u32>,
    #[serde(default = "d_one")]
    pub window: f64,
    #[serde(default = "d_spread")]
    pub ratio_spread: f64,

    #[serde(default = "d_burn_in")]
    pub burn_in: f64,
    #[serde(default = "d_c_stat")]
    pub exp_c: f64,
    #[serde(default = "d_stat_tol")]
    pub stationary_tolerance: f64,

    #[serde(default = "d_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default = "d_mix_threshold")]
    pub mixing_threshold: f64,
    #[serde(default = "d_mix_initial")]
    pub mixing_initial: f64,
    #[serde(default = "d_mix_decrease")]
    pub mixing_decrease: f64,
    /// Nondegeneracy radius `N` for mixing.
    #[serde(default = "d_radius")]
    pub radius: usize,
    #[serde(default = "d_bootstrap")]
    pub bootstrap: usize,

    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_control_modes")]
    pub control_modes: usize,
    /// `||u0 - v0||` for squeeze pairs; `v0 = u0 + w0 phi_1`.
    #[serde(default = "d_w0")]
    pub squeeze_w0: f64,
    #[serde(default = "d_slope")]
    pub slope_threshold: f64,
    #[serde(default = "d_fraction")]
    pub squeeze_fraction: f64,
    #[serde(default = "d_true")]
    pub squeeze_baseline: bool,
    #[serde(default = "d_baseline")]
    pub baseline_median: f64,
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub modes_grid: Vec<usize>,

    #[serde(default = "d_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "d_m_list")]
    pub m_list: Vec<f64>,
    #[serde(default = "d_big_l")]
    pub ball_l: f64,
    #[serde(default = "d_check_stride")]
    pub check_stride: usize,

    #[serde(default = "d_dims")]
    pub interp_dimensions: Vec<usize>,
    #[serde(default = "d_interp_modes")]
    pub interp_modes: Vec<usize>,
    #[serde(default = "d_thetas")]
    pub theta_list: Vec<f64>,
    #[serde(default = "d_fields")]
    pub n_fields: usize,
    #[serde(default = "d_one")]
    pub field_decay: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Re-labels parameter errors from the library as config errors.
fn relabel(err: Error) -> Error {
    match err {
        Error::InvalidParameter { field, reason } => Error::Config { field, reason },
        Error::BallOutsideLattice { radius, cutoff } => config_err(
            "radius",
            format!("ball of radius {radius} exceeds modes = {cutoff}"),
        ),
        Error::LatticeMismatch | Error::DimensionMismatch { .. } => {
            config_err("u0", err.to_string())
        }
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err("<document>", e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("<path>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The fully resolved config as pretty JSON.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn lattice(&self) -> Result<ModeLattice> {
        ModeLattice::new(self.dimension, self.modes, self.grid_oversample).map_err(relabel)
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        let spec = NoiseSpec::new(self.lattice()?, self.noise.clone()).map_err(|e| match e {
            Error::InvalidParameter { reason, .. } => config_err("noise", reason),
            other => relabel(other),
        })?;
        Ok(spec)
    }

    pub fn sim_params(&self) -> Result<SimParams> {
        let mut p = SimParams::new(self.lattice()?, self.dt, self.t_final);
        p.nu = self.nu;
        p.a = self.a;
        p.r = self.r;
        p.nonlinearity_on = self.nonlinearity_on;
        p.dealias = self.dealias;
        p.validate().map_err(relabel)?;
        Ok(p)
    }

    pub fn control(&self) -> Control {
        Control {
            lambda: self.lambda,
            modes: self.control_modes,
        }
    }

    pub fn initial(&self) -> Result<SpectralField> {
        self.u0
            .build(self.lattice()?, self.seed, u64::MAX)
            .map_err(|e| config_err("u0", e.to_string()))
    }

    pub fn initial_b(&self) -> Result<SpectralField> {
        self.u0_b
            .build(self.lattice()?, self.seed, u64::MAX - 1)
            .map_err(|e| config_err("u0_b", e.to_string()))
    }

    /// Field-level checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(
                    field,
                    format!("must be positive and finite, got {v}"),
                ))
            }
        };
        positive("dt", self.dt)?;
        positive("t_final", self.t_final)?;
        positive("nu", self.nu)?;
        if !(1..=3).contains(&self.dimension) {
            return Err(config_err("dimension", "must be 1, 2 or 3"));
        }
        if self.record_stride == 0 {
            return Err(config_err("record_stride", "must be >= 1"));
        }
        if self.ensemble_size == 0 {
            return Err(config_err("ensemble_size", "must be >= 1"));
        }
        self.sim_params()?;
        self.noise_spec()?;
        self.initial()?;
        self.initial_b()?;
        use ExperimentKind::*;
        match self.experiment {
            Stationary => {
                if !(self.burn_in >= 0.0 && self.burn_in < self.t_final) {
                    return Err(config_err("burn_in", "must lie in [0, t_final)"));
                }
            }
            Mixing => {
                if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !(*t >= 0.0)) {
                    return Err(config_err("t_grid", "needs non-negative times"));
                }
                if self.radius == 0 || self.radius > self.modes {
                    return Err(config_err("radius", "must lie in 1..=modes"));
                }
            }
            Squeeze => {
                if self.control_modes == 0 || self.control_modes > self.modes {
                    return Err(config_err("control_modes", "must lie in 1..=modes"));
                }
                if !(self.lambda >= 0.0) {
                    return Err(config_err("lambda", "must be non-negative"));
                }
            }
            Convolution => {
                if self.p_list.is_empty() || self.p_list.contains(&0) {
                    return Err(config_err("p_list", "orders must be positive"));
                }
                positive("window", self.window)?;
            }
            Lyapunov | Hitting | Recurrence => {
                if self.levels.is_empty() || self.levels.iter().any(|l| !(*l >= 0.0)) {
                    return Err(config_err("levels", "needs non-negative levels"));
                }
                if self.experiment == Recurrence && self.m_list.iter().any(|m| !(*m > 0.0)) {
                    return Err(config_err("m_list", "ball indices must be positive"));
                }
            }
            Interpolation => {
                if self.interp_dimensions.len() != self.interp_modes.len() {
                    return Err(config_err(
                        "interp_modes",
                        "needs one entry per interp_dimensions entry",
                    ));
                }
                if self.theta_list.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
                    return Err(config_err("theta_list", "thetas must lie in (0, 1)"));
                }
            }
            Moments => {
                if self.windows.is_empty() {
                    return Err(config_err("windows", "at least one window is required"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}
