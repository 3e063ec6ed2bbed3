use serde::Serialize;

use super::distance::{
    dual_lipschitz_bootstrap, observables, DistanceEstimate, EmpiricalMeasure, TestDictionary,
    DEFAULT_BOOTSTRAP, OBSERVABLE_LEN,
};
use crate::dynamics::{ensemble, Recording, SimParams, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::lattice::{SineTransform, SpectralField};
use crate::noise::{nondegeneracy_check, NoiseSpec};

pub const MIN_MIXING_ENSEMBLE: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingConfig {
    pub t_grid: Vec<f64>,
    pub ensemble_size: usize,
    /// Radius `N` of the ball on which the noise must be nondegenerate.
    pub radius: usize,
    pub threshold: f64,
    pub bootstrap: usize,
    pub seed: u64,
}

impl MixingConfig {
    pub fn new(t_grid: Vec<f64>, ensemble_size: usize, seed: u64) -> Self {
        Self {
            t_grid,
            ensemble_size,
            radius: 1,
            threshold: 0.1,
            bootstrap: DEFAULT_BOOTSTRAP,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub t_grid: Vec<f64>,
    pub estimates: Vec<DistanceEstimate>,
    pub threshold: f64,
    /// First grid time where `estimate + halfwidth` is below the threshold.
    pub crossing_time: Option<f64>,
    /// Fraction of consecutive grid points where the estimate decreases.
    pub decrease_fraction: f64,
    pub ensemble_size: usize,
    pub dictionary_id: String,
    pub warnings: Vec<String>,
}

fn observable_samples(
    records: &[TrajectoryRecord],
    t: f64,
    tr: &SineTransform,
) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|rec| {
            let u = rec
                .snapshot_at(t)
                .ok_or_else(|| Error::param("t_grid", format!("no snapshot at t = {t}")))?;
            Ok(observables(u, tr.synthesize(u).sup()))
        })
        .collect()
}

/// Distance between the laws started from `u0_a` and `u0_b` along the time
/// grid. Ensemble `a` uses streams `0..n` of `config.seed`, ensemble `b`
/// streams `n..2n`.
pub fn mixing_experiment(
    u0_a: &SpectralField,
    u0_b: &SpectralField,
    params: &SimParams,
    spec: &NoiseSpec,
    config: &MixingConfig,
) -> Result<MixingReport> {
    if !nondegeneracy_check(spec, config.radius)? {
        return Err(Error::DegenerateNoise {
            modes: config.radius,
        });
    }
    if config.ensemble_size < MIN_MIXING_ENSEMBLE {
        return Err(Error::param(
            "ensemble_size",
            format!("mixing needs at least {MIN_MIXING_ENSEMBLE} trajectories per law"),
        ));
    }
    let t_max = config.t_grid.iter().cloned().fold(f64::NAN, f64::max);
    if config.t_grid.is_empty() || config.t_grid.iter().any(|t| *t < 0.0) || !(t_max > 0.0) {
        return Err(Error::param(
            "t_grid",
            "needs non-negative times with a positive maximum",
        ));
    }
    let mut warnings = Vec::new();
    if params.r > 1.0 {
        warnings.push(format!(
            "r = {} exceeds the quadratic derivative growth assumed for mixing",
            params.r
        ));
    }
    let run = SimParams {
        t_final: t_max,
        ..params.clone()
    };
    let recording = Recording::every(run.steps()).with_snapshots(config.t_grid.clone());
    let n = config.ensemble_size;
    let ens_a = ensemble(u0_a, &run, spec, config.seed, 0, n, &recording)?;
    let ens_b = ensemble(u0_b, &run, spec, config.seed, n as u64, n, &recording)?;

    let dict = TestDictionary::default_for(OBSERVABLE_LEN);
    let tr = SineTransform::new(params.lattice);
    let mut estimates = Vec::with_capacity(config.t_grid.len());
    for (k, &t) in config.t_grid.iter().enumerate() {
        let a = EmpiricalMeasure::from_observables(&dict, &observable_samples(&ens_a, t, &tr)?)?;
        let b = EmpiricalMeasure::from_observables(&dict, &observable_samples(&ens_b, t, &tr)?)?;
        let boot_seed = config.seed.rotate_left(17) ^ (k as u64 + 1);
        estimates.push(dual_lipschitz_bootstrap(
            &a,
            &b,
            &dict,
            config.bootstrap,
            boot_seed,
        )?);
    }
    let crossing_time = config
        .t_grid
        .iter()
        .zip(&estimates)
        .find(|(_, e)| e.upper() <= config.threshold)
        .map(|(t, _)| *t);
    let pairs = estimates.len().saturating_sub(1);
    let decreases = estimates
        .windows(2)
        .filter(|w| w[1].estimate < w[0].estimate)
        .count();
    let decrease_fraction = if pairs > 0 {
        decreases as f64 / pairs as f64
    } else {
        0.0
    };
    Ok(MixingReport {
        t_grid: config.t_grid.clone(),
        estimates,
        threshold: config.threshold,
        crossing_time,
        decrease_fraction,
        ensemble_size: n,
        dictionary_id: dict.id().to_string(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ModeLattice;

    #[test]
    fn degenerate_noise_refused() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let spec = NoiseSpec::single_mode(l, &[2], 1.0).unwrap();
        let p = SimParams::new(l, 1e-2, 1.0);
        let u0 = SpectralField::zeros(l);
        let cfg = MixingConfig::new(vec![0.0, 1.0], 128, 1);
        assert!(matches!(
            mixing_experiment(&u0, &u0, &p, &spec, &cfg),
            Err(Error::DegenerateNoise { .. })
        ));
        let ok = NoiseSpec::power_law(l, 1.0, 1.0).unwrap();
        let small = MixingConfig::new(vec![0.0, 1.0], 16, 1);
        assert!(mixing_experiment(&u0, &u0, &p, &ok, &small).is_err());
    }

    #[test]
    fn equal_initial_laws_sit_at_noise_floor() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let spec = NoiseSpec::power_law(l, 1.0, 1.0).unwrap();
        let p = SimParams::new(l, 1e-2, 1.0);
        let u0 = SpectralField::zeros(l);
        let mut cfg = MixingConfig::new(vec![0.0, 0.5, 1.0], 128, 3);
        cfg.bootstrap = 50;
        let rep = mixing_experiment(&u0, &u0, &p, &spec, &cfg).unwrap();
        assert_eq!(rep.estimates[0].estimate, 0.0);
        for e in &rep.estimates {
            assert!(e.estimate <= 0.25, "{e:?}");
            assert!(e.estimate >= 0.0 && e.estimate <= 2.0);
        }
    }
}
