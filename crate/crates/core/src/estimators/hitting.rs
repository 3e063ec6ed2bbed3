use serde::Serialize;

use super::check_ensemble;
use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::stats::{linear_fit, EnsembleStats};

/// Above this censoring fraction an exponential-moment estimate is unreliable.
pub const MAX_CENSORING: f64 = 0.2;

/// First recorded time at which `pred(||u||, |u|_inf)` holds.
pub fn first_hit(rec: &TrajectoryRecord, pred: impl Fn(f64, f64) -> bool) -> Option<f64> {
    rec.times
        .iter()
        .zip(rec.l2.iter().zip(&rec.sup))
        .find(|(_, (l2, sup))| pred(**l2, **sup))
        .map(|(t, _)| *t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingMoment {
    pub gamma: f64,
    /// `E exp(gamma tau_1)` with censored paths counted at the horizon
    /// (a lower bound when censoring is present).
    pub tau1: EnsembleStats,
    pub tau2: EnsembleStats,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingReport {
    pub d: f64,
    pub l: f64,
    pub r: f64,
    pub horizon: f64,
    /// `None` marks a path censored at the horizon.
    pub tau1_samples: Vec<Option<f64>>,
    pub tau2_samples: Vec<Option<f64>>,
    pub censored1: f64,
    pub censored2: f64,
    pub exp_moments: Vec<HittingMoment>,
}

fn censored_fraction(samples: &[Option<f64>]) -> f64 {
    samples.iter().filter(|s| s.is_none()).count() as f64 / samples.len() as f64
}

fn exp_stats(samples: &[Option<f64>], gamma: f64, horizon: f64) -> EnsembleStats {
    let v: Vec<f64> = samples
        .iter()
        .map(|s| (gamma * s.unwrap_or(horizon)).exp())
        .collect();
    EnsembleStats::from_samples(&v)
}

/// Hitting times `tau_{1,d,L}` (`||u|| <= d` and `|u|_inf <= L`) and
/// `tau_{2,R}` (`|u|_inf <= R`) on the recorded grid.
pub fn hitting_report(
    ensemble: &[TrajectoryRecord],
    d: f64,
    l: f64,
    r: f64,
    gamma_list: &[f64],
) -> Result<HittingReport> {
    let first = check_ensemble(ensemble)?;
    if !(d > 0.0 && l > 0.0 && r > 0.0) {
        return Err(Error::param("thresholds", "d, L and R must be positive"));
    }
    let horizon = first.t_final();
    let tau1: Vec<Option<f64>> = ensemble
        .iter()
        .map(|rec| first_hit(rec, |n, s| n <= d && s <= l))
        .collect();
    let tau2: Vec<Option<f64>> = ensemble
        .iter()
        .map(|rec| first_hit(rec, |_, s| s <= r))
        .collect();
    let censored1 = censored_fraction(&tau1);
    let censored2 = censored_fraction(&tau2);
    let exp_moments = gamma_list
        .iter()
        .map(|&gamma| HittingMoment {
            gamma,
            tau1: exp_stats(&tau1, gamma, horizon),
            tau2: exp_stats(&tau2, gamma, horizon),
            reliable: censored1 <= MAX_CENSORING && censored2 <= MAX_CENSORING,
        })
        .collect();
    Ok(HittingReport {
        d,
        l,
        r,
        horizon,
        tau1_samples: tau1,
        tau2_samples: tau2,
        censored1,
        censored2,
        exp_moments,
    })
}

/// Hitting reports across initial sup-norm levels, with the growth of the
/// `tau_1` exponential moment against `1 + |u_0|_inf^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingSweep {
    pub levels: Vec<f64>,
    pub reports: Vec<HittingReport>,
    /// Per gamma: ratio `E exp(gamma tau_1) / (1 + level^2)` per level.
    pub ratios: Vec<(f64, Vec<f64>)>,
    /// Per gamma: slope of `log E exp(gamma tau_1)` against `log(1 + level^2)`.
    pub growth_exponents: Vec<(f64, f64)>,
}

impl HittingSweep {
    /// Exponential moments grow slower than `1 + |u_0|_inf^2`.
    pub fn subquadratic(&self) -> bool {
        self.growth_exponents.iter().all(|(_, e)| *e < 1.0)
    }
}

pub fn hitting_sweep(
    levels: &[(f64, Vec<TrajectoryRecord>)],
    d: f64,
    l: f64,
    r: f64,
    gamma_list: &[f64],
) -> Result<HittingSweep> {
    let reports = levels
        .iter()
        .map(|(_, ens)| hitting_report(ens, d, l, r, gamma_list))
        .collect::<Result<Vec<_>>>()?;
    let lv: Vec<f64> = levels.iter().map(|(x, _)| *x).collect();
    let x: Vec<f64> = lv.iter().map(|s| (1.0 + s * s).ln()).collect();
    let mut ratios = Vec::new();
    let mut growth = Vec::new();
    for (gi, &gamma) in gamma_list.iter().enumerate() {
        let est: Vec<f64> = reports
            .iter()
            .map(|rep| rep.exp_moments[gi].tau1.mean)
            .collect();
        ratios.push((
            gamma,
            est.iter()
                .zip(&lv)
                .map(|(e, s)| e / (1.0 + s * s))
                .collect(),
        ));
        let y: Vec<f64> = est.iter().map(|e| e.ln()).collect();
        let slope = if lv.len() >= 2 {
            linear_fit(&x, &y).slope
        } else {
            f64::NAN
        };
        growth.push((gamma, slope));
    }
    Ok(HittingSweep {
        levels: lv,
        reports,
        ratios,
        growth_exponents: growth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ensemble, Recording, SimParams};
    use crate::lattice::{ModeLattice, SpectralField};
    use crate::noise::NoiseSpec;

    #[test]
    fn already_in_target_hits_at_zero() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let p = SimParams::new(l, 1e-2, 1.0);
        let ens = ensemble(
            &SpectralField::zeros(l),
            &p,
            &NoiseSpec::zero(l),
            1,
            0,
            3,
            &Recording::every(1),
        )
        .unwrap();
        let rep = hitting_report(&ens, 0.5, 1.0, 1.0, &[0.3]).unwrap();
        assert!(rep.tau1_samples.iter().all(|t| *t == Some(0.0)));
        assert_eq!(rep.exp_moments[0].tau1.mean, 1.0);
        assert!(hitting_report(&ens, 0.0, 1.0, 1.0, &[]).is_err());
    }

    #[test]
    fn deterministic_decay_envelope() {
        // |u(t)|_inf <= 4 e^{-t} sup(phi_1) for the zero-noise cubic flow
        let l = ModeLattice::new(1, 16, 4).unwrap();
        let p = SimParams::new(l, 1e-3, 5.0);
        let phi = SpectralField::eigenmode(l, &[1]).unwrap();
        let sup1 = phi.sup_norm();
        let u0 = &phi * 4.0;
        let ens = ensemble(&u0, &p, &NoiseSpec::zero(l), 1, 0, 1, &Recording::every(10)).unwrap();
        let rep = hitting_report(&ens, 10.0, 10.0, 1.0, &[]).unwrap();
        let tau = rep.tau2_samples[0].unwrap();
        let envelope = ens[0]
            .times
            .iter()
            .copied()
            .find(|t| 4.0 * (-t).exp() * sup1 <= 1.0)
            .unwrap();
        assert!(tau <= envelope, "{tau} > {envelope}");
    }

    #[test]
    fn censoring_is_flagged() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let p = SimParams::new(l, 1e-3, 0.2);
        let u0 = &SpectralField::eigenmode(l, &[1]).unwrap() * 2.0;
        let ens = ensemble(&u0, &p, &NoiseSpec::zero(l), 1, 0, 4, &Recording::every(1)).unwrap();
        let rep = hitting_report(&ens, 0.01, 0.01, 0.01, &[1.0]).unwrap();
        assert_eq!(rep.censored1, 1.0);
        assert!(!rep.exp_moments[0].reliable);
        assert_eq!(rep.tau1_samples.len(), 4);
    }
}
