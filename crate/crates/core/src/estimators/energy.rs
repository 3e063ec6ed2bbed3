use serde::Serialize;

use super::check_ensemble;
use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::stats::EnsembleStats;

/// Residual of `E||u(t)||^2 + 2 nu E int_0^t ||u||_1^2 - ||u_0||^2 - 2 B_0 t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBalanceReport {
    pub times: Vec<f64>,
    pub residual: Vec<EnsembleStats>,
    /// `residual / (||u_0||^2 + 2 B_0 t)`.
    pub relative: Vec<f64>,
    pub u0_l2: f64,
    pub b0: f64,
}

impl EnergyBalanceReport {
    pub fn last(&self) -> Option<(f64, &EnsembleStats, f64)> {
        let i = self.times.len().checked_sub(1)?;
        Some((self.times[i], &self.residual[i], self.relative[i]))
    }

    /// Largest `|relative residual|` over `t > 0`.
    pub fn max_relative(&self) -> f64 {
        self.times
            .iter()
            .zip(&self.relative)
            .filter(|(t, _)| **t > 0.0)
            .map(|(_, r)| r.abs())
            .fold(0.0, f64::max)
    }
}

pub fn energy_balance_report(
    ensemble: &[TrajectoryRecord],
    u0_l2: f64,
    b0: f64,
) -> Result<EnergyBalanceReport> {
    let first = check_ensemble(ensemble)?;
    if first.meta.a != 0.0 {
        return Err(Error::param(
            "a",
            "the energy identity holds for the conservative nonlinearity (a = 0)",
        ));
    }
    let nu = first.meta.nu;
    let mut residual = Vec::with_capacity(first.times.len());
    let mut relative = Vec::with_capacity(first.times.len());
    for (k, &t) in first.times.iter().enumerate() {
        let samples: Vec<f64> = ensemble
            .iter()
            .map(|r| r.l2[k].powi(2) + 2.0 * nu * r.h1_integral[k] - u0_l2 * u0_l2 - 2.0 * b0 * t)
            .collect();
        let stats = EnsembleStats::from_samples(&samples);
        let scale = u0_l2 * u0_l2 + 2.0 * b0 * t;
        relative.push(stats.mean / scale);
        residual.push(stats);
    }
    Ok(EnergyBalanceReport {
        times: first.times.clone(),
        residual,
        relative,
        u0_l2,
        b0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ensemble, Recording, SimParams};
    use crate::lattice::{ModeLattice, SpectralField};
    use crate::noise::{coupling_constants, NoiseSpec};

    #[test]
    fn zero_noise_residual_is_order_dt() {
        let l = ModeLattice::new(1, 16, 4).unwrap();
        let u0 = &SpectralField::eigenmode(l, &[1]).unwrap() * 1.5;
        for dt in [2e-3, 1e-3] {
            let p = SimParams::new(l, dt, 1.0);
            let ens =
                ensemble(&u0, &p, &NoiseSpec::zero(l), 1, 0, 1, &Recording::every(10)).unwrap();
            let rep = energy_balance_report(&ens, u0.l2_norm(), 0.0).unwrap();
            let (_, res, _) = rep.last().unwrap();
            assert!(res.mean.abs() < 2.0 * dt, "dt={dt} res={}", res.mean);
        }
    }

    #[test]
    fn linear_case_residual_is_centred() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let spec = NoiseSpec::power_law(l, 1.0, 2.0).unwrap();
        let b0 = coupling_constants(&spec, &[]).b_0;
        let u0 = SpectralField::eigenmode(l, &[1]).unwrap();
        let p = SimParams::new(l, 1e-3, 0.5).linear();
        let ens = ensemble(&u0, &p, &spec, 4, 0, 400, &Recording::every(100)).unwrap();
        let rep = energy_balance_report(&ens, 1.0, b0).unwrap();
        for r in &rep.residual {
            assert!(r.mean.abs() <= 3.0 * r.ci95_halfwidth.max(1e-12), "{r:?}");
        }
    }

    #[test]
    fn rejects_dissipative_and_mixed() {
        let l = ModeLattice::new(1, 4, 4).unwrap();
        let u0 = SpectralField::zeros(l);
        let mut p = SimParams::new(l, 1e-2, 0.1);
        p.a = 1.0;
        let ens = ensemble(&u0, &p, &NoiseSpec::zero(l), 1, 0, 2, &Recording::every(1)).unwrap();
        assert!(energy_balance_report(&ens, 0.0, 0.0).is_err());
        let p1 = SimParams::new(l, 1e-2, 0.1);
        let p2 = SimParams::new(l, 2e-2, 0.1);
        let mut a = ensemble(&u0, &p1, &NoiseSpec::zero(l), 1, 0, 1, &Recording::every(1)).unwrap();
        a.extend(ensemble(&u0, &p2, &NoiseSpec::zero(l), 1, 0, 1, &Recording::every(1)).unwrap());
        assert!(matches!(
            energy_balance_report(&a, 0.0, 0.0),
            Err(Error::MixedEnsemble(_))
        ));
        assert!(matches!(
            energy_balance_report(&[], 0.0, 0.0),
            Err(Error::EmptyEnsemble)
        ));
    }
}
