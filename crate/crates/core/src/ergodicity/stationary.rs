use serde::Serialize;

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::stats::{batch_means, integrated_autocorrelation_time, EnsembleStats};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryReport {
    pub burn_in: f64,
    pub t_final: f64,
    pub n_samples: usize,
    pub l2_sq: EnsembleStats,
    pub h1_sq: EnsembleStats,
    pub sup_sq: EnsembleStats,
    pub c: f64,
    pub exp_sup_sq: EnsembleStats,
    /// Integrated autocorrelation time of `||u||_1^2`, in time units.
    pub iact: f64,
    pub b0: f64,
    /// Stationary value of `||u||_1^2` implied by the energy balance, `B0/nu`.
    pub h1_target: f64,
    pub ratio_to_b0: f64,
    pub ratio_to_half_b0: f64,
    pub warnings: Vec<String>,
}

impl StationaryReport {
    pub fn relative_error(&self) -> f64 {
        (self.h1_sq.mean - self.h1_target).abs() / self.h1_target
    }
}

/// Time averages over `[burn_in, t_final]` of one long trajectory, with
/// batch-means confidence intervals.
pub fn stationary_report(
    rec: &TrajectoryRecord,
    burn_in: f64,
    c: f64,
    b0: f64,
) -> Result<StationaryReport> {
    let t_final = rec.t_final();
    if !(burn_in >= 0.0 && burn_in < t_final) {
        return Err(Error::param("burn_in", "must lie in [0, t_final)"));
    }
    let start = rec
        .times
        .iter()
        .position(|&t| t >= burn_in - 1e-9 * (1.0 + burn_in))
        .unwrap_or(rec.len());
    let sq = |v: &[f64]| -> Vec<f64> { v[start..].iter().map(|x| x * x).collect() };
    let l2 = sq(&rec.l2);
    let h1 = sq(&rec.h1);
    let sup = sq(&rec.sup);
    let exp_sup: Vec<f64> = sup.iter().map(|s| (c * s).exp()).collect();
    let spacing = rec.meta.dt * rec.meta.stride as f64;
    let iact = integrated_autocorrelation_time(&h1) * spacing;
    let mut warnings = Vec::new();
    if t_final - burn_in < 10.0 * iact {
        warnings.push(format!(
            "averaging span {} is shorter than 10 autocorrelation times ({iact:.3})",
            t_final - burn_in
        ));
    }
    let h1_sq = batch_means(&h1);
    let h1_target = b0 / rec.meta.nu;
    Ok(StationaryReport {
        burn_in,
        t_final,
        n_samples: h1.len(),
        l2_sq: batch_means(&l2),
        h1_sq,
        sup_sq: batch_means(&sup),
        c,
        exp_sup_sq: batch_means(&exp_sup),
        iact,
        b0,
        h1_target,
        ratio_to_b0: h1_sq.mean / b0,
        ratio_to_half_b0: h1_sq.mean / (0.5 * b0),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, SimParams};
    use crate::lattice::{ModeLattice, SpectralField};
    use crate::noise::{coupling_constants, NoiseSpec, RngStream};

    #[test]
    fn zero_noise_averages_vanish() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let p = SimParams::new(l, 1e-2, 40.0);
        let u0 = SpectralField::eigenmode(l, &[1]).unwrap();
        let rec = simulate(&u0, &p, &NoiseSpec::zero(l), &mut RngStream::new(1, 0), 10).unwrap();
        let rep = stationary_report(&rec, 20.0, 0.1, 0.0).unwrap();
        assert!(rep.h1_sq.mean < 1e-15 && rep.l2_sq.mean < 1e-15);
        assert!((rep.exp_sup_sq.mean - 1.0).abs() < 1e-12);
        assert!(stationary_report(&rec, 40.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn linear_h1_average_matches_b0() {
        let l = ModeLattice::new(1, 16, 4).unwrap();
        let spec = NoiseSpec::power_law(l, 1.0, 1.0).unwrap();
        let b0 = coupling_constants(&spec, &[]).b_0;
        let p = SimParams::new(l, 1e-2, 400.0).linear();
        let rec = simulate(
            &SpectralField::zeros(l),
            &p,
            &spec,
            &mut RngStream::new(3, 0),
            5,
        )
        .unwrap();
        let rep = stationary_report(&rec, 10.0, 0.0, b0).unwrap();
        assert!(
            (rep.h1_sq.mean - b0).abs() <= 3.0 * rep.h1_sq.ci95_halfwidth,
            "{:?} vs {b0}",
            rep.h1_sq
        );
        assert!((rep.ratio_to_half_b0 - 2.0 * rep.ratio_to_b0).abs() < 1e-12);
        assert!(rep.warnings.is_empty());
    }
}
