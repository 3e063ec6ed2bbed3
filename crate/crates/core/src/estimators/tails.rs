use serde::Serialize;

use super::check_ensemble;
use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::stats::{linear_fit, quantile_sorted, sorted};

/// Minimum number of exceedances kept at the largest `rho`.
pub const MIN_EXCEEDANCES: usize = 10;

/// Margin applied to the fitted growth rate of `int |u|_inf^2`.
pub const K_MARGIN: f64 = 1.1;

/// Survival of `J = sup_t (int_0^t |u|_inf^2 ds - K_hat t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub n_samples: usize,
    pub k_hat: f64,
    pub rho_grid: Vec<f64>,
    pub survival: Vec<f64>,
    pub log_survival: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub fit_r2: f64,
    /// `log10` ratio of the first to the last survival value in the fit.
    pub decades: f64,
    /// Paths whose supremum was still being updated in the last quarter.
    pub censored_fraction: f64,
    pub warnings: Vec<String>,
}

/// `(K_hat, J_i, censored fraction)`.
pub fn tail_statistic(ensemble: &[TrajectoryRecord]) -> Result<(f64, Vec<f64>, f64)> {
    let first = check_ensemble(ensemble)?;
    let n_t = first.times.len();
    if n_t < 4 {
        return Err(Error::param(
            "ensemble",
            "records too short for a tail statistic",
        ));
    }
    let mean_int: Vec<f64> = (0..n_t)
        .map(|k| ensemble.iter().map(|r| r.sup_integral[k]).sum::<f64>() / ensemble.len() as f64)
        .collect();
    let half = n_t / 2;
    let slope = linear_fit(&first.times[half..], &mean_int[half..]).slope;
    let k_hat = K_MARGIN * slope.max(0.0);
    let last_quarter = first.t_final() * 0.75;
    let mut censored = 0usize;
    let j: Vec<f64> = ensemble
        .iter()
        .map(|r| {
            let (mut best, mut at) = (f64::NEG_INFINITY, 0.0);
            for (t, i) in r.times.iter().zip(&r.sup_integral) {
                let v = i - k_hat * t;
                if v > best {
                    best = v;
                    at = *t;
                }
            }
            if at > last_quarter {
                censored += 1;
            }
            best
        })
        .collect();
    Ok((k_hat, j, censored as f64 / ensemble.len() as f64))
}

/// `points` values of `rho` between two empirical quantiles of `J`.
pub fn quantile_rho_grid(j: &[f64], points: usize, lo_q: f64, hi_q: f64) -> Vec<f64> {
    let s = sorted(j);
    let lo = quantile_sorted(&s, lo_q);
    let hi = quantile_sorted(&s, hi_q);
    let points = points.max(2);
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

pub fn tail_report(ensemble: &[TrajectoryRecord], rho_grid: &[f64]) -> Result<TailReport> {
    if rho_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("rho_grid", "must be strictly increasing"));
    }
    let (k_hat, j, censored_fraction) = tail_statistic(ensemble)?;
    let n = j.len() as f64;
    let mut warnings = Vec::new();
    if censored_fraction > 0.05 {
        warnings.push(format!(
            "supremum not stabilised for {:.1}% of paths",
            100.0 * censored_fraction
        ));
    }
    let mut grid = Vec::new();
    let mut survival = Vec::new();
    for &rho in rho_grid {
        let count = j.iter().filter(|&&x| x >= rho).count();
        if count < MIN_EXCEEDANCES && !grid.is_empty() {
            warnings.push(format!(
                "rho grid truncated at {rho}: fewer than {MIN_EXCEEDANCES} exceedances"
            ));
            break;
        }
        grid.push(rho);
        survival.push(count as f64 / n);
    }
    let log_survival: Vec<f64> = survival.iter().map(|s| s.ln()).collect();
    let finite: Vec<(f64, f64)> = grid
        .iter()
        .zip(&log_survival)
        .filter(|(_, l)| l.is_finite())
        .map(|(r, l)| (*r, *l))
        .collect();
    let (slope, intercept, fit_r2, decades) = if finite.len() >= 3 {
        let x: Vec<f64> = finite.iter().map(|p| p.0).collect();
        let y: Vec<f64> = finite.iter().map(|p| p.1).collect();
        let fit = linear_fit(&x, &y);
        let decades = (y[0] - y[y.len() - 1]) / std::f64::consts::LN_10;
        (fit.slope, fit.intercept, fit.r2, decades)
    } else {
        (f64::NAN, f64::NAN, f64::NAN, 0.0)
    };
    Ok(TailReport {
        n_samples: j.len(),
        k_hat,
        rho_grid: grid,
        survival,
        log_survival,
        slope,
        intercept,
        fit_r2,
        decades,
        censored_fraction,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ensemble, heat_trajectory, Recording, SimParams};
    use crate::lattice::{ModeLattice, SpectralField};
    use crate::noise::{NoiseSpec, RngStream};

    #[test]
    fn zero_noise_has_empty_tail() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let p = SimParams::new(l, 1e-2, 4.0);
        let ens = ensemble(
            &SpectralField::zeros(l),
            &p,
            &NoiseSpec::zero(l),
            1,
            0,
            8,
            &Recording::every(5),
        )
        .unwrap();
        let rep = tail_report(&ens, &[0.1, 0.5, 1.0]).unwrap();
        assert_eq!(rep.k_hat, 0.0);
        assert!(rep.survival.iter().all(|&s| s == 0.0));
    }

    fn linear_ensemble(count: u64) -> Vec<crate::dynamics::TrajectoryRecord> {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let spec = NoiseSpec::power_law(l, 1.0, 2.0).unwrap();
        let p = SimParams::new(l, 1e-2, 20.0);
        (0..count)
            .map(|i| {
                heat_trajectory(&p, &spec, &mut RngStream::new(6, i), &Recording::every(5)).unwrap()
            })
            .collect()
    }

    #[test]
    fn linear_case_tail_is_exponential() {
        let ens = linear_ensemble(600);
        let (_, j, _) = tail_statistic(&ens).unwrap();
        let grid = quantile_rho_grid(&j, 10, 0.5, 0.98);
        let rep = tail_report(&ens, &grid).unwrap();
        assert!(rep.slope < 0.0);
        assert!(rep.fit_r2 >= 0.9, "{rep:?}");
        assert!(rep.log_survival.windows(2).all(|w| w[1] <= w[0]));

        let coarse: Vec<f64> = grid.iter().step_by(2).copied().collect();
        let rep2 = tail_report(&ens, &coarse).unwrap();
        assert!(
            (rep2.slope - rep.slope).abs() < 0.25 * rep.slope.abs(),
            "{} {}",
            rep.slope,
            rep2.slope
        );
    }

    #[test]
    fn grid_is_truncated_when_exceedances_run_out() {
        let ens = linear_ensemble(50);
        let rep = tail_report(&ens, &[0.0, 1.0, 1e3, 2e3]).unwrap();
        assert!(rep.rho_grid.len() < 4);
        assert!(!rep.warnings.is_empty());
    }
}
