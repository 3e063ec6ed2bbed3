use serde::Serialize;

use super::check_ensemble;
use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::stats::{EnsembleStats, LinearFit};

/// `F(u) = max(|u|_inf^2, 1)`.
pub fn lyapunov_f(sup: f64) -> f64 {
    (sup * sup).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovRow {
    pub level: f64,
    pub f0: f64,
    /// `E F(u(T))`.
    pub f_t: EnsembleStats,
    pub ratio: f64,
    pub ratio_ci95: f64,
}

/// Least-squares fit `E |u(t)|_inf^2 ~ A exp(-c t) |u_0|_inf^2 + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rms_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub t: f64,
    pub rows: Vec<LyapunovRow>,
    /// Smallest level from which every ratio is below one.
    pub r_prime: Option<f64>,
    pub decay: DecayFit,
}

impl LyapunovReport {
    /// Ratios do not increase with the level once above `r_prime`.
    pub fn monotone_above_r_prime(&self) -> bool {
        let Some(rp) = self.r_prime else {
            return false;
        };
        let tail: Vec<&LyapunovRow> = self.rows.iter().filter(|r| r.level >= rp).collect();
        tail.windows(2)
            .all(|w| w[1].ratio <= w[0].ratio + w[0].ratio_ci95 + w[1].ratio_ci95)
    }
}

fn sup_at(rec: &TrajectoryRecord, t: f64) -> Result<f64> {
    rec.index_at(t)
        .map(|i| rec.sup[i])
        .ok_or_else(|| Error::param("t", format!("{t} is not a recorded time")))
}

/// Drift table of `F` at time `t` for ensembles keyed by initial sup norm,
/// sorted by level.
pub fn lyapunov_report(levels: &[(f64, Vec<TrajectoryRecord>)], t: f64) -> Result<LyapunovReport> {
    if levels.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&i, &j| levels[i].0.total_cmp(&levels[j].0));
    let mut rows = Vec::with_capacity(levels.len());
    for &i in &order {
        let (level, ens) = &levels[i];
        check_ensemble(ens)?;
        let f_vals = ens
            .iter()
            .map(|rec| sup_at(rec, t).map(lyapunov_f))
            .collect::<Result<Vec<_>>>()?;
        let f_t = EnsembleStats::from_samples(&f_vals);
        let f0 = lyapunov_f(*level);
        rows.push(LyapunovRow {
            level: *level,
            f0,
            f_t,
            ratio: f_t.mean / f0,
            ratio_ci95: f_t.ci95_halfwidth / f0,
        });
    }
    let r_prime = rows
        .iter()
        .rposition(|r| r.ratio >= 1.0)
        .map_or(Some(0), |k| (k + 1 < rows.len()).then_some(k + 1))
        .map(|k| rows[k].level);
    let decay = fit_decay(levels)?;
    Ok(LyapunovReport {
        t,
        rows,
        r_prime,
        decay,
    })
}

fn fit_decay(levels: &[(f64, Vec<TrajectoryRecord>)]) -> Result<DecayFit> {
    // (t, level^2, mean sup^2)
    let mut pts = Vec::new();
    for (level, ens) in levels {
        let first = check_ensemble(ens)?;
        for (k, &t) in first.times.iter().enumerate() {
            let m = ens.iter().map(|r| r.sup[k] * r.sup[k]).sum::<f64>() / ens.len() as f64;
            pts.push((t, level * level, m));
        }
    }
    let solve = |c: f64| -> DecayFit {
        let x: Vec<f64> = pts.iter().map(|(t, l2, _)| (-c * t).exp() * l2).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let LinearFit {
            slope, intercept, ..
        } = if x.iter().all(|v| *v == x[0]) {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            LinearFit {
                slope: 0.0,
                intercept: mean,
                slope_se: f64::NAN,
                r2: 0.0,
            }
        } else {
            crate::stats::linear_fit(&x, &y)
        };
        let rss = x
            .iter()
            .zip(&y)
            .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
            .sum::<f64>();
        DecayFit {
            a: slope,
            b: intercept,
            c,
            rms_residual: (rss / x.len() as f64).sqrt(),
        }
    };
    // log-grid scan then golden-section refinement on log c
    let grid: Vec<f64> = (0..=60).map(|k| -4.0 + 0.1 * k as f64).collect();
    let mut best = grid[0];
    let mut best_fit = solve(10f64.powf(best));
    for &g in &grid[1..] {
        let fit = solve(10f64.powf(g));
        if fit.rms_residual < best_fit.rms_residual {
            best = g;
            best_fit = fit;
        }
    }
    let (mut lo, mut hi) = (best - 0.1, best + 0.1);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if solve(10f64.powf(m1)).rms_residual < solve(10f64.powf(m2)).rms_residual {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let refined = solve(10f64.powf(0.5 * (lo + hi)));
    Ok(if refined.rms_residual <= best_fit.rms_residual {
        refined
    } else {
        best_fit
    })
}
