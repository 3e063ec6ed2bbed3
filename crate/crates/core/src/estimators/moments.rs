use serde::Serialize;

use super::{check_ensemble, window_sup};
use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::stats::{exp_weight_ess, linear_fit, EnsembleStats};

/// Below this effective sample size an exponential-moment estimate is
/// dominated by a handful of paths and is reported as out of range.
pub const MIN_EXP_ESS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpMoment {
    pub c: f64,
    /// `E exp(c sup^2)`; `None` when out of estimable range.
    pub estimate: Option<EnsembleStats>,
    pub ess: f64,
}

impl ExpMoment {
    pub fn from_sups(sups: &[f64], c: f64) -> Self {
        let logs: Vec<f64> = sups.iter().map(|s| c * s * s).collect();
        let ess = exp_weight_ess(&logs);
        let overflow = logs.iter().any(|&x| x > 700.0);
        let estimate = if overflow || ess < MIN_EXP_ESS.min(sups.len() as f64 - 1e-9) {
            None
        } else {
            let vals: Vec<f64> = logs.iter().map(|x| x.exp()).collect();
            Some(EnsembleStats::from_samples(&vals))
        };
        Self { c, estimate, ess }
    }

    pub fn in_range(&self) -> bool {
        self.estimate.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentWindow {
    pub start: f64,
    pub len: f64,
    /// `(q, E sup_window |u|_inf^q)`.
    pub sup_moments: Vec<(f64, EnsembleStats)>,
    pub exp_moments: Vec<ExpMoment>,
}

/// Regression of an estimate against window start time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trend {
    pub label: String,
    pub slope: f64,
    pub slope_se: f64,
    /// No significant growth: `slope - 1.96 se <= 0`.
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub n_samples: usize,
    pub windows: Vec<MomentWindow>,
    pub trends: Vec<Trend>,
}

impl MomentReport {
    pub fn all_bounded(&self) -> bool {
        self.trends.iter().all(|t| t.bounded)
    }
}

pub fn moment_report(
    ensemble: &[TrajectoryRecord],
    q_list: &[f64],
    c_list: &[f64],
    windows: &[(f64, f64)],
) -> Result<MomentReport> {
    check_ensemble(ensemble)?;
    if windows.is_empty() {
        return Err(Error::param("windows", "at least one window is required"));
    }
    let mut out = Vec::with_capacity(windows.len());
    for &(start, len) in windows {
        let sups: Vec<f64> = ensemble.iter().map(|r| window_sup(r, start, len)).collect();
        let sup_moments = q_list
            .iter()
            .map(|&q| {
                let v: Vec<f64> = sups.iter().map(|s| s.powf(q)).collect();
                (q, EnsembleStats::from_samples(&v))
            })
            .collect();
        let exp_moments = c_list
            .iter()
            .map(|&c| ExpMoment::from_sups(&sups, c))
            .collect();
        out.push(MomentWindow {
            start,
            len,
            sup_moments,
            exp_moments,
        });
    }

    let mut trends = Vec::new();
    if out.len() >= 2 {
        let starts: Vec<f64> = out.iter().map(|w| w.start).collect();
        for (qi, &q) in q_list.iter().enumerate() {
            let est: Vec<EnsembleStats> = out.iter().map(|w| w.sup_moments[qi].1).collect();
            trends.push(trend(format!("sup^{q}"), &starts, &est));
        }
        for (ci, &c) in c_list.iter().enumerate() {
            let est: Option<Vec<EnsembleStats>> =
                out.iter().map(|w| w.exp_moments[ci].estimate).collect();
            if let Some(est) = est {
                trends.push(trend(format!("exp({c} sup^2)"), &starts, &est));
            }
        }
    }
    Ok(MomentReport {
        n_samples: ensemble.len(),
        windows: out,
        trends,
    })
}

fn trend(label: String, starts: &[f64], est: &[EnsembleStats]) -> Trend {
    let means: Vec<f64> = est.iter().map(|e| e.mean).collect();
    let (slope, slope_se) = if starts.len() == 2 {
        let dt = starts[1] - starts[0];
        let se = (est[0].standard_error().powi(2) + est[1].standard_error().powi(2)).sqrt();
        ((means[1] - means[0]) / dt, se / dt.abs())
    } else {
        let fit = linear_fit(starts, &means);
        // combine regression scatter with the Monte Carlo error of the points
        let sxx: f64 = {
            let m = starts.iter().sum::<f64>() / starts.len() as f64;
            starts.iter().map(|t| (t - m).powi(2)).sum()
        };
        let mc = est.iter().map(|e| e.standard_error().powi(2)).sum::<f64>() / est.len() as f64;
        (fit.slope, (fit.slope_se.powi(2) + mc / sxx).sqrt())
    };
    let bounded = !(slope - 1.96 * slope_se > 0.0);
    Trend {
        label,
        slope,
        slope_se,
        bounded,
    }
}
