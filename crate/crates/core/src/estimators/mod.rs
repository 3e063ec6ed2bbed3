//! Ensemble statistics over [`TrajectoryRecord`]s.
//!
//! Every report carries sample counts, censoring fractions and confidence
//! intervals; no estimator returns a bare point value.

mod convolution;
mod energy;
mod hitting;
mod lyapunov;
mod moments;
mod tails;

pub use convolution::{
    convolution_moment_report, ConvolutionMoment, ConvolutionReport, RATIO_SPREAD_TOL,
};
pub use energy::{energy_balance_report, EnergyBalanceReport};
pub use hitting::{
    first_hit, hitting_report, hitting_sweep, HittingMoment, HittingReport, HittingSweep,
    MAX_CENSORING,
};
pub use lyapunov::{lyapunov_f, lyapunov_report, DecayFit, LyapunovReport, LyapunovRow};
pub use moments::{moment_report, ExpMoment, MomentReport, MomentWindow, Trend, MIN_EXP_ESS};
pub use tails::{quantile_rho_grid, tail_report, tail_statistic, TailReport};

pub use crate::stats::EnsembleStats;

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};

/// Rejects empty ensembles and records that disagree on parameters or time grid.
pub(crate) fn check_ensemble(ensemble: &[TrajectoryRecord]) -> Result<&TrajectoryRecord> {
    let first = ensemble.first().ok_or(Error::EmptyEnsemble)?;
    for rec in &ensemble[1..] {
        if rec.meta != first.meta {
            return Err(Error::MixedEnsemble(format!(
                "{:?} vs {:?}",
                rec.meta, first.meta
            )));
        }
        if rec.times.len() != first.times.len() {
            return Err(Error::MixedEnsemble(
                "records have different lengths".into(),
            ));
        }
    }
    Ok(first)
}

/// `max |u|_inf` over recorded times in `[start, start + len]`, using the
/// all-step window maxima when the window is one of the record's own.
pub(crate) fn window_sup(rec: &TrajectoryRecord, start: f64, len: f64) -> f64 {
    let eps = 1e-9 * (1.0 + len);
    if (rec.window - len).abs() <= eps {
        let k = start / len;
        if (k - k.round()).abs() <= 1e-9 {
            if let Some(&m) = rec.window_sup.get(k.round() as usize) {
                return m;
            }
        }
    }
    rec.times
        .iter()
        .zip(&rec.sup)
        .filter(|(t, _)| **t >= start - eps && **t <= start + len + eps)
        .map(|(_, s)| *s)
        .fold(0.0, f64::max)
}
