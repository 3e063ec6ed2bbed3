use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{Integrator, RecordMeta, SimParams, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::lattice::{SineTransform, SpectralField};
use crate::noise::{NoiseSpec, RngStream};
use crate::stats::{median, EnsembleStats};

/// Above this censoring fraction a ball counts as unreachable at the horizon.
pub const UNREACHABLE_CENSORING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceRow {
    pub m: f64,
    /// First checked time with both copies in `B_{m,L}`; `None` if censored.
    pub tau: Vec<Option<f64>>,
    pub censored: f64,
    /// Median with censored paths ordered last; `None` when over half are censored.
    pub median: Option<f64>,
    pub unreachable: bool,
    /// `(gamma, E exp(gamma tau))`, censored paths counted at the horizon.
    pub exp_moments: Vec<(f64, EnsembleStats)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceReport {
    pub l: f64,
    pub horizon: f64,
    pub check_every: f64,
    pub rows: Vec<RecurrenceRow>,
}

impl RecurrenceReport {
    pub fn max_censoring(&self) -> f64 {
        self.rows.iter().map(|r| r.censored).fold(0.0, f64::max)
    }

    /// Medians strictly increase along `m_list`.
    pub fn medians_increasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| match (w[0].median, w[1].median) {
                (Some(a), Some(b)) => b > a,
                (Some(_), None) => true,
                _ => false,
            })
    }
}

/// `1 / (4 mean tau)`, censored paths counted at the horizon.
pub fn fit_gamma(tau: &[Option<f64>], horizon: f64) -> f64 {
    let mean = tau.iter().map(|t| t.unwrap_or(horizon)).sum::<f64>() / tau.len().max(1) as f64;
    if mean > 0.0 {
        0.25 / mean
    } else {
        f64::INFINITY
    }
}

fn in_ball(u: &SpectralField, sup: f64, m: f64, l: f64) -> bool {
    u.l2_norm() <= 1.0 / m && sup <= l
}

/// Hitting times of `B_{m,L} = {||u|| <= 1/m, |u|_inf <= L}` by two
/// independent copies simultaneously, checked every `check_stride` steps.
/// A pair stops once it has entered every ball. Pair `i` uses streams
/// `first_stream + 2i` and `first_stream + 2i + 1` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn recurrence_experiment(
    u0_a: &SpectralField,
    u0_b: &SpectralField,
    params: &SimParams,
    spec: &NoiseSpec,
    seed: u64,
    first_stream: u64,
    count: usize,
    m_list: &[f64],
    l: f64,
    check_stride: usize,
    gammas: &[f64],
) -> Result<RecurrenceReport> {
    if m_list.is_empty() || m_list.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::param("m_list", "ball indices must be positive"));
    }
    if !(l > 0.0) {
        return Err(Error::param("L", "must be positive"));
    }
    if count == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if params.control.is_some() {
        return Err(Error::param(
            "control",
            "recurrence uses independent uncontrolled copies",
        ));
    }
    let integ = Integrator::new(params, spec)?;
    let tr = SineTransform::new(params.lattice);
    let steps = params.steps();
    let stride = check_stride.max(1);
    let taus: Vec<Vec<Option<f64>>> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut ra = RngStream::new(seed, first_stream + 2 * i);
            let mut rb = RngStream::new(seed, first_stream + 2 * i + 1);
            let (mut a, mut b) = (u0_a.clone(), u0_b.clone());
            let (mut wa, mut wb) = (integ.workspace(), integ.workspace());
            let mut hit: Vec<Option<f64>> = vec![None; m_list.len()];
            for k in 0..=steps {
                if k % stride == 0 {
                    if !(a.is_finite() && b.is_finite()) {
                        let meta = RecordMeta::new(params, stride);
                        return Err(Error::BlowUp {
                            time: k as f64 * params.dt,
                            partial: Box::new(TrajectoryRecord::empty(meta, 1.0)),
                        });
                    }
                    let (sa, sb) = (tr.synthesize(&a).sup(), tr.synthesize(&b).sup());
                    for (h, &m) in hit.iter_mut().zip(m_list) {
                        if h.is_none() && in_ball(&a, sa, m, l) && in_ball(&b, sb, m, l) {
                            *h = Some(k as f64 * params.dt);
                        }
                    }
                    if hit.iter().all(Option::is_some) {
                        break;
                    }
                }
                if k < steps {
                    integ.step(&mut a, None, &mut ra, &mut wa);
                    integ.step(&mut b, None, &mut rb, &mut wb);
                }
            }
            Ok(hit)
        })
        .collect::<Result<_>>()?;
    let horizon = steps as f64 * params.dt;
    let rows = m_list
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let tau: Vec<Option<f64>> = taus.iter().map(|t| t[j]).collect();
            let censored = tau.iter().filter(|t| t.is_none()).count() as f64 / count as f64;
            let ordered: Vec<f64> = tau.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
            let med = median(&ordered);
            let exp_moments = gammas
                .iter()
                .map(|&g| {
                    let v: Vec<f64> = tau
                        .iter()
                        .map(|t| (g * t.unwrap_or(horizon)).exp())
                        .collect();
                    (g, EnsembleStats::from_samples(&v))
                })
                .collect();
            RecurrenceRow {
                m,
                tau,
                censored,
                median: med.is_finite().then_some(med),
                unreachable: censored > UNREACHABLE_CENSORING,
                exp_moments,
            }
        })
        .collect();
    Ok(RecurrenceReport {
        l,
        horizon,
        check_every: stride as f64 * params.dt,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ModeLattice;

    #[test]
    fn origin_is_already_recurrent() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let spec = NoiseSpec::power_law(l, 1.0, 2.0).unwrap();
        let p = SimParams::new(l, 1e-2, 1.0);
        let u0 = SpectralField::zeros(l);
        let rep =
            recurrence_experiment(&u0, &u0, &p, &spec, 1, 0, 4, &[1.0], 10.0, 1, &[0.5]).unwrap();
        assert!(rep.rows[0].tau.iter().all(|t| *t == Some(0.0)));
        assert_eq!(rep.rows[0].exp_moments[0].1.mean, 1.0);
    }

    #[test]
    fn zero_noise_hits_within_decay_envelope() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let p = SimParams::new(l, 1e-3, 5.0);
        let a = &SpectralField::eigenmode(l, &[1]).unwrap() * 2.0;
        let b = a.scaled(crate::C64::new(0.0, 1.0));
        let ms = [1.0, 2.0, 4.0];
        let rep =
            recurrence_experiment(&a, &b, &p, &NoiseSpec::zero(l), 1, 0, 1, &ms, 10.0, 10, &[])
                .unwrap();
        for (row, m) in rep.rows.iter().zip(ms) {
            let tau = row.tau[0].unwrap();
            assert!(tau <= (2.0 * m).ln() + 0.01, "m={m} tau={tau}");
        }
        assert!(rep.medians_increasing());
    }

    #[test]
    fn smaller_balls_are_hit_later() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let spec = NoiseSpec::power_law(l, 0.3, 2.0).unwrap();
        let p = SimParams::new(l, 1e-2, 40.0);
        let u0 = &SpectralField::eigenmode(l, &[1]).unwrap() * 2.0;
        let rep = recurrence_experiment(
            &u0,
            &u0,
            &p,
            &spec,
            5,
            0,
            32,
            &[1.0, 2.0, 4.0],
            5.0,
            5,
            &[0.1],
        )
        .unwrap();
        assert!(
            rep.max_censoring() <= 0.2,
            "{:?}",
            rep.rows.iter().map(|r| r.censored).collect::<Vec<_>>()
        );
        assert!(rep.medians_increasing());
        let g = fit_gamma(&rep.rows[0].tau, rep.horizon);
        assert!(g > 0.0 && g.is_finite());
        assert!(recurrence_experiment(&u0, &u0, &p, &spec, 5, 0, 1, &[0.0], 5.0, 5, &[]).is_err());
    }
}
