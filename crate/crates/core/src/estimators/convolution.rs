use serde::Serialize;

use super::{check_ensemble, window_sup};
use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::stats::exp_weight_ess;

use super::moments::{ExpMoment, MIN_EXP_ESS};

/// Allowed spread `max/min - 1` of `m_p / sqrt(p)` for the growth to count
/// as square-root scaling.
pub const RATIO_SPREAD_TOL: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvolutionMoment {
    pub p: u32,
    /// `(E sup |z|_inf^{2p})^{1/(2p)}`.
    pub m_p: f64,
    pub ratio: f64,
    pub ess: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvolutionReport {
    pub n_samples: usize,
    pub window: f64,
    pub moments: Vec<ConvolutionMoment>,
    /// Least-squares `kappa` in `m_p = kappa sqrt(p)`.
    pub kappa: f64,
    pub rms_relative_residual: f64,
    /// `max/min - 1` of `m_p / sqrt(p)` over the non-degenerate orders.
    pub ratio_spread: f64,
    /// `E exp(c sup^2)` at `c = 1/(4 kappa^2)`.
    pub exp_moment: ExpMoment,
}

impl ConvolutionReport {
    pub fn stable(&self, tol: f64) -> bool {
        self.ratio_spread <= tol
    }
}

/// Moment growth of the stochastic convolution's supremum over `[0, window]`.
pub fn convolution_moment_report(
    ensemble: &[TrajectoryRecord],
    p_list: &[u32],
    window: f64,
) -> Result<ConvolutionReport> {
    check_ensemble(ensemble)?;
    if p_list.is_empty() || p_list.contains(&0) {
        return Err(Error::param("p_list", "orders must be positive"));
    }
    let sups: Vec<f64> = ensemble
        .iter()
        .map(|r| window_sup(r, 0.0, window))
        .collect();
    let n = sups.len() as f64;
    let max = sups.iter().cloned().fold(0.0, f64::max);
    let moments: Vec<ConvolutionMoment> = p_list
        .iter()
        .map(|&p| {
            let e = 2.0 * p as f64;
            if max == 0.0 {
                return ConvolutionMoment {
                    p,
                    m_p: 0.0,
                    ratio: 0.0,
                    ess: n,
                    degenerate: false,
                };
            }
            // scale by the maximum so high powers stay finite
            let mean = sups.iter().map(|s| (s / max).powf(e)).sum::<f64>() / n;
            let m_p = max * mean.powf(1.0 / e);
            let logs: Vec<f64> = sups
                .iter()
                .map(|s| {
                    if *s > 0.0 {
                        e * s.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let ess = exp_weight_ess(&logs);
            ConvolutionMoment {
                p,
                m_p,
                ratio: m_p / (p as f64).sqrt(),
                ess,
                degenerate: ess < MIN_EXP_ESS,
            }
        })
        .collect();
    let used: Vec<&ConvolutionMoment> = moments.iter().filter(|m| !m.degenerate).collect();
    let num: f64 = used.iter().map(|m| m.m_p * (m.p as f64).sqrt()).sum();
    let den: f64 = used.iter().map(|m| m.p as f64).sum();
    let kappa = if den > 0.0 { num / den } else { f64::NAN };
    let rms_relative_residual = if kappa > 0.0 {
        (used
            .iter()
            .map(|m| (m.ratio / kappa - 1.0).powi(2))
            .sum::<f64>()
            / used.len() as f64)
            .sqrt()
    } else {
        0.0
    };
    let (lo, hi) = used.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), m| {
        (lo.min(m.ratio), hi.max(m.ratio))
    });
    let ratio_spread = if lo > 0.0 && lo.is_finite() {
        hi / lo - 1.0
    } else {
        0.0
    };
    let c = if kappa > 0.0 {
        0.25 / (kappa * kappa)
    } else {
        0.0
    };
    Ok(ConvolutionReport {
        n_samples: sups.len(),
        window,
        moments,
        kappa,
        rms_relative_residual,
        ratio_spread,
        exp_moment: ExpMoment::from_sups(&sups, c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{heat_trajectory, Recording, SimParams};
    use crate::lattice::ModeLattice;
    use crate::noise::{NoiseSpec, RngStream};

    fn heat_ensemble(spec: &NoiseSpec, count: u64) -> Vec<TrajectoryRecord> {
        let p = SimParams::new(spec.lattice(), 1e-2, 1.0);
        let rec = Recording::every(100).with_window(1.0);
        (0..count)
            .map(|i| heat_trajectory(&p, spec, &mut RngStream::new(9, i), &rec).unwrap())
            .collect()
    }

    #[test]
    fn zero_noise_gives_zero_moments() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let ens = heat_ensemble(&NoiseSpec::zero(l), 4);
        let rep = convolution_moment_report(&ens, &[1, 2, 3], 1.0).unwrap();
        assert!(rep.moments.iter().all(|m| m.m_p == 0.0));
        assert!(convolution_moment_report(&ens, &[0], 1.0).is_err());
    }

    #[test]
    fn kappa_is_homogeneous_in_noise() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let spec = NoiseSpec::power_law(l, 1.0, 2.0).unwrap();
        let a = convolution_moment_report(&heat_ensemble(&spec, 200), &[1, 2, 3], 1.0).unwrap();
        let b = convolution_moment_report(&heat_ensemble(&spec.scaled(2.0), 200), &[1, 2, 3], 1.0)
            .unwrap();
        assert!(
            (b.kappa / a.kappa - 2.0).abs() < 1e-9,
            "{} {}",
            a.kappa,
            b.kappa
        );
        assert!(a.exp_moment.in_range());
    }

    #[test]
    fn single_mode_moments_match_sup_samples() {
        let l = ModeLattice::new(1, 8, 4).unwrap();
        let spec = NoiseSpec::single_mode(l, &[1], 1.0).unwrap();
        let ens = heat_ensemble(&spec, 400);
        let rep = convolution_moment_report(&ens, &[1], 1.0).unwrap();
        let direct = ens.iter().map(|r| r.window_sup[0].powi(2)).sum::<f64>() / 400.0;
        assert!((rep.moments[0].m_p - direct.sqrt()).abs() < 1e-12);
    }
}
