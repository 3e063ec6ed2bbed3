use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{simulate_pair, PairRecord, Recording, SimParams};
use crate::error::{Error, Result};
use crate::lattice::SpectralField;
use crate::noise::{NoiseSpec, RngStream};
use crate::stats::{linear_fit, EnsembleStats};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FellerRow {
    pub delta: f64,
    pub sup_diff: EnsembleStats,
    pub l2_diff: EnsembleStats,
    /// Recorded points where `||w(t)|| > ||w_0|| exp(3 |i + a| int |u|^2 + |u'|^2)`;
    /// `None` when `r != 1` and the bound does not apply.
    pub gronwall_violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FellerReport {
    pub t_eval: f64,
    pub rows: Vec<FellerRow>,
    /// `E||w||(delta_{k+1}) / E||w||(delta_k)` for consecutive deltas.
    pub ratios: Vec<f64>,
    /// Slope of `log E||w||` against `log delta` over positive deltas.
    pub rate_exponent: f64,
}

impl FellerReport {
    /// Differences shrink with delta at a rate near linear.
    pub fn continuous(&self) -> bool {
        let shrinking = self.rows.windows(2).all(|w| {
            w[1].l2_diff.mean <= w[0].l2_diff.mean && w[1].sup_diff.mean <= w[0].sup_diff.mean
        });
        shrinking && (self.rate_exponent - 1.0).abs() <= 0.3
    }
}

/// Unit-norm random direction on modes `|s| <= cutoff/2`, fixed by `seed`.
pub fn perturbation_direction(u0: &SpectralField, seed: u64) -> SpectralField {
    let lattice = u0.lattice();
    let mut rng = RngStream::new(seed, u64::MAX);
    let dir = SpectralField::random(lattice, 1.0, &mut rng)
        .galerkin_project((lattice.cutoff() / 2).max(1));
    let norm = dir.l2_norm();
    &dir * (1.0 / norm)
}

/// Shared-noise pairs from `u0` and `u0 + delta e` for each delta; the same
/// noise streams are reused across deltas.
#[allow(clippy::too_many_arguments)]
pub fn coupling_stability(
    u0: &SpectralField,
    deltas: &[f64],
    params: &SimParams,
    spec: &NoiseSpec,
    seed: u64,
    t_eval: f64,
    count: usize,
    stride: usize,
) -> Result<FellerReport> {
    if deltas.iter().any(|d| !(*d >= 0.0)) || deltas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::param(
            "deltas",
            "must be non-negative and decreasing",
        ));
    }
    if count == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let run = SimParams {
        t_final: t_eval,
        control: None,
        ..params.clone()
    };
    let dir = perturbation_direction(u0, seed);
    let recording = Recording::every(stride);
    let growth = 3.0 * (1.0 + params.a * params.a).sqrt();
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let v0 = u0 + &(&dir * delta);
        let w0 = (u0 - &v0).l2_norm();
        let pairs: Vec<PairRecord> = (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let mut ru = RngStream::new(seed, i);
                let mut rv = RngStream::new(seed, i);
                simulate_pair(u0, &v0, &run, spec, &mut ru, &mut rv, true, &recording)
            })
            .collect::<Result<_>>()?;
        let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
        let sup: Vec<f64> = pairs.iter().map(|p| last(&p.difference.sup)).collect();
        let l2: Vec<f64> = pairs.iter().map(|p| last(&p.difference.l2)).collect();
        let gronwall_violations = (params.r == 1.0).then(|| {
            pairs
                .iter()
                .map(|p| {
                    p.difference
                        .l2
                        .iter()
                        .zip(p.u.sup_integral.iter().zip(&p.v.sup_integral))
                        .filter(|(w, (iu, iv))| {
                            **w > w0 * (growth * (*iu + *iv)).exp() * (1.0 + 1e-9) + 1e-300
                        })
                        .count()
                })
                .sum()
        });
        rows.push(FellerRow {
            delta,
            sup_diff: EnsembleStats::from_samples(&sup),
            l2_diff: EnsembleStats::from_samples(&l2),
            gronwall_violations,
        });
    }
    let ratios = rows
        .windows(2)
        .map(|w| w[1].l2_diff.mean / w[0].l2_diff.mean)
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.delta > 0.0 && r.l2_diff.mean > 0.0)
        .map(|r| (r.delta.ln(), r.l2_diff.mean.ln()))
        .unzip();
    let rate_exponent = if x.len() >= 2 {
        linear_fit(&x, &y).slope
    } else {
        f64::NAN
    };
    Ok(FellerReport {
        t_eval,
        rows,
        ratios,
        rate_exponent,
    })
}
