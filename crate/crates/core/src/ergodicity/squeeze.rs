use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{simulate_pair, Control, Recording, SimParams};
use crate::error::{Error, Result};
use crate::lattice::SpectralField;
use crate::noise::{NoiseSpec, RngStream};
use crate::stats::{linear_fit, median};

/// Below this size `||w||` counts as synchronized and is left out of slope fits.
pub const SYNC_FLOOR: f64 = 1e-10;

/// Difference `w = u - v` of free/controlled pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SqueezeRecord {
    pub lambda: f64,
    pub modes: usize,
    pub shared_noise: bool,
    pub times: Vec<f64>,
    pub w0: f64,
    /// `log ||w(t)||` per trajectory (`-inf` where `w` vanishes).
    pub log_w: Vec<Vec<f64>>,
    /// Slope of `log ||w||` over the points with `||w|| > SYNC_FLOOR`; `None`
    /// when fewer than two such points exist.
    pub slopes: Vec<Option<f64>>,
    pub control_energy: Vec<f64>,
    /// `int |u|_inf^2 + |v|_inf^2 ds` per trajectory.
    pub sup_budget: Vec<f64>,
}

impl SqueezeRecord {
    /// Fraction of trajectories whose slope is at most `threshold`; pairs that
    /// never separate count as squeezed.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let hits = self
            .slopes
            .iter()
            .filter(|s| s.map_or(true, |v| v <= threshold))
            .count();
        hits as f64 / self.slopes.len().max(1) as f64
    }

    pub fn median_slope(&self) -> f64 {
        let v: Vec<f64> = self
            .slopes
            .iter()
            .map(|s| s.unwrap_or(f64::NEG_INFINITY))
            .collect();
        median(&v)
    }
}

/// Pairs `(u, v)` with `u` free and `v` controlled towards `u` on modes
/// `|s| <= N`. Pair `i` draws from stream `2i` (and `2i + 1` for `v` when
/// noise is independent) of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn foias_prodi_experiment(
    u0_u: &SpectralField,
    u0_v: &SpectralField,
    params: &SimParams,
    spec: &NoiseSpec,
    seed: u64,
    count: usize,
    shared_noise: bool,
    stride: usize,
) -> Result<SqueezeRecord> {
    let control = params
        .control
        .ok_or_else(|| Error::param("control", "the squeeze experiment needs (lambda, N)"))?;
    if control.modes == 0 {
        return Err(Error::param("control.modes", "must be >= 1"));
    }
    if count == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let recording = Recording::every(stride);
    let pairs = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut ru = RngStream::new(seed, 2 * i);
            let mut rv = RngStream::new(seed, 2 * i + 1);
            simulate_pair(
                u0_u,
                u0_v,
                params,
                spec,
                &mut ru,
                &mut rv,
                shared_noise,
                &recording,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let times = pairs[0].difference.times.clone();
    let mut log_w = Vec::with_capacity(count);
    let mut slopes = Vec::with_capacity(count);
    let mut control_energy = Vec::with_capacity(count);
    let mut sup_budget = Vec::with_capacity(count);
    for p in &pairs {
        let d = &p.difference;
        log_w.push(d.l2.iter().map(|w| w.ln()).collect());
        let (x, y): (Vec<f64>, Vec<f64>) = d
            .times
            .iter()
            .zip(&d.l2)
            .filter(|(_, w)| **w > SYNC_FLOOR)
            .map(|(t, w)| (*t, w.ln()))
            .unzip();
        slopes.push((x.len() >= 2).then(|| linear_fit(&x, &y).slope));
        control_energy.push(d.control_energy.last().copied().unwrap_or(0.0));
        sup_budget.push(
            p.u.sup_integral.last().copied().unwrap_or(0.0)
                + p.v.sup_integral.last().copied().unwrap_or(0.0),
        );
    }
    Ok(SqueezeRecord {
        lambda: control.lambda,
        modes: control.modes,
        shared_noise,
        times,
        w0: (u0_u - u0_v).l2_norm(),
        log_w,
        slopes,
        control_energy,
        sup_budget,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SqueezeSummary {
    pub lambda: f64,
    pub modes: usize,
    pub fraction_below: f64,
    pub median_slope: f64,
    pub mean_control_energy: f64,
}

/// Squeeze experiment over a `(lambda, N)` grid with shared noise, reporting
/// the fraction of slopes at or below `threshold`.
#[allow(clippy::too_many_arguments)]
pub fn squeeze_sweep(
    u0_u: &SpectralField,
    u0_v: &SpectralField,
    params: &SimParams,
    spec: &NoiseSpec,
    lambdas: &[f64],
    modes: &[usize],
    threshold: f64,
    seed: u64,
    count: usize,
    stride: usize,
) -> Result<Vec<SqueezeSummary>> {
    let mut out = Vec::new();
    for &n in modes {
        for &lambda in lambdas {
            let p = params.clone().with_control(Control { lambda, modes: n });
            let rec = foias_prodi_experiment(u0_u, u0_v, &p, spec, seed, count, true, stride)?;
            out.push(SqueezeSummary {
                lambda,
                modes: n,
                fraction_below: rec.fraction_below(threshold),
                median_slope: rec.median_slope(),
                mean_control_energy: rec.control_energy.iter().sum::<f64>() / count as f64,
            });
        }
    }
    Ok(out)
}
