//! Small statistics toolkit shared by the estimators.

use serde::Serialize;

/// Sample mean, unbiased variance and a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub n_samples: usize,
    pub mean: f64,
    pub variance: f64,
    pub ci95_halfwidth: f64,
}

impl EnsembleStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        Accumulator::from_iter(samples.iter().copied()).stats()
    }

    /// Stats of `mean` with externally supplied standard error (e.g. batch means).
    pub fn with_standard_error(n_samples: usize, mean: f64, se: f64) -> Self {
        let variance = se * se * n_samples as f64;
        Self {
            n_samples,
            mean,
            variance,
            ci95_halfwidth: 1.96 * se,
        }
    }

    pub fn standard_error(&self) -> f64 {
        if self.n_samples == 0 {
            return f64::NAN;
        }
        (self.variance / self.n_samples as f64).sqrt()
    }

    pub fn contains(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.ci95_halfwidth
    }
}

/// Streaming mean/variance accumulator that merges associatively (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        Self { count, mean, m2 }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn stats(&self) -> EnsembleStats {
        let variance = if self.count > 1 {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        } else {
            0.0
        };
        let ci = if self.count > 0 {
            1.96 * (variance / self.count as f64).sqrt()
        } else {
            f64::NAN
        };
        EnsembleStats {
            n_samples: self.count,
            mean: if self.count > 0 { self.mean } else { f64::NAN },
            variance,
            ci95_halfwidth: ci,
        }
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Accumulator::default();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len().min(y.len());
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = (syy - slope * sxy).max(0.0);
    let slope_se = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    LinearFit {
        slope,
        intercept,
        slope_se,
        r2,
    }
}

/// Linear-interpolated empirical quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted(values), 0.5)
}

/// Integrated autocorrelation time `1 + 2 sum rho_k` with Sokal's automatic
/// window (smallest `W` with `W >= c tau(W)`, `c = 5`). Returned in units of
/// samples.
pub fn integrated_autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c = series[..n - lag]
            .iter()
            .zip(&series[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n as f64;
        tau += 2.0 * c / c0;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Batch-means estimate of the mean of a correlated series: `sqrt(n)` batches
/// of equal length (tail remainder dropped).
pub fn batch_means(series: &[f64]) -> EnsembleStats {
    let n = series.len();
    if n < 4 {
        return EnsembleStats::from_samples(series);
    }
    let batches = (n as f64).sqrt().floor() as usize;
    let len = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let bm = EnsembleStats::from_samples(&means);
    let mean = series.iter().sum::<f64>() / n as f64;
    EnsembleStats::with_standard_error(n, mean, bm.standard_error())
}

/// `log(mean(exp(x_i)))` without overflow.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (values.iter().map(|v| (v - m).exp()).sum::<f64>() / values.len() as f64).ln()
}

/// Kish effective sample size of the weights `exp(x_i)`.
pub fn exp_weight_ess(log_weights: &[f64]) -> f64 {
    let m = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return 0.0;
    }
    let (s1, s2) = log_weights.iter().fold((0.0, 0.0), |(a, b), &x| {
        let w = (x - m).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stats_basic() {
        let s = EnsembleStats::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.n_samples, 4);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.ci95_halfwidth - 1.96 * (5.0 / 12.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn iact_of_white_noise_is_near_one() {
        let mut rng = crate::noise::RngStream::new(1, 1);
        let x: Vec<f64> = (0..20_000).map(|_| rng.normal()).collect();
        let tau = integrated_autocorrelation_time(&x);
        assert!((tau - 1.0).abs() < 0.2, "{tau}");
    }

    #[test]
    fn iact_of_ar1() {
        // AR(1) with phi = 0.9: tau = (1 + phi)/(1 - phi) = 19
        let mut rng = crate::noise::RngStream::new(2, 1);
        let mut x = 0.0;
        let series: Vec<f64> = (0..200_000)
            .map(|_| {
                x = 0.9 * x + rng.normal();
                x
            })
            .collect();
        let tau = integrated_autocorrelation_time(&series);
        assert!((tau - 19.0).abs() < 3.0, "{tau}");
        let bm = batch_means(&series);
        let naive = EnsembleStats::from_samples(&series);
        assert!(bm.standard_error() > 3.0 * naive.standard_error());
    }

    proptest! {
        #[test]
        fn accumulator_merge_matches_concatenation(
            a in prop::collection::vec(-1e3f64..1e3, 0..40),
            b in prop::collection::vec(-1e3f64..1e3, 0..40),
        ) {
            let left: Accumulator = a.iter().copied().collect();
            let right: Accumulator = b.iter().copied().collect();
            let merged = left.merge(&right).stats();
            let all: Vec<f64> = a.iter().chain(&b).copied().collect();
            let direct = EnsembleStats::from_samples(&all);
            prop_assert_eq!(merged.n_samples, direct.n_samples);
            if direct.n_samples > 0 {
                prop_assert!((merged.mean - direct.mean).abs() < 1e-9);
                prop_assert!((merged.variance - direct.variance).abs() < 1e-6 * (1.0 + direct.variance));
            }
        }
    }

    #[test]
    fn log_mean_exp_handles_large_values() {
        let v = [1000.0, 1000.0];
        assert!((log_mean_exp(&v) - 1000.0).abs() < 1e-12);
        assert!((exp_weight_ess(&[0.0, 0.0, 0.0]) - 3.0).abs() < 1e-12);
        assert!(exp_weight_ess(&[0.0, -1000.0]) < 1.01);
    }
}
