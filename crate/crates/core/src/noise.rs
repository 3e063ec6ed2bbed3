//! Wiener forcing `zeta(t, x) = sum_s b_s beta_s(t) phi_s(x)` with complex
//! Brownian motions `beta_s = beta_s^+ + i beta_s^-`.

use rand::RngCore;
use rand_chacha::rand_core::{self, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ModeLattice, SpectralField};
use crate::C64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// `b_s = amplitude * |s|^{-exponent}`.
    PowerLaw {
        amplitude: f64,
        exponent: f64,
    },
    /// Explicit `(s, b_s)` entries; unlisted modes carry `b_s = 0`.
    Table {
        entries: Vec<(Vec<usize>, f64)>,
    },
    SingleMode {
        mode: Vec<usize>,
        amplitude: f64,
    },
}

/// Noise coefficients resolved on a lattice. Modes outside the lattice are
/// truncated to `b_s = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    lattice: ModeLattice,
    kind: NoiseKind,
    coeffs: Vec<f64>,
    dropped: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(lattice: ModeLattice, kind: NoiseKind) -> Result<Self> {
        let mut coeffs = vec![0.0; lattice.len()];
        let mut dropped = Vec::new();
        match &kind {
            NoiseKind::PowerLaw {
                amplitude,
                exponent,
            } => {
                check_finite("noise.amplitude", *amplitude)?;
                check_finite("noise.exponent", *exponent)?;
                for (i, b) in coeffs.iter_mut().enumerate() {
                    *b = amplitude * lattice.eigenvalue(i).powf(-0.5 * exponent);
                }
                // Shell 2M of the same law, reported as truncation estimate.
                let outer = ModeLattice::new(
                    lattice.dimension(),
                    2 * lattice.cutoff(),
                    lattice.oversample(),
                )?;
                for i in 0..outer.len() {
                    let s = outer.mode(i);
                    if lattice.index(&s).is_none() {
                        dropped.push(amplitude * outer.eigenvalue(i).powf(-0.5 * exponent));
                    }
                }
            }
            NoiseKind::Table { entries } => {
                for (mode, b) in entries {
                    check_finite("noise.table", *b)?;
                    if mode.len() != lattice.dimension() || mode.iter().any(|&s| s == 0) {
                        return Err(Error::param(
                            "noise.table",
                            format!("mode {mode:?} is not a valid multi-index"),
                        ));
                    }
                    match lattice.index(mode) {
                        Some(i) => coeffs[i] = *b,
                        None => dropped.push(*b),
                    }
                }
            }
            NoiseKind::SingleMode { mode, amplitude } => {
                check_finite("noise.amplitude", *amplitude)?;
                let i = lattice.index(mode).ok_or_else(|| {
                    Error::param("noise.mode", format!("{mode:?} outside lattice {lattice}"))
                })?;
                coeffs[i] = *amplitude;
            }
        }
        Ok(Self {
            lattice,
            kind,
            coeffs,
            dropped,
        })
    }

    pub fn zero(lattice: ModeLattice) -> Self {
        Self {
            lattice,
            kind: NoiseKind::Table {
                entries: Vec::new(),
            },
            coeffs: vec![0.0; lattice.len()],
            dropped: Vec::new(),
        }
    }

    pub fn power_law(lattice: ModeLattice, amplitude: f64, exponent: f64) -> Result<Self> {
        Self::new(
            lattice,
            NoiseKind::PowerLaw {
                amplitude,
                exponent,
            },
        )
    }

    pub fn single_mode(lattice: ModeLattice, mode: &[usize], amplitude: f64) -> Result<Self> {
        Self::new(
            lattice,
            NoiseKind::SingleMode {
                mode: mode.to_vec(),
                amplitude,
            },
        )
    }

    pub fn lattice(&self) -> ModeLattice {
        self.lattice
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    /// `b_s` per flat mode index.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, mode: &[usize]) -> f64 {
        self.lattice.index(mode).map_or(0.0, |i| self.coeffs[i])
    }

    /// Same family with every `b_s` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lattice: self.lattice,
            kind: self.kind.clone(),
            coeffs: self.coeffs.iter().map(|b| b * factor).collect(),
            dropped: self.dropped.iter().map(|b| b * factor).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&b| b == 0.0)
    }

    /// `(B_*, B_0)` carried by modes cut off by the lattice. For power laws
    /// this is the next shell `{1..2M}^n` minus the lattice, a lower estimate
    /// of the full tail.
    pub fn truncation_error(&self) -> (f64, f64) {
        (
            self.dropped.iter().map(|b| b.abs()).sum(),
            self.dropped.iter().map(|b| b * b).sum(),
        )
    }

    /// Restriction to a coarser lattice with the same dimension; `b_s` of the
    /// retained modes are unchanged.
    pub fn restrict(&self, lattice: ModeLattice) -> Result<Self> {
        if lattice.dimension() != self.lattice.dimension() {
            return Err(Error::LatticeMismatch);
        }
        let mut entries = Vec::new();
        for (i, &b) in self.coeffs.iter().enumerate() {
            entries.push((self.lattice.mode(i), b));
        }
        let mut out = Self::new(lattice, NoiseKind::Table { entries })?;
        out.kind = self.kind.clone();
        Ok(out)
    }
}

fn check_finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(field, "must be finite"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseConstants {
    /// `B_* = sum |b_s|`.
    pub b_star: f64,
    /// `B_0 = sum b_s^2`.
    pub b_0: f64,
    /// `(m, B_m)` with `B_m = sum b_s^2 |s|^{2m}`.
    pub b_m: Vec<(f64, f64)>,
}

impl NoiseConstants {
    pub fn order(&self, m: f64) -> Option<f64> {
        self.b_m.iter().find(|(k, _)| *k == m).map(|&(_, v)| v)
    }
}

pub fn coupling_constants(spec: &NoiseSpec, orders: &[f64]) -> NoiseConstants {
    let lattice = spec.lattice;
    let b_star = spec.coeffs.iter().map(|b| b.abs()).sum();
    let b_0 = spec.coeffs.iter().map(|b| b * b).sum();
    let b_m = orders
        .iter()
        .map(|&m| {
            let v = spec
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, b)| b * b * lattice.eigenvalue(i).powf(m))
                .sum();
            (m, v)
        })
        .collect();
    NoiseConstants { b_star, b_0, b_m }
}

/// True iff every lattice mode with `|s| <= radius` has `b_s != 0`.
pub fn nondegeneracy_check(spec: &NoiseSpec, radius: usize) -> Result<bool> {
    if radius == 0 {
        return Err(Error::param("N", "must be >= 1"));
    }
    if !spec.lattice.covers_ball(radius) {
        return Err(Error::BallOutsideLattice {
            radius,
            cutoff: spec.lattice.cutoff(),
        });
    }
    let limit = radius * radius;
    Ok((0..spec.lattice.len())
        .filter(|&i| spec.lattice.mode_norm_sq(i) <= limit)
        .all(|i| spec.coeffs[i] != 0.0))
}

/// Counter-based random stream. A `(master_seed, stream_id)` pair selects an
/// independent ChaCha8 keystream; the counter is the word position within it,
/// so any position can be reproduced bit-for-bit without replaying the stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self::at(master_seed, stream_id, 0)
    }

    pub fn at(master_seed: u64, stream_id: u64, counter: u128) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        inner.set_word_pos(counter);
        Self {
            master_seed,
            stream_id,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Standard complex normal with independent `N(0, 1)` real and imaginary parts.
    pub fn complex_normal(&mut self) -> C64 {
        let re = self.normal();
        let im = self.normal();
        C64::new(re, im)
    }

    pub fn fill_complex_normal(&mut self, out: &mut [C64]) {
        for z in out {
            *z = self.complex_normal();
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand_core::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Increment `dzeta_s = b_s (xi_s^+ + i xi_s^-) sqrt(dt)` over a step `dt`.
pub fn sample_increment(spec: &NoiseSpec, dt: f64, rng: &mut RngStream) -> Result<SpectralField> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be > 0"));
    }
    let sq = dt.sqrt();
    let coeffs = spec
        .coeffs
        .iter()
        .map(|&b| {
            let xi = rng.complex_normal();
            if b == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                xi * (b * sq)
            }
        })
        .collect();
    SpectralField::from_coeffs(spec.lattice, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lat(n: usize, m: usize) -> ModeLattice {
        ModeLattice::new(n, m, 2).unwrap()
    }

    #[test]
    fn single_mode_constants() {
        let spec = NoiseSpec::single_mode(lat(1, 4), &[1], 1.0).unwrap();
        let c = coupling_constants(&spec, &[0.5, 1.0, 3.0]);
        assert_eq!(c.b_star, 1.0);
        assert_eq!(c.b_0, 1.0);
        assert!(c.b_m.iter().all(|&(_, v)| v == 1.0));
    }

    #[test]
    fn power_law_partial_sums_approach_zeta_values() {
        let spec = NoiseSpec::power_law(lat(1, 4000), 1.0, 2.0).unwrap();
        let c = coupling_constants(&spec, &[]);
        // zeta(2) and zeta(4) partial sums, tails ~ 1/M and 1/(3 M^3)
        let z2: f64 = (1..=4000).map(|s| 1.0 / (s as f64).powi(2)).sum();
        let z4: f64 = (1..=4000).map(|s| 1.0 / (s as f64).powi(4)).sum();
        assert!((c.b_star - z2).abs() < 1e-12);
        assert!((c.b_0 - z4).abs() < 1e-12);
        assert!((c.b_star - PI * PI / 6.0).abs() < 3e-4);
        assert!((c.b_0 - PI.powi(4) / 90.0).abs() < 1e-10);
    }

    #[test]
    fn doubling_scales_constants() {
        let spec = NoiseSpec::power_law(lat(2, 6), 0.7, 1.5).unwrap();
        let a = coupling_constants(&spec, &[1.0]);
        let b = coupling_constants(&spec.scaled(2.0), &[1.0]);
        assert!((b.b_0 - 4.0 * a.b_0).abs() < 1e-12);
        assert!((b.b_star - 2.0 * a.b_star).abs() < 1e-12);
        assert!(a.b_0 <= a.b_star * a.b_star);
    }

    #[test]
    fn table_truncates_outside_lattice() {
        let spec = NoiseSpec::new(
            lat(1, 3),
            NoiseKind::Table {
                entries: vec![(vec![2], 0.5), (vec![9], 2.0)],
            },
        )
        .unwrap();
        assert_eq!(spec.coeffs(), &[0.0, 0.5, 0.0]);
        assert_eq!(spec.truncation_error(), (2.0, 4.0));
        assert!(NoiseSpec::new(
            lat(1, 3),
            NoiseKind::Table {
                entries: vec![(vec![0], 1.0)]
            }
        )
        .is_err());
    }

    #[test]
    fn nondegeneracy_examples() {
        let l = lat(2, 5);
        let pl = NoiseSpec::power_law(l, 1.0, 2.0).unwrap();
        for n in 1..=5 {
            assert!(nondegeneracy_check(&pl, n).unwrap());
        }
        assert!(nondegeneracy_check(&pl, 6).is_err());
        let single = NoiseSpec::single_mode(lat(1, 4), &[1], 1.0).unwrap();
        assert!(!nondegeneracy_check(&single, 2).unwrap());
        assert!(nondegeneracy_check(&single, 1).unwrap());
        let table = NoiseSpec::new(
            lat(1, 4),
            NoiseKind::Table {
                entries: vec![
                    (vec![1], 0.0),
                    (vec![2], 1.0),
                    (vec![3], 1.0),
                    (vec![4], 1.0),
                ],
            },
        )
        .unwrap();
        for n in 1..=4 {
            assert!(!nondegeneracy_check(&table, n).unwrap());
        }
    }

    #[test]
    fn zero_coefficients_give_exact_zero_increments() {
        let spec = NoiseSpec::single_mode(lat(1, 5), &[2], 1.0).unwrap();
        let mut rng = RngStream::new(1, 0);
        let inc = sample_increment(&spec, 0.1, &mut rng).unwrap();
        for (i, c) in inc.coeffs().iter().enumerate() {
            if i != 1 {
                assert_eq!(*c, C64::new(0.0, 0.0));
            }
        }
        assert!(sample_increment(&spec, 0.0, &mut rng).is_err());
    }

    #[test]
    fn increments_are_reproducible_from_the_counter() {
        let spec = NoiseSpec::power_law(lat(1, 8), 1.0, 1.0).unwrap();
        let mut a = RngStream::new(42, 7);
        let _ = sample_increment(&spec, 0.01, &mut a).unwrap();
        let pos = a.counter();
        let x = sample_increment(&spec, 0.01, &mut a).unwrap();
        let mut b = RngStream::at(42, 7, pos);
        let y = sample_increment(&spec, 0.01, &mut b).unwrap();
        assert_eq!(x, y);
        let mut c = RngStream::new(42, 8);
        assert_ne!(sample_increment(&spec, 0.01, &mut c).unwrap(), x);
    }

    #[test]
    fn increment_second_moment() {
        let spec = NoiseSpec::single_mode(lat(1, 1), &[1], 1.0).unwrap();
        let mut rng = RngStream::new(5, 0);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| sample_increment(&spec, 0.01, &mut rng).unwrap().coeffs()[0].norm_sqr())
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.02).abs() < 3.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn increment_variance_linear_in_dt() {
        let spec = NoiseSpec::single_mode(lat(1, 1), &[1], 1.0).unwrap();
        let dts = [1e-3, 1e-2, 1e-1];
        let mut vars = Vec::new();
        for (k, &dt) in dts.iter().enumerate() {
            let mut rng = RngStream::new(17, k as u64);
            let n = 100_000;
            let v: f64 = (0..n)
                .map(|_| {
                    sample_increment(&spec, dt, &mut rng).unwrap().coeffs()[0]
                        .re
                        .powi(2)
                })
                .sum::<f64>()
                / n as f64;
            vars.push(v);
        }
        // least-squares slope through the origin of var vs dt
        let slope = dts.iter().zip(&vars).map(|(d, v)| d * v).sum::<f64>()
            / dts.iter().map(|d| d * d).sum::<f64>();
        assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn increments_uncorrelated_across_modes() {
        let spec = NoiseSpec::power_law(lat(1, 2), 1.0, 0.0).unwrap();
        let mut rng = RngStream::new(3, 1);
        let n = 100_000;
        let mut sxy = 0.0;
        let (mut sxx, mut syy) = (0.0, 0.0);
        for _ in 0..n {
            let inc = sample_increment(&spec, 1.0, &mut rng).unwrap();
            let (x, y) = (inc.coeffs()[0].re, inc.coeffs()[1].re);
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr.abs() < 3.0 / (n as f64).sqrt());
    }
}
