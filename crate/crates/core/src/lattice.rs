//! Sine-basis substrate on `K = [0, pi]^n`.
//!
//! A field is stored through its coefficients in the orthonormal Dirichlet
//! eigenbasis
//!
//! ```text
//! phi_s(x) = (2/pi)^{n/2} sin(s_1 x_1) ... sin(s_n x_n),    -Lap phi_s = |s|^2 phi_s
//! ```
//!
//! for multi-indices `s` in `{1..M}^n`. Coefficients are laid out row-major
//! with the last axis fastest. Physical values live on the interior grid
//! `x_k = pi k / (P + 1)`, `k = 1..P`, where the one-dimensional transform
//! between the two is a DST-I evaluated through a complex FFT of length
//! `2(P + 1)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Chebyshev radius (in grid cells) of the pair window used by the discrete
/// Hoelder seminorm when `n >= 2`.
pub const HOLDER_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeLattice {
    dimension: usize,
    cutoff: usize,
    oversample: usize,
}

impl ModeLattice {
    pub const DEFAULT_OVERSAMPLE: usize = 4;

    pub fn new(dimension: usize, cutoff: usize, oversample: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::param("dimension", "must be >= 1"));
        }
        if cutoff == 0 {
            return Err(Error::param("modes", "must be >= 1"));
        }
        if oversample < 2 {
            return Err(Error::param("grid_oversample", "must be >= 2"));
        }
        let total = cutoff.checked_pow(dimension as u32).and_then(|m| {
            (oversample * cutoff)
                .checked_pow(dimension as u32)
                .map(|_| m)
        });
        if total.is_none() {
            return Err(Error::param("modes", "lattice too large for this platform"));
        }
        Ok(Self {
            dimension,
            cutoff,
            oversample,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    /// Number of modes, `M^n`.
    pub fn len(&self) -> usize {
        self.cutoff.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid points per axis, `oversample * M`.
    pub fn grid_points(&self) -> usize {
        self.oversample * self.cutoff
    }

    pub fn grid_len(&self) -> usize {
        self.grid_points().pow(self.dimension as u32)
    }

    /// Multi-index (1-based) of the mode stored at `index`.
    pub fn mode(&self, index: usize) -> Vec<usize> {
        let mut s = vec![0; self.dimension];
        self.mode_into(index, &mut s);
        s
    }

    fn mode_into(&self, mut index: usize, s: &mut [usize]) {
        for j in (0..self.dimension).rev() {
            s[j] = index % self.cutoff + 1;
            index /= self.cutoff;
        }
    }

    /// Flat storage index of a 1-based multi-index, `None` outside the lattice.
    pub fn index(&self, mode: &[usize]) -> Option<usize> {
        if mode.len() != self.dimension {
            return None;
        }
        let mut idx = 0;
        for &s in mode {
            if s == 0 || s > self.cutoff {
                return None;
            }
            idx = idx * self.cutoff + (s - 1);
        }
        Some(idx)
    }

    /// `|s|^2` as an integer.
    pub fn mode_norm_sq(&self, index: usize) -> usize {
        let mut index = index;
        let mut acc = 0;
        for _ in 0..self.dimension {
            let s = index % self.cutoff + 1;
            acc += s * s;
            index /= self.cutoff;
        }
        acc
    }

    pub fn eigenvalue(&self, index: usize) -> f64 {
        self.mode_norm_sq(index) as f64
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.eigenvalue(i)).collect()
    }

    pub fn modes(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len()).map(move |i| self.mode(i))
    }

    /// True when the Euclidean ball `|s| <= radius` lies inside the cube `{1..M}^n`.
    pub fn covers_ball(&self, radius: usize) -> bool {
        radius <= self.cutoff
    }
}

impl fmt::Display for ModeLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} M={} oversample={}",
            self.dimension, self.cutoff, self.oversample
        )
    }
}

/// Grid spacing for `points` interior points on `[0, pi]`.
pub fn grid_spacing(points: usize) -> f64 {
    PI / (points as f64 + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    lattice: ModeLattice,
    coeffs: Vec<C64>,
}

impl SpectralField {
    pub fn zeros(lattice: ModeLattice) -> Self {
        Self {
            lattice,
            coeffs: vec![C64::new(0.0, 0.0); lattice.len()],
        }
    }

    pub fn from_coeffs(lattice: ModeLattice, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(Error::DimensionMismatch {
                expected: lattice.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self { lattice, coeffs })
    }

    /// The eigenfunction `phi_s`.
    pub fn eigenmode(lattice: ModeLattice, mode: &[usize]) -> Result<Self> {
        let idx = lattice
            .index(mode)
            .ok_or_else(|| Error::param("mode", format!("{mode:?} outside lattice {lattice}")))?;
        let mut f = Self::zeros(lattice);
        f.coeffs[idx] = C64::new(1.0, 0.0);
        Ok(f)
    }

    /// Random band-limited field with complex Gaussian coefficients of
    /// standard deviation `|s|^{-decay}`.
    pub fn random<R: Rng + ?Sized>(lattice: ModeLattice, decay: f64, rng: &mut R) -> Self {
        let coeffs = (0..lattice.len())
            .map(|i| {
                let w = lattice.eigenvalue(i).powf(-0.5 * decay);
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re * w, im * w)
            })
            .collect();
        Self { lattice, coeffs }
    }

    pub fn lattice(&self) -> ModeLattice {
        self.lattice
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }

    pub fn coeff(&self, mode: &[usize]) -> Option<C64> {
        self.lattice.index(mode).map(|i| self.coeffs[i])
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            lattice: self.lattice,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    /// `||u||`, by Parseval the Euclidean norm of the coefficients.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `||u||_m = ( sum_s alpha_s^m |c_s|^2 )^{1/2}`.
    pub fn sobolev_norm(&self, m: f64) -> f64 {
        sobolev_norm_sq(&self.lattice, &self.coeffs, m).sqrt()
    }

    /// Maximum of `|u|` over the oversampled grid. Under-approximates the
    /// true supremum and converges from below as the oversampling grows.
    pub fn sup_norm(&self) -> f64 {
        SineTransform::new(self.lattice).synthesize(self).sup()
    }

    /// Galerkin projection onto modes with `|s| <= radius`.
    pub fn galerkin_project(&self, radius: usize) -> Self {
        let limit = radius.saturating_mul(radius);
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if self.lattice.mode_norm_sq(i) > limit {
                    C64::new(0.0, 0.0)
                } else {
                    c
                }
            })
            .collect();
        Self {
            lattice: self.lattice,
            coeffs,
        }
    }

    /// Full discrete `C^theta` norm: the larger of the sup norm and the
    /// discrete Hoelder quotient `max |u(x) - u(y)| / |x - y|^theta`.
    ///
    /// Pairs range over the whole grid for `n = 1` and over a Chebyshev
    /// window of [`HOLDER_WINDOW`] cells for `n >= 2`.
    pub fn holder_seminorm(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::param("theta", "must lie in (0, 1)"));
        }
        let grid = SineTransform::new(self.lattice).synthesize(self);
        Ok(grid.holder_quotient(theta).max(grid.sup()))
    }

    pub fn interpolation_gap(&self, theta: f64) -> Result<InterpolationGap> {
        if self.is_zero() {
            return Err(Error::ZeroField);
        }
        let grid = SineTransform::new(self.lattice).synthesize(self);
        let sup = grid.sup();
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::param("theta", "must lie in (0, 1)"));
        }
        let holder = grid.holder_quotient(theta).max(sup);
        let n = self.lattice.dimension as f64;
        let denom = n + 2.0 * theta;
        let rhs = interpolation_constant(self.lattice.dimension, theta)
            * self.l2_norm().powf(2.0 * theta / denom)
            * holder.powf(n / denom);
        let r_star = (sup / holder).powf(1.0 / theta);
        Ok(InterpolationGap {
            lhs: sup,
            rhs,
            holder,
            r_star,
        })
    }
}

pub(crate) fn sobolev_norm_sq(lattice: &ModeLattice, coeffs: &[C64], m: f64) -> f64 {
    if m == 0.0 {
        return coeffs.iter().map(|c| c.norm_sqr()).sum();
    }
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| lattice.eigenvalue(i).powf(m) * c.norm_sqr())
        .sum()
}

impl Add for &SpectralField {
    type Output = SpectralField;

    fn add(self, rhs: &SpectralField) -> SpectralField {
        assert_eq!(self.lattice, rhs.lattice, "lattice mismatch");
        SpectralField {
            lattice: self.lattice,
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;

    fn sub(self, rhs: &SpectralField) -> SpectralField {
        assert_eq!(self.lattice, rhs.lattice, "lattice mismatch");
        SpectralField {
            lattice: self.lattice,
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;

    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(C64::new(rhs, 0.0))
    }
}

/// Both sides of the sup-norm interpolation inequality
/// `|u|_inf <= C(n, theta) ||u||^{2 theta/(n + 2 theta)} |u|_{C^theta}^{n/(n + 2 theta)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterpolationGap {
    pub lhs: f64,
    pub rhs: f64,
    pub holder: f64,
    /// `(|u|_inf / |u|_{C^theta})^{1/theta}`; the inequality is asserted when this is `<= 1`.
    pub r_star: f64,
}

impl InterpolationGap {
    pub fn applicable(&self) -> bool {
        self.r_star <= 1.0
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Surface area of the unit sphere in `R^n`.
pub fn unit_sphere_area(n: usize) -> f64 {
    match n {
        0 => 2.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * unit_sphere_area(n - 2) / (n as f64 - 2.0),
    }
}

/// Constant of the interpolation inequality.
///
/// Around a maximiser `x_*` of `|u|` the odd-periodic extension satisfies
/// `|u(x)| >= M - |x - x_*|^theta U`, which vanishes at `r_* <= 1`. The ball of
/// radius `r_*` lies inside one period cell, and `|u|^2` integrated over a
/// period cell equals `2^n ||u||^2`, so
///
/// ```text
/// ||u||^2 >= kappa U^2 r_*^{n + 2 theta},
/// kappa = |S^{n-1}| 2^{-n} (1/n - 2/(n + theta) + 1/(n + 2 theta)).
/// ```
///
/// Substituting `r_* = (M/U)^{1/theta}` gives `C = kappa^{-theta/(n + 2 theta)}`.
pub fn interpolation_constant(n: usize, theta: f64) -> f64 {
    let nf = n as f64;
    let radial = 1.0 / nf - 2.0 / (nf + theta) + 1.0 / (nf + 2.0 * theta);
    let kappa = unit_sphere_area(n) / 2f64.powi(n as i32) * radial;
    kappa.powf(-theta / (nf + 2.0 * theta))
}

/// Values on the uniform interior grid, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    lattice: ModeLattice,
    points: usize,
    values: Vec<C64>,
}

impl GridField {
    pub fn new(lattice: ModeLattice, points: usize, values: Vec<C64>) -> Result<Self> {
        let expected = points.pow(lattice.dimension as u32);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            lattice,
            points,
            values,
        })
    }

    pub fn zeros(lattice: ModeLattice) -> Self {
        Self {
            lattice,
            points: lattice.grid_points(),
            values: vec![C64::new(0.0, 0.0); lattice.grid_len()],
        }
    }

    pub fn lattice(&self) -> ModeLattice {
        self.lattice
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn spacing(&self) -> f64 {
        grid_spacing(self.points)
    }

    /// Physical coordinates of grid point `index`.
    pub fn coordinates(&self, index: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut index = index;
        let mut x = vec![0.0; self.lattice.dimension];
        for j in (0..self.lattice.dimension).rev() {
            x[j] = h * ((index % self.points) + 1) as f64;
            index /= self.points;
        }
        x
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `(int |u|^4)^{1/4}` by the grid quadrature.
    pub fn l4_norm(&self) -> f64 {
        let cell = self.spacing().powi(self.lattice.dimension as i32);
        let sum: f64 = self.values.iter().map(|v| v.norm_sqr().powi(2)).sum();
        (cell * sum).powf(0.25)
    }

    /// Discrete Hoelder quotient over grid pairs (see [`SpectralField::holder_seminorm`]).
    pub fn holder_quotient(&self, theta: f64) -> f64 {
        let h = self.spacing();
        let p = self.points;
        let n = self.lattice.dimension;
        if n == 1 {
            let mut best = 0.0f64;
            for i in 0..p {
                for j in (i + 1)..p {
                    let d = (h * (j - i) as f64).powf(theta);
                    best = best.max((self.values[i] - self.values[j]).norm() / d);
                }
            }
            return best;
        }

        let w = HOLDER_WINDOW as isize;
        let span = (2 * w + 1) as usize;
        // Offsets that are lexicographically positive, with their denominators.
        let mut offsets: Vec<(Vec<isize>, f64)> = Vec::new();
        for code in 0..span.pow(n as u32) {
            let mut c = code;
            let mut off = vec![0isize; n];
            for o in off.iter_mut().rev() {
                *o = (c % span) as isize - w;
                c /= span;
            }
            if off.iter().find(|&&o| o != 0).is_some_and(|&o| o > 0) {
                let dist = off.iter().map(|&o| (o * o) as f64).sum::<f64>().sqrt() * h;
                offsets.push((off, dist.powf(theta)));
            }
        }
        let mut best = 0.0f64;
        let mut here = vec![0isize; n];
        for idx in 0..self.values.len() {
            let mut c = idx;
            for x in here.iter_mut().rev() {
                *x = (c % p) as isize;
                c /= p;
            }
            'off: for (off, denom) in &offsets {
                let mut other = 0usize;
                for j in 0..n {
                    let y = here[j] + off[j];
                    if y < 0 || y >= p as isize {
                        continue 'off;
                    }
                    other = other * p + y as usize;
                }
                best = best.max((self.values[idx] - self.values[other]).norm() / denom);
            }
        }
        best
    }
}

/// Reusable buffers for [`SineTransform`].
#[derive(Debug, Default, Clone)]
pub struct TransformScratch {
    ping: Vec<C64>,
    pong: Vec<C64>,
    line: Vec<C64>,
    fft_buf: Vec<C64>,
    fft_scratch: Vec<C64>,
}

/// Separable DST-I between `M^n` coefficients and a `P^n` interior grid.
#[derive(Clone)]
pub struct SineTransform {
    lattice: ModeLattice,
    points: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SineTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SineTransform")
            .field("lattice", &self.lattice)
            .field("points", &self.points)
            .finish()
    }
}

impl SineTransform {
    /// Transform onto the lattice's oversampled grid.
    pub fn new(lattice: ModeLattice) -> Self {
        Self::with_points(lattice, lattice.grid_points()).expect("grid covers the lattice")
    }

    /// Transform onto a grid with `points` per axis; needs `points >= M`.
    pub fn with_points(lattice: ModeLattice, points: usize) -> Result<Self> {
        if points < lattice.cutoff {
            return Err(Error::param(
                "points",
                format!(
                    "{points} grid points cannot resolve {} modes",
                    lattice.cutoff
                ),
            ));
        }
        let fft = FftPlanner::new().plan_fft_forward(2 * (points + 1));
        Ok(Self {
            lattice,
            points,
            fft,
        })
    }

    pub fn lattice(&self) -> ModeLattice {
        self.lattice
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn scratch(&self) -> TransformScratch {
        TransformScratch::default()
    }

    pub fn synthesize(&self, f: &SpectralField) -> GridField {
        assert_eq!(f.lattice, self.lattice, "lattice mismatch");
        let mut out = Vec::new();
        self.synthesize_into(&f.coeffs, &mut out, &mut self.scratch());
        GridField {
            lattice: self.lattice,
            points: self.points,
            values: out,
        }
    }

    pub fn analyze(&self, g: &GridField) -> Result<SpectralField> {
        if g.lattice.dimension != self.lattice.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.lattice.dimension,
                got: g.lattice.dimension,
            });
        }
        if g.points != self.points {
            return Err(Error::DimensionMismatch {
                expected: self.points,
                got: g.points,
            });
        }
        let mut out = Vec::new();
        self.analyze_into(&g.values, &mut out, &mut self.scratch());
        Ok(SpectralField {
            lattice: self.lattice,
            coeffs: out,
        })
    }

    pub fn synthesize_into(&self, coeffs: &[C64], out: &mut Vec<C64>, ws: &mut TransformScratch) {
        let scale = (2.0 / PI).sqrt();
        self.separable(coeffs, self.lattice.cutoff, self.points, scale, out, ws);
    }

    pub fn analyze_into(&self, values: &[C64], out: &mut Vec<C64>, ws: &mut TransformScratch) {
        let scale = (2.0 * PI).sqrt() / (self.points as f64 + 1.0);
        self.separable(values, self.points, self.lattice.cutoff, scale, out, ws);
    }

    fn separable(
        &self,
        input: &[C64],
        in_len: usize,
        out_len: usize,
        scale: f64,
        out: &mut Vec<C64>,
        ws: &mut TransformScratch,
    ) {
        let n = self.lattice.dimension;
        let fft_len = 2 * (self.points + 1);
        ws.fft_buf.resize(fft_len, C64::new(0.0, 0.0));
        let scratch_len = self.fft.get_inplace_scratch_len();
        ws.fft_scratch.resize(scratch_len, C64::new(0.0, 0.0));
        ws.line.resize(in_len.max(out_len), C64::new(0.0, 0.0));

        let mut shape = vec![in_len; n];
        ws.ping.clear();
        ws.ping.extend_from_slice(input);
        for axis in 0..n {
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let len = shape[axis];
            ws.pong.clear();
            ws.pong.resize(outer * out_len * inner, C64::new(0.0, 0.0));
            for o in 0..outer {
                for i in 0..inner {
                    let buf = &mut ws.fft_buf;
                    buf.fill(C64::new(0.0, 0.0));
                    for j in 0..len {
                        let x = ws.ping[(o * len + j) * inner + i];
                        buf[j + 1] = x;
                        buf[fft_len - j - 1] = -x;
                    }
                    self.fft.process_with_scratch(buf, &mut ws.fft_scratch);
                    // DST-I: y_k = (i/2) FFT_k
                    let factor = C64::new(0.0, 0.5 * scale);
                    for k in 0..out_len {
                        ws.pong[(o * out_len + k) * inner + i] = buf[k + 1] * factor;
                    }
                }
            }
            shape[axis] = out_len;
            std::mem::swap(&mut ws.ping, &mut ws.pong);
        }
        out.clear();
        out.extend_from_slice(&ws.ping);
    }
}

pub fn synthesize(f: &SpectralField) -> GridField {
    SineTransform::new(f.lattice).synthesize(f)
}

pub fn analyze(g: &GridField) -> Result<SpectralField> {
    SineTransform::with_points(g.lattice, g.points)?.analyze(g)
}
