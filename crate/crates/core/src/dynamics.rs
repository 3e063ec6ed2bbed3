//! Exponential-Euler integration of
//!
//! ```text
//! du = (nu Lap u - (i + a) g_r(|u|^2) u - lambda P_N(u - partner)) dt + dzeta
//! ```
//!
//! Each step advances every mode `s` by
//!
//! ```text
//! c_s <- e^{-nu alpha_s dt} c_s + phi_1(-nu alpha_s dt) dt F_s + eta_s
//! ```
//!
//! where `F_s` is the explicit (pseudo-spectral) nonlinear and control term
//! and `eta_s` is the exact Ornstein-Uhlenbeck convolution of the noise over
//! the step. With the nonlinearity switched off the scheme is exact in
//! distribution for any `dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    sobolev_norm_sq, GridField, ModeLattice, SineTransform, SpectralField, TransformScratch,
};
use crate::noise::{NoiseSpec, RngStream};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Low-mode feedback `-lambda P_N (v - u)` of the controlled equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub lambda: f64,
    /// Radius `N` of the controlled ball `|s| <= N`.
    pub modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimParams {
    pub lattice: ModeLattice,
    pub nu: f64,
    pub a: f64,
    pub r: f64,
    pub nonlinearity_on: bool,
    pub dt: f64,
    pub t_final: f64,
    pub dealias: bool,
    pub control: Option<Control>,
}

impl SimParams {
    /// Cubic equation with `nu = 1`, `a = 0`, dealiasing on, no control.
    pub fn new(lattice: ModeLattice, dt: f64, t_final: f64) -> Self {
        Self {
            lattice,
            nu: 1.0,
            a: 0.0,
            r: 1.0,
            nonlinearity_on: true,
            dt,
            t_final,
            dealias: true,
            control: None,
        }
    }

    pub fn linear(mut self) -> Self {
        self.nonlinearity_on = false;
        self
    }

    pub fn with_control(mut self, control: Control) -> Self {
        self.control = Some(control);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(field, "must be positive and finite"))
            }
        };
        let nonneg = |field: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(field, "must be non-negative and finite"))
            }
        };
        positive("nu", self.nu)?;
        nonneg("a", self.a)?;
        nonneg("r", self.r)?;
        if self.r > 3.0 {
            return Err(Error::param(
                "r",
                "the Hermite interpolant of g_r is monotone only for r <= 3",
            ));
        }
        positive("dt", self.dt)?;
        positive("t_final", self.t_final)?;
        if self.dt > self.t_final {
            return Err(Error::param("dt", "must not exceed t_final"));
        }
        if let Some(c) = self.control {
            nonneg("control.lambda", c.lambda)?;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// `g_r(t)`: `t^r` for `t >= 1`, cubic Hermite `(3 - r) t^2 + (r - 2) t^3`
/// on `[0, 1]` (value and slope matched at 1, `g(0) = g'(0) = 0`); the
/// identity for `r = 1`.
pub fn g_r(t: f64, r: f64) -> f64 {
    if r == 1.0 {
        t
    } else if t >= 1.0 {
        t.powf(r)
    } else {
        t * t * ((3.0 - r) + (r - 2.0) * t)
    }
}

/// Pointwise `-(i + a) g_r(|u|^2) u`.
pub fn apply_nonlinearity(u: &GridField, a: f64, r: f64) -> GridField {
    let mut out = u.clone();
    for v in out.values_mut() {
        *v = nonlinear_value(*v, a, r);
    }
    out
}

#[inline]
fn nonlinear_value(v: C64, a: f64, r: f64) -> C64 {
    let g = g_r(v.norm_sqr(), r);
    -C64::new(a, 1.0) * (v * g)
}

#[inline]
fn phi1_dt(z: f64, dt: f64) -> f64 {
    // dt * (e^z - 1)/z with z = -nu alpha dt
    if z.abs() < 1e-8 {
        dt * (1.0 + 0.5 * z)
    } else {
        dt * z.exp_m1() / z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub dt: f64,
    pub stride: usize,
    pub nu: f64,
    pub a: f64,
    pub r: f64,
    pub nonlinearity_on: bool,
    pub controlled: bool,
    pub dimension: usize,
    pub cutoff: usize,
}

impl RecordMeta {
    pub(crate) fn new(params: &SimParams, stride: usize) -> Self {
        Self {
            dt: params.dt,
            stride,
            nu: params.nu,
            a: params.a,
            r: params.r,
            nonlinearity_on: params.nonlinearity_on,
            controlled: params.control.is_some(),
            dimension: params.lattice.dimension(),
            cutoff: params.lattice.cutoff(),
        }
    }
}

/// Observables of one sample path at every `stride`-th step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub meta: RecordMeta,
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    pub sup: Vec<f64>,
    pub l4: Vec<f64>,
    /// Running `int_0^t |u|_inf^2 ds`, trapezoid rule over every step.
    pub sup_integral: Vec<f64>,
    /// Running `int_0^t ||u||_1^2 ds`, trapezoid rule over every step.
    pub h1_integral: Vec<f64>,
    /// Length of the windows in `window_sup`.
    pub window: f64,
    /// `max |u|_inf` over each completed window `[kW, (k+1)W]`, all steps.
    pub window_sup: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<(f64, SpectralField)>,
}

impl TrajectoryRecord {
    pub(crate) fn empty(meta: RecordMeta, window: f64) -> Self {
        Self {
            meta,
            times: Vec::new(),
            l2: Vec::new(),
            h1: Vec::new(),
            sup: Vec::new(),
            l4: Vec::new(),
            sup_integral: Vec::new(),
            h1_integral: Vec::new(),
            window,
            window_sup: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_final(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Index of the recorded time closest to `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        if self.times.is_empty() {
            return None;
        }
        let spacing = self.meta.dt * self.meta.stride as f64;
        let i = (t / spacing).round();
        if i < 0.0 {
            return None;
        }
        let i = i as usize;
        (i < self.times.len()).then_some(i)
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&SpectralField> {
        let tol = 0.5 * self.meta.dt;
        self.snapshots
            .iter()
            .find(|(s, _)| (s - t).abs() <= tol)
            .map(|(_, f)| f)
    }
}

/// Recorded norms of `u - v` for a pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferenceRecord {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    pub sup: Vec<f64>,
    /// Running `int ||P_N (u - v)||^2 ds`, only nonzero when controlled.
    pub control_energy: Vec<f64>,
}

/// What to record besides the per-stride observables.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub stride: usize,
    pub window: f64,
    pub snapshot_times: Vec<f64>,
}

impl Recording {
    pub fn every(stride: usize) -> Self {
        Self {
            stride: stride.max(1),
            window: 1.0,
            snapshot_times: Vec::new(),
        }
    }

    pub fn with_window(mut self, window: f64) -> Self {
        self.window = window;
        self
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }
}

/// Per-step buffers owned by one trajectory.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    grid: Vec<C64>,
    coarse: Vec<C64>,
    forcing: Vec<C64>,
    xi: Vec<C64>,
    scratch: TransformScratch,
}

/// Precomputed per-mode propagators for one `(SimParams, NoiseSpec)`.
#[derive(Debug, Clone)]
pub struct Integrator {
    params: SimParams,
    decay: Vec<f64>,
    phi_dt: Vec<f64>,
    noise_std: Vec<f64>,
    control_mask: Vec<bool>,
    observe: SineTransform,
    coarse: Option<SineTransform>,
}

impl Integrator {
    pub fn new(params: &SimParams, spec: &NoiseSpec) -> Result<Self> {
        params.validate()?;
        if spec.lattice() != params.lattice {
            return Err(Error::LatticeMismatch);
        }
        let lattice = params.lattice;
        let eigen = lattice.eigenvalues();
        let mut decay = Vec::with_capacity(eigen.len());
        let mut phi_dt = Vec::with_capacity(eigen.len());
        let mut noise_std = Vec::with_capacity(eigen.len());
        for (i, &alpha) in eigen.iter().enumerate() {
            let rate = params.nu * alpha;
            let z = -rate * params.dt;
            decay.push(z.exp());
            phi_dt.push(phi1_dt(z, params.dt));
            // each real part: b^2 (1 - e^{-2 rate dt}) / (2 rate)
            let b = spec.coeffs()[i];
            noise_std.push(b.abs() * (-(-2.0 * rate * params.dt).exp_m1() / (2.0 * rate)).sqrt());
        }
        let control_mask = match params.control {
            Some(c) => (0..lattice.len())
                .map(|i| lattice.mode_norm_sq(i) <= c.modes * c.modes)
                .collect(),
            None => vec![false; lattice.len()],
        };
        let coarse = if params.dealias {
            None
        } else {
            Some(SineTransform::with_points(lattice, lattice.cutoff())?)
        };
        Ok(Self {
            params: params.clone(),
            decay,
            phi_dt,
            noise_std,
            control_mask,
            observe: SineTransform::new(lattice),
            coarse,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.params.lattice.len();
        Workspace {
            forcing: vec![ZERO; n],
            xi: vec![ZERO; n],
            ..Workspace::default()
        }
    }

    /// Synthesizes `state` on the observation grid and returns `|u|_inf`.
    fn observe(&self, state: &[C64], ws: &mut Workspace) -> f64 {
        self.observe
            .synthesize_into(state, &mut ws.grid, &mut ws.scratch);
        ws.grid
            .iter()
            .map(|v| v.norm_sqr())
            .fold(0.0, f64::max)
            .sqrt()
    }

    fn l4_from_grid(&self, ws: &Workspace) -> f64 {
        let cell = crate::lattice::grid_spacing(self.observe.points())
            .powi(self.params.lattice.dimension() as i32);
        (cell * ws.grid.iter().map(|v| v.norm_sqr().powi(2)).sum::<f64>()).powf(0.25)
    }

    /// Spectral coefficients of the nonlinear term of `state` into
    /// `ws.forcing`. With `grid_ready`, `ws.grid` already holds `state` on the
    /// observation grid.
    fn nonlinear_into(&self, state: &[C64], ws: &mut Workspace, grid_ready: bool) {
        let (a, r) = (self.params.a, self.params.r);
        if !self.params.nonlinearity_on {
            ws.forcing.fill(ZERO);
            return;
        }
        match &self.coarse {
            None => {
                if !grid_ready {
                    self.observe
                        .synthesize_into(state, &mut ws.grid, &mut ws.scratch);
                }
                ws.coarse.clear();
                ws.coarse
                    .extend(ws.grid.iter().map(|&v| nonlinear_value(v, a, r)));
                self.observe
                    .analyze_into(&ws.coarse, &mut ws.forcing, &mut ws.scratch);
            }
            Some(t) => {
                t.synthesize_into(state, &mut ws.coarse, &mut ws.scratch);
                for v in ws.coarse.iter_mut() {
                    *v = nonlinear_value(*v, a, r);
                }
                t.analyze_into(&ws.coarse, &mut ws.forcing, &mut ws.scratch);
            }
        }
    }

    /// `Re <N(u), u>` of the spectral nonlinear term; vanishes for `a = 0`.
    pub fn nonlinear_flux(&self, state: &SpectralField) -> f64 {
        let mut ws = self.workspace();
        self.nonlinear_into(state.coeffs(), &mut ws, false);
        ws.forcing
            .iter()
            .zip(state.coeffs())
            .map(|(f, c)| (f * c.conj()).re)
            .sum()
    }

    fn update(&self, state: &mut [C64], forcing: &[C64], partner: Option<&[C64]>, xi: &[C64]) {
        let lambda = self.params.control.map_or(0.0, |c| c.lambda);
        for i in 0..state.len() {
            let mut f = forcing[i];
            if let Some(p) = partner {
                if self.control_mask[i] {
                    f -= (state[i] - p[i]) * lambda;
                }
            }
            state[i] = state[i] * self.decay[i] + f * self.phi_dt[i] + xi[i] * self.noise_std[i];
        }
    }

    /// One step driven by standard complex normals `xi` (one per mode).
    pub fn step_with_normals(
        &self,
        state: &mut SpectralField,
        partner: Option<&SpectralField>,
        xi: &[C64],
        ws: &mut Workspace,
    ) {
        self.nonlinear_into(state.coeffs(), ws, false);
        let forcing = std::mem::take(&mut ws.forcing);
        self.update(
            state.coeffs_mut(),
            &forcing,
            partner.map(|p| p.coeffs()),
            xi,
        );
        ws.forcing = forcing;
    }

    /// One step drawing the noise from `rng`.
    pub fn step(
        &self,
        state: &mut SpectralField,
        partner: Option<&SpectralField>,
        rng: &mut RngStream,
        ws: &mut Workspace,
    ) {
        let mut xi = std::mem::take(&mut ws.xi);
        xi.resize(state.coeffs().len(), ZERO);
        rng.fill_complex_normal(&mut xi);
        self.step_with_normals(state, partner, &xi, ws);
        ws.xi = xi;
    }
}

/// One exponential-Euler step of the (optionally controlled) equation.
pub fn step(
    state: &SpectralField,
    params: &SimParams,
    partner: Option<&SpectralField>,
    rng: &mut RngStream,
    spec: &NoiseSpec,
) -> Result<SpectralField> {
    if partner.is_some() != params.control.is_some() {
        return Err(Error::param(
            "partner",
            "a partner field is required exactly when control is set",
        ));
    }
    if state.lattice() != params.lattice || partner.is_some_and(|p| p.lattice() != params.lattice) {
        return Err(Error::LatticeMismatch);
    }
    let integ = Integrator::new(params, spec)?;
    let mut ws = integ.workspace();
    let mut next = state.clone();
    integ.step(&mut next, partner, rng, &mut ws);
    if !next.is_finite() {
        return Err(Error::BlowUp {
            time: params.dt,
            partial: Box::new(TrajectoryRecord::empty(RecordMeta::new(params, 1), 1.0)),
        });
    }
    Ok(next)
}

/// Observable bookkeeping for one path.
struct Recorder {
    rec: TrajectoryRecord,
    stride: usize,
    window_steps: usize,
    window_max: f64,
    snapshot_steps: Vec<(usize, f64)>,
    prev: Option<(f64, f64)>,
    sup_int: f64,
    h1_int: f64,
}

impl Recorder {
    fn new(params: &SimParams, recording: &Recording) -> Self {
        let window_steps = ((recording.window / params.dt).round() as usize).max(1);
        let snapshot_steps = recording
            .snapshot_times
            .iter()
            .map(|&t| ((t / params.dt).round() as usize, t))
            .collect();
        Self {
            rec: TrajectoryRecord::empty(
                RecordMeta::new(params, recording.stride),
                recording.window,
            ),
            stride: recording.stride.max(1),
            window_steps,
            window_max: 0.0,
            snapshot_steps,
            prev: None,
            sup_int: 0.0,
            h1_int: 0.0,
        }
    }

    /// Called at step `k` with the state and its grid in `ws`.
    fn visit(
        &mut self,
        k: usize,
        dt: f64,
        state: &SpectralField,
        sup: f64,
        integ: &Integrator,
        ws: &Workspace,
    ) {
        let sup_sq = sup * sup;
        let h1_sq = sobolev_norm_sq(&integ.params.lattice, state.coeffs(), 1.0);
        if let Some((ps, ph)) = self.prev {
            self.sup_int += 0.5 * dt * (ps + sup_sq);
            self.h1_int += 0.5 * dt * (ph + h1_sq);
        }
        self.prev = Some((sup_sq, h1_sq));

        self.window_max = self.window_max.max(sup);
        if k > 0 && k % self.window_steps == 0 {
            self.rec.window_sup.push(self.window_max);
            self.window_max = sup;
        }

        for &(step, t) in &self.snapshot_steps {
            if step == k {
                self.rec.snapshots.push((t, state.clone()));
            }
        }

        if k % self.stride == 0 {
            self.rec.times.push(k as f64 * dt);
            self.rec.l2.push(state.l2_norm());
            self.rec.h1.push(h1_sq.sqrt());
            self.rec.sup.push(sup);
            self.rec.l4.push(integ.l4_from_grid(ws));
            self.rec.sup_integral.push(self.sup_int);
            self.rec.h1_integral.push(self.h1_int);
        }
    }
}

fn blow_up(time: f64, rec: TrajectoryRecord) -> Error {
    Error::BlowUp {
        time,
        partial: Box::new(rec),
    }
}

pub fn simulate(
    u0: &SpectralField,
    params: &SimParams,
    spec: &NoiseSpec,
    rng: &mut RngStream,
    record_stride: usize,
) -> Result<TrajectoryRecord> {
    simulate_with(u0, params, spec, rng, &Recording::every(record_stride))
}

pub fn simulate_with(
    u0: &SpectralField,
    params: &SimParams,
    spec: &NoiseSpec,
    rng: &mut RngStream,
    recording: &Recording,
) -> Result<TrajectoryRecord> {
    if params.control.is_some() {
        return Err(Error::param(
            "control",
            "use simulate_pair for the controlled equation",
        ));
    }
    if u0.lattice() != params.lattice {
        return Err(Error::LatticeMismatch);
    }
    let integ = Integrator::new(params, spec)?;
    let mut ws = integ.workspace();
    let mut rec = Recorder::new(params, recording);
    let mut state = u0.clone();
    let steps = params.steps();
    for k in 0..=steps {
        let sup = integ.observe(state.coeffs(), &mut ws);
        if !sup.is_finite() || !state.is_finite() {
            return Err(blow_up(k as f64 * params.dt, rec.rec));
        }
        rec.visit(k, params.dt, &state, sup, &integ, &ws);
        if k == steps {
            break;
        }
        let mut xi = std::mem::take(&mut ws.xi);
        rng.fill_complex_normal(&mut xi);
        integ.nonlinear_into(state.coeffs(), &mut ws, true);
        let forcing = std::mem::take(&mut ws.forcing);
        integ.update(state.coeffs_mut(), &forcing, None, &xi);
        ws.forcing = forcing;
        ws.xi = xi;
    }
    Ok(rec.rec)
}

/// Result of [`simulate_pair`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub u: TrajectoryRecord,
    pub v: TrajectoryRecord,
    pub difference: DifferenceRecord,
}

/// Advances `u` and `v` in lockstep. With `shared` both are driven by
/// `rng_u` (and `rng_v` is untouched); otherwise each has its own stream.
/// When `params.control` is set, `u` follows the free equation and `v` the
/// controlled one with partner `u`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_pair(
    u0: &SpectralField,
    v0: &SpectralField,
    params: &SimParams,
    spec: &NoiseSpec,
    rng_u: &mut RngStream,
    rng_v: &mut RngStream,
    shared: bool,
    recording: &Recording,
) -> Result<PairRecord> {
    if u0.lattice() != params.lattice || v0.lattice() != params.lattice {
        return Err(Error::LatticeMismatch);
    }
    let controlled = params.control.is_some();
    let free_params = SimParams {
        control: None,
        ..params.clone()
    };
    let integ_u = Integrator::new(&free_params, spec)?;
    let integ_v = Integrator::new(params, spec)?;
    let mut ws_u = integ_u.workspace();
    let mut ws_v = integ_v.workspace();
    let mut rec_u = Recorder::new(&free_params, recording);
    let mut rec_v = Recorder::new(params, recording);
    let mut diff = DifferenceRecord {
        times: Vec::new(),
        l2: Vec::new(),
        h1: Vec::new(),
        sup: Vec::new(),
        control_energy: Vec::new(),
    };
    let control_radius = params.control.map(|c| c.modes);
    let lattice = params.lattice;
    let mut control_energy = 0.0;
    let mut prev_ce: Option<f64> = None;

    let mut u = u0.clone();
    let mut v = v0.clone();
    let steps = params.steps();
    let dt = params.dt;
    let n = lattice.len();
    let mut xi_u = vec![ZERO; n];
    let mut xi_v = vec![ZERO; n];
    for k in 0..=steps {
        let sup_u = integ_u.observe(u.coeffs(), &mut ws_u);
        let sup_v = integ_v.observe(v.coeffs(), &mut ws_v);
        if !(sup_u.is_finite() && sup_v.is_finite() && u.is_finite() && v.is_finite()) {
            return Err(blow_up(k as f64 * dt, rec_u.rec));
        }
        rec_u.visit(k, dt, &u, sup_u, &integ_u, &ws_u);
        rec_v.visit(k, dt, &v, sup_v, &integ_v, &ws_v);

        if let Some(radius) = control_radius {
            let ce: f64 = (0..n)
                .filter(|&i| lattice.mode_norm_sq(i) <= radius * radius)
                .map(|i| (u.coeffs()[i] - v.coeffs()[i]).norm_sqr())
                .sum();
            if let Some(p) = prev_ce {
                control_energy += 0.5 * dt * (p + ce);
            }
            prev_ce = Some(ce);
        }
        if k % recording.stride.max(1) == 0 {
            let w = &u - &v;
            diff.times.push(k as f64 * dt);
            diff.l2.push(w.l2_norm());
            diff.h1.push(w.sobolev_norm(1.0));
            diff.sup.push(if w.is_zero() {
                0.0
            } else {
                integ_u.observe.synthesize(&w).sup()
            });
            diff.control_energy.push(control_energy);
        }
        if k == steps {
            break;
        }

        rng_u.fill_complex_normal(&mut xi_u);
        if !shared {
            rng_v.fill_complex_normal(&mut xi_v);
        }
        let xv = if shared { &xi_u } else { &xi_v };

        integ_u.nonlinear_into(u.coeffs(), &mut ws_u, true);
        integ_v.nonlinear_into(v.coeffs(), &mut ws_v, true);
        let u_prev = if controlled { Some(u.clone()) } else { None };
        let fu = std::mem::take(&mut ws_u.forcing);
        integ_u.update(u.coeffs_mut(), &fu, None, &xi_u);
        ws_u.forcing = fu;
        let fv = std::mem::take(&mut ws_v.forcing);
        integ_v.update(v.coeffs_mut(), &fv, u_prev.as_ref().map(|p| p.coeffs()), xv);
        ws_v.forcing = fv;
    }
    Ok(PairRecord {
        u: rec_u.rec,
        v: rec_v.rec,
        difference: diff,
    })
}

/// Stochastic convolution `z' = nu Lap z + eta`, `z(0) = 0`, sampled exactly.
/// `window_sup` of the record holds the running maxima per window of
/// `recording.window`.
pub fn heat_trajectory(
    params: &SimParams,
    spec: &NoiseSpec,
    rng: &mut RngStream,
    recording: &Recording,
) -> Result<TrajectoryRecord> {
    let heat = SimParams {
        nonlinearity_on: false,
        control: None,
        ..params.clone()
    };
    simulate_with(
        &SpectralField::zeros(params.lattice),
        &heat,
        spec,
        rng,
        recording,
    )
}

/// Independent trajectories from a common `u0`, trajectory `i` driven by
/// stream `first_stream + i` of `master_seed`. Output order is trajectory
/// order regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn ensemble(
    u0: &SpectralField,
    params: &SimParams,
    spec: &NoiseSpec,
    master_seed: u64,
    first_stream: u64,
    count: usize,
    recording: &Recording,
) -> Result<Vec<TrajectoryRecord>> {
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(master_seed, first_stream + i);
            simulate_with(u0, params, spec, &mut rng, recording)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::coupling_constants;
    use crate::stats::EnsembleStats;

    fn lat(n: usize, m: usize) -> ModeLattice {
        ModeLattice::new(n, m, 4).unwrap()
    }

    #[test]
    fn g_r_properties() {
        assert_eq!(g_r(0.3, 1.0), 0.3);
        for r in [0.0, 0.5, 2.0, 3.0] {
            assert_eq!(g_r(0.0, r), 0.0);
            assert!((g_r(1.0, r) - 1.0).abs() < 1e-15);
            assert_eq!(g_r(4.0, r), 4f64.powf(r));
            // slope continuity at t = 1
            let h = 1e-6;
            let left = (g_r(1.0, r) - g_r(1.0 - h, r)) / h;
            assert!((left - r).abs() < 1e-4, "r={r}");
            // monotone on [0, 1]
            let mut prev = 0.0;
            for k in 1..=100 {
                let v = g_r(k as f64 / 100.0, r);
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn nonlinearity_examples() {
        let l = lat(1, 1);
        let p = l.grid_points();
        let mut g = GridField::new(l, p, vec![ZERO; p]).unwrap();
        assert!(apply_nonlinearity(&g, 0.0, 1.0)
            .values()
            .iter()
            .all(|v| *v == ZERO));
        g.values_mut()[0] = C64::new(2.0, 0.0);
        g.values_mut()[1] = C64::new(1.0, 0.0);
        let out = apply_nonlinearity(&g, 0.0, 1.0);
        assert_eq!(out.values()[0], C64::new(0.0, -8.0));
        let out = apply_nonlinearity(&g, 1.0, 1.0);
        assert_eq!(out.values()[1], C64::new(-1.0, -1.0));
    }

    #[test]
    fn zero_state_zero_noise_stays_zero() {
        let l = lat(1, 8);
        let p = SimParams::new(l, 1e-2, 1.0);
        let spec = NoiseSpec::zero(l);
        let mut rng = RngStream::new(1, 0);
        let next = step(&SpectralField::zeros(l), &p, None, &mut rng, &spec).unwrap();
        assert!(next.is_zero());
    }

    #[test]
    fn partner_presence_must_match_control() {
        let l = lat(1, 4);
        let p = SimParams::new(l, 1e-2, 1.0);
        let spec = NoiseSpec::zero(l);
        let z = SpectralField::zeros(l);
        let mut rng = RngStream::new(1, 0);
        assert!(step(&z, &p, Some(&z), &mut rng, &spec).is_err());
        let pc = p.with_control(Control {
            lambda: 1.0,
            modes: 2,
        });
        assert!(step(&z, &pc, None, &mut rng, &spec).is_err());
    }

    #[test]
    fn controlled_step_with_equal_partner_is_free_step() {
        let l = lat(1, 12);
        let spec = NoiseSpec::power_law(l, 1.0, 1.0).unwrap();
        let free = SimParams::new(l, 1e-2, 1.0);
        let mut r = RngStream::new(3, 0);
        let u = SpectralField::random(l, 1.0, &mut r);
        let mut r1 = RngStream::new(9, 4);
        let mut r2 = RngStream::new(9, 4);
        let a = step(&u, &free, None, &mut r1, &spec).unwrap();
        for (lambda, modes) in [(0.0, 1), (5.0, 3), (80.0, 12)] {
            let ctl = free.clone().with_control(Control { lambda, modes });
            let mut r2c = r2.clone();
            let b = step(&u, &ctl, Some(&u), &mut r2c, &spec).unwrap();
            assert_eq!(a, b);
        }
        let _ = step(&u, &free, None, &mut r2, &spec).unwrap();
    }

    #[test]
    fn linear_single_mode_transition_moments() {
        // exact OU oracle: mean e^{-alpha dt} c0, E|c|^2 = e^{-2 alpha dt} + b^2 (1 - e^{-2 alpha dt}) / alpha
        let l = lat(1, 3);
        let spec = NoiseSpec::single_mode(l, &[2], 0.8).unwrap();
        let params = SimParams::new(l, 0.1, 1.0).linear();
        let integ = Integrator::new(&params, &spec).unwrap();
        let mut ws = integ.workspace();
        let mut rng = RngStream::new(12, 0);
        let u0 = SpectralField::eigenmode(l, &[2]).unwrap();
        let n = 100_000;
        let mut re = Vec::with_capacity(n);
        let mut sq = Vec::with_capacity(n);
        for _ in 0..n {
            let mut s = u0.clone();
            integ.step(&mut s, None, &mut rng, &mut ws);
            let c = s.coeff(&[2]).unwrap();
            re.push(c.re);
            sq.push(c.norm_sqr());
        }
        let alpha: f64 = 4.0;
        let dt = 0.1;
        let mean = (-alpha * dt).exp();
        let second = (-2.0 * alpha * dt).exp() + 0.64 * (1.0 - (-2.0 * alpha * dt).exp()) / alpha;
        let s1 = EnsembleStats::from_samples(&re);
        let s2 = EnsembleStats::from_samples(&sq);
        assert!((s1.mean - mean).abs() < 3.0 * s1.standard_error());
        assert!((s2.mean - second).abs() < 3.0 * s2.standard_error());
    }

    #[test]
    fn conservative_flux_vanishes() {
        let mut rng = RngStream::new(4, 0);
        for (n, m, dealias) in [(1, 16, true), (1, 16, false), (2, 6, true)] {
            let l = lat(n, m);
            let mut p = SimParams::new(l, 1e-3, 1.0);
            p.dealias = dealias;
            let integ = Integrator::new(&p, &NoiseSpec::zero(l)).unwrap();
            for _ in 0..5 {
                let u = SpectralField::random(l, 1.0, &mut rng);
                assert!(integ.nonlinear_flux(&u).abs() < 1e-12 * (1.0 + u.l2_norm().powi(4)));
            }
            p.r = 0.5;
            let integ = Integrator::new(&p, &NoiseSpec::zero(l)).unwrap();
            let u = SpectralField::random(l, 1.0, &mut rng);
            assert!(integ.nonlinear_flux(&u).abs() < 1e-12 * (1.0 + u.l2_norm().powi(4)));
        }
    }

    #[test]
    fn zero_noise_zero_data_records_zero() {
        let l = lat(1, 8);
        let p = SimParams::new(l, 1e-2, 1.0);
        let rec = simulate(
            &SpectralField::zeros(l),
            &p,
            &NoiseSpec::zero(l),
            &mut RngStream::new(1, 1),
            5,
        )
        .unwrap();
        assert_eq!(rec.len(), 21);
        for v in [
            &rec.l2,
            &rec.h1,
            &rec.sup,
            &rec.l4,
            &rec.sup_integral,
            &rec.h1_integral,
        ] {
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let l = lat(1, 16);
        let p = SimParams::new(l, 1e-3, 0.5);
        let spec = NoiseSpec::power_law(l, 1.0, 2.0).unwrap();
        let u0 = SpectralField::eigenmode(l, &[1]).unwrap();
        let a = simulate(&u0, &p, &spec, &mut RngStream::new(77, 3), 10).unwrap();
        let b = simulate(&u0, &p, &spec, &mut RngStream::new(77, 3), 10).unwrap();
        assert_eq!(a, b);
        let c = simulate(&u0, &p, &spec, &mut RngStream::new(77, 4), 10).unwrap();
        assert_ne!(a, c);
        assert!(a.sup_integral.windows(2).all(|w| w[1] >= w[0]));
        let spacing = a.times[1] - a.times[0];
        assert!((spacing - 10.0 * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn deterministic_decay_bound() {
        let l = lat(1, 16);
        let p = SimParams::new(l, 1e-4, 1.0);
        let u0 = SpectralField::eigenmode(l, &[1]).unwrap();
        let rec = simulate(&u0, &p, &NoiseSpec::zero(l), &mut RngStream::new(0, 0), 100).unwrap();
        for (t, n) in rec.times.iter().zip(&rec.l2) {
            assert!(*n <= (-t).exp() * (1.0 + 1e-6), "t={t} {n}");
        }
    }

    #[test]
    fn pair_with_equal_data_and_shared_noise_stays_together() {
        let l = lat(1, 16);
        let p = SimParams::new(l, 1e-3, 0.5);
        let spec = NoiseSpec::power_law(l, 1.0, 2.0).unwrap();
        let u0 = SpectralField::random(l, 2.0, &mut RngStream::new(1, 2));
        let rec = simulate_pair(
            &u0,
            &u0,
            &p,
            &spec,
            &mut RngStream::new(5, 0),
            &mut RngStream::new(5, 1),
            true,
            &Recording::every(10),
        )
        .unwrap();
        assert!(rec.difference.l2.iter().all(|&x| x == 0.0));
        assert_eq!(rec.u.l2, rec.v.l2);
    }

    #[test]
    fn pair_gronwall_bound_with_zero_noise() {
        // ||u - v||(t) <= delta exp(3 int (|u|^2 + |v|^2)) checked a posteriori
        let l = lat(1, 16);
        let p = SimParams::new(l, 1e-3, 2.0);
        let spec = NoiseSpec::zero(l);
        let u0 = &SpectralField::eigenmode(l, &[1]).unwrap() * 2.0;
        let dir = SpectralField::random(l, 2.0, &mut RngStream::new(8, 8));
        let dir = &dir * (1.0 / dir.l2_norm());
        let delta = 1e-3;
        let v0 = &u0 + &(&dir * delta);
        let rec = simulate_pair(
            &u0,
            &v0,
            &p,
            &spec,
            &mut RngStream::new(1, 0),
            &mut RngStream::new(1, 1),
            true,
            &Recording::every(20),
        )
        .unwrap();
        for i in 0..rec.difference.times.len() {
            let budget = rec.u.sup_integral[i] + rec.v.sup_integral[i];
            assert!(rec.difference.l2[i] <= delta * (3.0 * budget).exp() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn independent_noise_decorrelates_pair() {
        let l = lat(1, 16);
        let p = SimParams::new(l, 2e-3, 4.0);
        let spec = NoiseSpec::power_law(l, 1.0, 2.0).unwrap();
        let u0 = SpectralField::zeros(l);
        let rec = simulate_pair(
            &u0,
            &u0,
            &p,
            &spec,
            &mut RngStream::new(2, 0),
            &mut RngStream::new(2, 1),
            false,
            &Recording::every(50),
        )
        .unwrap();
        let last = *rec.difference.l2.last().unwrap();
        assert!(last > 0.2, "{last}");
    }

    #[test]
    fn heat_stationary_variance_single_mode() {
        let l = lat(1, 4);
        let spec = NoiseSpec::single_mode(l, &[2], 1.0).unwrap();
        let params = SimParams::new(l, 0.5, 10.0);
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let rec = heat_trajectory(
                    &params,
                    &spec,
                    &mut RngStream::new(31, i),
                    &Recording::every(20).with_snapshots(vec![10.0]),
                )
                .unwrap();
                rec.snapshot_at(10.0)
                    .unwrap()
                    .coeff(&[2])
                    .unwrap()
                    .norm_sqr()
            })
            .collect();
        let s = EnsembleStats::from_samples(&samples);
        // b^2 / alpha
        assert!((s.mean - 0.25).abs() < 3.0 * s.standard_error(), "{s:?}");
    }

    #[test]
    fn heat_mean_energy_matches_modewise_ou() {
        let l = lat(1, 8);
        let spec = NoiseSpec::power_law(l, 1.0, 1.0).unwrap();
        let t = 0.3;
        let params = SimParams::new(l, 0.1, t);
        let n = 4000;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                heat_trajectory(
                    &params,
                    &spec,
                    &mut RngStream::new(32, i),
                    &Recording::every(3),
                )
                .unwrap()
                .l2
                .last()
                .unwrap()
                .powi(2)
            })
            .collect();
        let oracle: f64 = (0..l.len())
            .map(|i| {
                let a = l.eigenvalue(i);
                spec.coeffs()[i].powi(2) * (1.0 - (-2.0 * a * t).exp()) / a
            })
            .sum();
        let s = EnsembleStats::from_samples(&samples);
        assert!(
            (s.mean - oracle).abs() < 3.0 * s.standard_error(),
            "{} vs {oracle}",
            s.mean
        );
        let zero = heat_trajectory(
            &params,
            &NoiseSpec::zero(l),
            &mut RngStream::new(1, 1),
            &Recording::every(1),
        )
        .unwrap();
        assert!(zero.sup.iter().all(|&x| x == 0.0));
        let _ = coupling_constants(&spec, &[]);
    }

    #[test]
    fn window_sup_covers_every_step() {
        let l = lat(1, 8);
        let params = SimParams::new(l, 0.01, 3.0);
        let spec = NoiseSpec::power_law(l, 1.0, 2.0).unwrap();
        let rec = heat_trajectory(
            &params,
            &spec,
            &mut RngStream::new(1, 2),
            &Recording::every(1),
        )
        .unwrap();
        assert_eq!(rec.window_sup.len(), 3);
        for (w, &m) in rec.window_sup.iter().enumerate() {
            let lo = w * 100;
            let hi = (w + 1) * 100;
            let direct = rec.sup[lo..=hi].iter().cloned().fold(0.0, f64::max);
            assert_eq!(m, direct);
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let l = lat(1, 8);
        let p = SimParams::new(l, 0.5, 20.0);
        let u0 = &SpectralField::eigenmode(l, &[1]).unwrap() * 40.0;
        match simulate(&u0, &p, &NoiseSpec::zero(l), &mut RngStream::new(0, 0), 1) {
            Err(Error::BlowUp { time, partial }) => {
                assert!(time > 0.0);
                assert!(!partial.is_empty());
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn galerkin_refinement_converges() {
        // Same noise realisation on M and 2M: the coarse run sees the fine
        // run's normals restricted to its modes.
        let t_final = 0.5;
        let dt = 1e-3;
        let spec_for = |m| NoiseSpec::power_law(lat(1, m), 1.0, 2.0).unwrap();
        let run = |m: usize, finest: usize, seed: u64| -> Vec<SpectralField> {
            let l = lat(1, m);
            let p = SimParams::new(l, dt, t_final);
            let integ = Integrator::new(&p, &spec_for(m)).unwrap();
            let mut ws = integ.workspace();
            let mut rng = RngStream::new(seed, 0);
            let mut xi_fine = vec![ZERO; finest];
            let mut u = &SpectralField::eigenmode(l, &[1]).unwrap() * 1.5;
            let mut out = Vec::new();
            for k in 0..p.steps() {
                rng.fill_complex_normal(&mut xi_fine);
                integ.step_with_normals(&mut u, None, &xi_fine[..m], &mut ws);
                if (k + 1) % 50 == 0 {
                    out.push(u.clone());
                }
            }
            out
        };
        let reference = run(64, 64, 5);
        let mut errs = Vec::new();
        for m in [8usize, 16, 32] {
            let coarse = run(m, 64, 5);
            // discrete L2(0,T; H^{1/2}) distance
            let e: f64 = coarse
                .iter()
                .zip(&reference)
                .map(|(c, f)| {
                    let mut padded = SpectralField::zeros(lat(1, 64));
                    padded.coeffs_mut()[..m].copy_from_slice(c.coeffs());
                    (&padded - f).sobolev_norm(0.5).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            errs.push(e);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }
}
