use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::config::{ExperimentConfig, ExperimentKind, InitialCondition};
use super::output::{Output, ReportRow};
use crate::dynamics::{ensemble, heat_trajectory, simulate, Recording, TrajectoryRecord};
use crate::ergodicity::{
    fit_gamma, foias_prodi_experiment, mixing_experiment, recurrence_experiment, squeeze_sweep,
    stationary_report, MixingConfig,
};
use crate::error::{Error, Result};
use crate::estimators::{
    convolution_moment_report, energy_balance_report, hitting_sweep, lyapunov_report,
    moment_report, quantile_rho_grid, tail_report, tail_statistic,
};
use crate::lattice::{ModeLattice, SpectralField};
use crate::noise::{coupling_constants, RngStream};
use crate::stats::{linear_fit, EnsembleStats};

/// A hard check made by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    AssertionFailed,
    BlowUp,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::AssertionFailed => 1,
            Status::BlowUp => 3,
        }
    }
}

/// Exit code for an error that prevented a run from starting.
pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::BlowUp { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: Output,
    pub assertions: Vec<Assertion>,
    pub status: Status,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.status == Status::Success
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: Output,
    assertions: Vec<Assertion>,
}

impl Ctx<'_> {
    fn report(&mut self, row: ReportRow) {
        self.out.report(row);
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.out.report(
            ReportRow::new("assertion")
                .key("name", name)
                .key("detail", detail.clone())
                .flag("passed", passed),
        );
        self.assertions.push(Assertion {
            name: name.into(),
            passed,
            detail,
        });
    }

    fn series(&mut self, records: &[TrajectoryRecord]) {
        for (i, rec) in records
            .iter()
            .take(self.cfg.series_trajectories)
            .enumerate()
        {
            self.out.series(i, rec);
        }
    }
}

/// Validates `cfg` and runs its experiment. Invalid configs are returned as
/// errors; blow-up and failed assertions are reported in the outcome.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    if cfg.experiment == ExperimentKind::Validate {
        return Err(Error::Config {
            field: "experiment".into(),
            reason: "the validation suite runs through `validate`".into(),
        });
    }
    let mut ctx = Ctx {
        cfg,
        out: Output::new(cfg),
        assertions: Vec::new(),
    };
    let result = match cfg.experiment {
        ExperimentKind::Simulate => run_simulate(&mut ctx),
        ExperimentKind::Ensemble => run_ensemble(&mut ctx),
        ExperimentKind::EnergyBalance => run_energy(&mut ctx),
        ExperimentKind::Moments => run_moments(&mut ctx),
        ExperimentKind::Tails => run_tails(&mut ctx),
        ExperimentKind::Hitting => run_hitting(&mut ctx),
        ExperimentKind::Lyapunov => run_lyapunov(&mut ctx),
        ExperimentKind::Convolution => run_convolution(&mut ctx),
        ExperimentKind::Stationary => run_stationary(&mut ctx),
        ExperimentKind::Mixing => run_mixing(&mut ctx),
        ExperimentKind::Squeeze => run_squeeze(&mut ctx),
        ExperimentKind::Recurrence => run_recurrence(&mut ctx),
        ExperimentKind::Interpolation => run_interpolation(&mut ctx),
        ExperimentKind::Validate => unreachable!(),
    };
    let status = match result {
        Ok(()) if ctx.assertions.iter().all(|a| a.passed) => Status::Success,
        Ok(()) => Status::AssertionFailed,
        Err(Error::BlowUp { time, partial }) => {
            ctx.out.series(0, &partial);
            ctx.report(ReportRow::new("blow_up").value("time", time));
            Status::BlowUp
        }
        Err(e) => return Err(e),
    };
    Ok(RunOutcome {
        output: ctx.out,
        assertions: ctx.assertions,
        status,
    })
}

fn recording(cfg: &ExperimentConfig) -> Recording {
    Recording::every(cfg.record_stride)
}

fn run_ensemble_records(
    cfg: &ExperimentConfig,
    u0: &SpectralField,
    rec: &Recording,
    first_stream: u64,
) -> Result<Vec<TrajectoryRecord>> {
    let params = cfg.sim_params()?;
    let spec = cfg.noise_spec()?;
    ensemble(
        u0,
        &params,
        &spec,
        cfg.seed,
        first_stream,
        cfg.ensemble_size,
        rec,
    )
}

fn mode_of(ic: &InitialCondition, lattice: ModeLattice) -> Vec<usize> {
    match ic {
        InitialCondition::Eigenmode { mode, .. } | InitialCondition::SupLevel { mode, .. } => {
            mode.clone()
        }
        _ => vec![1; lattice.dimension()],
    }
}

fn at_level(ic: &InitialCondition, lattice: ModeLattice, level: f64) -> Result<SpectralField> {
    InitialCondition::SupLevel {
        mode: mode_of(ic, lattice),
        level,
    }
    .build(lattice, 0, 0)
}

fn run_simulate(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let params = cfg.sim_params()?;
    let spec = cfg.noise_spec()?;
    let u0 = cfg.initial()?;
    let rec = simulate(
        &u0,
        &params,
        &spec,
        &mut RngStream::new(cfg.seed, 0),
        cfg.record_stride,
    )?;
    ctx.series(std::slice::from_ref(&rec));
    let k = rec.len() - 1;
    ctx.report(
        ReportRow::new("final")
            .value("t", rec.times[k])
            .value("l2", rec.l2[k])
            .value("h1", rec.h1[k])
            .value("sup", rec.sup[k])
            .value("l4", rec.l4[k]),
    );
    if spec.is_zero() {
        // Poincare: the lowest eigenvalue is n.
        let rate = cfg.nu * cfg.dimension as f64;
        let worst = rec
            .times
            .iter()
            .zip(&rec.l2)
            .map(|(t, l2)| l2 / ((-rate * t).exp() * rec.l2[0]))
            .fold(0.0, f64::max);
        ctx.report(ReportRow::new("decay").value("worst_ratio", worst));
        ctx.check(
            "poincare_decay",
            worst <= 1.0 + cfg.decay_tolerance,
            format!("max ||u(t)|| / (exp(-{rate} t) ||u0||) = {worst:.9}"),
        );
    }
    Ok(())
}

fn run_ensemble(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let lattice = cfg.lattice()?;
    let spec = cfg.noise_spec()?;
    let u0 = cfg.initial()?;
    let rec = recording(cfg).with_snapshots(vec![cfg.t_final]);
    let ens = run_ensemble_records(cfg, &u0, &rec, 0)?;
    ctx.series(&ens);
    let first = &ens[0];
    for k in 0..first.len() {
        let col = |f: fn(&TrajectoryRecord) -> &Vec<f64>| {
            EnsembleStats::from_samples(&ens.iter().map(|r| f(r)[k]).collect::<Vec<_>>())
        };
        ctx.report(
            ReportRow::new("ensemble_mean")
                .key("t", first.times[k])
                .stat("l2", &col(|r| &r.l2))
                .stat("h1", &col(|r| &r.h1))
                .stat("sup", &col(|r| &r.sup)),
        );
    }
    let mut idx: Vec<usize> = (0..lattice.len()).collect();
    idx.sort_by_key(|&i| (lattice.mode_norm_sq(i), i));
    let t = first.t_final();
    let mut worst: f64 = 0.0;
    for &i in idx.iter().take(cfg.check_modes) {
        let samples = ens
            .iter()
            .map(|r| {
                r.snapshot_at(t)
                    .map(|f| f.coeffs()[i].norm_sqr())
                    .ok_or_else(|| Error::param("snapshot", "final state missing"))
            })
            .collect::<Result<Vec<_>>>()?;
        let s = EnsembleStats::from_samples(&samples);
        let rate = cfg.nu * lattice.eigenvalue(i);
        let b = spec.coeffs()[i];
        let oracle = u0.coeffs()[i].norm_sqr() * (-2.0 * rate * t).exp()
            - b * b * (-2.0 * rate * t).exp_m1() / rate;
        let z = (s.mean - oracle) / s.standard_error();
        worst = worst.max(z.abs());
        ctx.report(
            ReportRow::new("mode_variance")
                .key("mode", Value::from(lattice.mode(i)))
                .stat("sample", &s)
                .value("ou_oracle", oracle)
                .value("z", z),
        );
    }
    if !cfg.nonlinearity_on {
        ctx.check(
            "ou_variance",
            worst <= cfg.oracle_sigmas,
            format!(
                "max |z| over {} modes = {worst:.3}",
                cfg.check_modes.min(lattice.len())
            ),
        );
    }
    Ok(())
}

fn run_energy(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let spec = cfg.noise_spec()?;
    let u0 = cfg.initial()?;
    let ens = run_ensemble_records(cfg, &u0, &recording(cfg), 0)?;
    ctx.series(&ens);
    let b0 = coupling_constants(&spec, &[]).b_0;
    let rep = energy_balance_report(&ens, u0.l2_norm(), b0)?;
    for ((t, r), rel) in rep.times.iter().zip(&rep.residual).zip(&rep.relative) {
        ctx.report(
            ReportRow::new("energy_residual")
                .key("t", *t)
                .stat("residual", r)
                .value("relative", *rel),
        );
    }
    let (t, r, rel) = rep.last().expect("non-empty record");
    let r = *r;
    ctx.report(
        ReportRow::new("energy_summary")
            .value("t", t)
            .value("b0", b0)
            .value("u0_l2", rep.u0_l2)
            .stat("residual", &r)
            .value("relative", rel)
            .value("n_samples", r.n_samples as f64),
    );
    ctx.check(
        "energy_relative",
        rel.abs() <= cfg.energy_tolerance,
        format!(
            "|relative residual| = {:.4} (tolerance {})",
            rel.abs(),
            cfg.energy_tolerance
        ),
    );
    ctx.check(
        "energy_ci_contains_zero",
        r.mean.abs() <= r.ci95_halfwidth,
        format!("residual {:.5} +- {:.5}", r.mean, r.ci95_halfwidth),
    );
    Ok(())
}

fn run_moments(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let u0 = cfg.initial()?;
    let rec = recording(cfg).with_window(cfg.windows[0][1]);
    let ens = run_ensemble_records(cfg, &u0, &rec, 0)?;
    ctx.series(&ens);
    let windows: Vec<(f64, f64)> = cfg.windows.iter().map(|w| (w[0], w[1])).collect();
    let rep = moment_report(&ens, &cfg.q_list, &cfg.c_list, &windows)?;
    for w in &rep.windows {
        for (q, s) in &w.sup_moments {
            ctx.report(
                ReportRow::new("sup_moment")
                    .key("start", w.start)
                    .key("length", w.len)
                    .key("q", *q)
                    .stat("estimate", s),
            );
        }
        for e in &w.exp_moments {
            let mut row = ReportRow::new("exp_moment")
                .key("start", w.start)
                .key("length", w.len)
                .key("c", e.c)
                .value("ess", e.ess)
                .flag("in_range", e.in_range());
            if let Some(s) = &e.estimate {
                row = row.stat("estimate", s);
            }
            ctx.report(row);
        }
    }
    for t in &rep.trends {
        ctx.report(
            ReportRow::new("moment_trend")
                .key("label", t.label.clone())
                .with_ci("slope", t.slope, 1.96 * t.slope_se)
                .flag("bounded", t.bounded),
        );
    }
    ctx.check(
        "moments_bounded",
        rep.all_bounded(),
        format!(
            "{} trends without significant growth",
            rep.trends.iter().filter(|t| t.bounded).count()
        ),
    );
    Ok(())
}

fn run_tails(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let u0 = cfg.initial()?;
    let ens = run_ensemble_records(cfg, &u0, &recording(cfg), 0)?;
    ctx.series(&ens);
    let (_, j, _) = tail_statistic(&ens)?;
    let grid = quantile_rho_grid(&j, cfg.rho_points, cfg.rho_quantile_lo, cfg.rho_quantile_hi);
    let rep = tail_report(&ens, &grid)?;
    for (rho, s) in rep.rho_grid.iter().zip(&rep.survival) {
        ctx.report(
            ReportRow::new("tail_survival")
                .key("rho", *rho)
                .value("survival", *s),
        );
    }
    ctx.report(
        ReportRow::new("tail_fit")
            .value("k_hat", rep.k_hat)
            .value("slope", rep.slope)
            .value("intercept", rep.intercept)
            .value("r2", rep.fit_r2)
            .value("decades", rep.decades)
            .value("censored_fraction", rep.censored_fraction)
            .value("n_samples", rep.n_samples as f64)
            .value("grid_points", rep.rho_grid.len() as f64),
    );
    for w in &rep.warnings {
        ctx.report(ReportRow::new("warning").key("message", w.clone()));
    }
    ctx.check(
        "tail_exponential",
        rep.slope < 0.0 && rep.fit_r2 >= cfg.tail_r2 && rep.decades >= cfg.tail_decades,
        format!(
            "slope {:.4}, R^2 {:.4}, {:.2} decades",
            rep.slope, rep.fit_r2, rep.decades
        ),
    );
    Ok(())
}

fn level_ensembles(cfg: &ExperimentConfig) -> Result<Vec<(f64, Vec<TrajectoryRecord>)>> {
    let lattice = cfg.lattice()?;
    cfg.levels
        .iter()
        .enumerate()
        .map(|(i, &level)| {
            let u0 = at_level(&cfg.u0, lattice, level)?;
            let first = (i * cfg.ensemble_size) as u64;
            Ok((
                level,
                run_ensemble_records(cfg, &u0, &recording(cfg), first)?,
            ))
        })
        .collect()
}

fn run_hitting(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let levels = level_ensembles(cfg)?;
    let sweep = hitting_sweep(&levels, cfg.hit_d, cfg.hit_l, cfg.hit_r, &cfg.gamma_list)?;
    let mut max_censored: f64 = 0.0;
    for (level, rep) in sweep.levels.iter().zip(&sweep.reports) {
        max_censored = max_censored.max(rep.censored1).max(rep.censored2);
        for m in &rep.exp_moments {
            ctx.report(
                ReportRow::new("hitting_moment")
                    .key("level", *level)
                    .key("gamma", m.gamma)
                    .stat("tau1", &m.tau1)
                    .stat("tau2", &m.tau2)
                    .value("censored1", rep.censored1)
                    .value("censored2", rep.censored2)
                    .flag("reliable", m.reliable),
            );
        }
    }
    for ((gamma, ratios), (_, slope)) in sweep.ratios.iter().zip(&sweep.growth_exponents) {
        let mut row = ReportRow::new("hitting_growth")
            .key("gamma", *gamma)
            .value("exponent", *slope);
        for (level, r) in sweep.levels.iter().zip(ratios) {
            row = row.value(&format!("ratio_level_{level}"), *r);
        }
        ctx.report(row);
    }
    ctx.check(
        "hitting_censoring",
        max_censored <= cfg.max_censoring,
        format!("max censoring {max_censored:.3}"),
    );
    ctx.check(
        "hitting_subquadratic",
        sweep.subquadratic(),
        format!("growth exponents {:?}", sweep.growth_exponents),
    );
    Ok(())
}

fn run_lyapunov(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    if cfg.lyapunov_t > cfg.t_final {
        return Err(Error::Config {
            field: "lyapunov_t".into(),
            reason: "must not exceed t_final".into(),
        });
    }
    let levels = level_ensembles(cfg)?;
    let rep = lyapunov_report(&levels, cfg.lyapunov_t)?;
    for row in &rep.rows {
        ctx.report(
            ReportRow::new("lyapunov_drift")
                .key("level", row.level)
                .value("f0", row.f0)
                .stat("f_t", &row.f_t)
                .with_ci("ratio", row.ratio, row.ratio_ci95),
        );
    }
    ctx.report(
        ReportRow::new("lyapunov_decay_fit")
            .value("a", rep.decay.a)
            .value("b", rep.decay.b)
            .value("c", rep.decay.c)
            .value("rms_residual", rep.decay.rms_residual)
            .value("r_prime", rep.r_prime.unwrap_or(f64::NAN)),
    );
    ctx.check(
        "lyapunov_contraction",
        rep.r_prime.is_some(),
        format!("R' = {:?}", rep.r_prime),
    );
    Ok(())
}

fn run_convolution(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let params = cfg.sim_params()?;
    let spec = cfg.noise_spec()?;
    let rec = recording(cfg).with_window(cfg.window);
    let ens: Vec<TrajectoryRecord> = (0..cfg.ensemble_size as u64)
        .into_par_iter()
        .map(|i| heat_trajectory(&params, &spec, &mut RngStream::new(cfg.seed, i), &rec))
        .collect::<Result<_>>()?;
    ctx.series(&ens);
    let rep = convolution_moment_report(&ens, &cfg.p_list, cfg.window)?;
    for m in &rep.moments {
        ctx.report(
            ReportRow::new("convolution_moment")
                .key("p", m.p)
                .value("m_p", m.m_p)
                .value("ratio", m.ratio)
                .value("ess", m.ess)
                .flag("degenerate", m.degenerate),
        );
    }
    let mut row = ReportRow::new("convolution_fit")
        .value("kappa", rep.kappa)
        .value("rms_relative_residual", rep.rms_relative_residual)
        .value("ratio_spread", rep.ratio_spread)
        .value("exp_c", rep.exp_moment.c)
        .value("exp_ess", rep.exp_moment.ess)
        .flag("exp_in_range", rep.exp_moment.in_range());
    if let Some(s) = &rep.exp_moment.estimate {
        row = row.stat("exp_moment", s);
    }
    ctx.report(row);
    ctx.check(
        "convolution_sqrt_p",
        rep.stable(cfg.ratio_spread),
        format!(
            "m_p/sqrt(p) spread {:.3} (tolerance {}); ratios {:?}",
            rep.ratio_spread,
            cfg.ratio_spread,
            rep.moments.iter().map(|m| m.ratio).collect::<Vec<_>>()
        ),
    );
    Ok(())
}

fn run_stationary(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let params = cfg.sim_params()?;
    let spec = cfg.noise_spec()?;
    let u0 = cfg.initial()?;
    let rec = simulate(
        &u0,
        &params,
        &spec,
        &mut RngStream::new(cfg.seed, 0),
        cfg.record_stride,
    )?;
    ctx.series(std::slice::from_ref(&rec));
    let b0 = coupling_constants(&spec, &[]).b_0;
    let rep = stationary_report(&rec, cfg.burn_in, cfg.exp_c, b0)?;
    ctx.report(
        ReportRow::new("stationary")
            .stat("l2_sq", &rep.l2_sq)
            .stat("h1_sq", &rep.h1_sq)
            .stat("sup_sq", &rep.sup_sq)
            .stat("exp_sup_sq", &rep.exp_sup_sq)
            .value("exp_c", rep.c)
            .value("iact", rep.iact)
            .value("b0", rep.b0)
            .value("h1_target", rep.h1_target)
            .value("ratio_to_b0", rep.ratio_to_b0)
            .value("ratio_to_half_b0", rep.ratio_to_half_b0)
            .value("relative_error", rep.relative_error()),
    );
    for w in &rep.warnings {
        ctx.report(ReportRow::new("warning").key("message", w.clone()));
    }
    ctx.check(
        "stationary_h1",
        rep.relative_error() <= cfg.stationary_tolerance,
        format!(
            "time average {:.5} vs B0/nu = {:.5} (relative {:.4}); ratio to B0/2 = {:.4}",
            rep.h1_sq.mean,
            rep.h1_target,
            rep.relative_error(),
            rep.ratio_to_half_b0
        ),
    );
    Ok(())
}

fn run_mixing(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let params = cfg.sim_params()?;
    let spec = cfg.noise_spec()?;
    let mc = MixingConfig {
        t_grid: cfg.t_grid.clone(),
        ensemble_size: cfg.ensemble_size,
        radius: cfg.radius,
        threshold: cfg.mixing_threshold,
        bootstrap: cfg.bootstrap,
        seed: cfg.seed,
    };
    let rep = mixing_experiment(&cfg.initial()?, &cfg.initial_b()?, &params, &spec, &mc)?;
    for (t, e) in rep.t_grid.iter().zip(&rep.estimates) {
        ctx.report(
            ReportRow::new("mixing_distance")
                .key("t", *t)
                .value("estimate", e.estimate)
                .value("ci_low", e.ci_low)
                .value("ci_high", e.ci_high)
                .value("upper", e.upper())
                .value("argmax", e.argmax as f64),
        );
    }
    ctx.report(
        ReportRow::new("mixing_summary")
            .key("dictionary", rep.dictionary_id.clone())
            .value("crossing_time", rep.crossing_time.unwrap_or(f64::NAN))
            .value("decrease_fraction", rep.decrease_fraction)
            .value("ensemble_size", rep.ensemble_size as f64),
    );
    for w in &rep.warnings {
        ctx.report(ReportRow::new("warning").key("message", w.clone()));
    }
    let initial = rep.estimates[0].estimate;
    ctx.check(
        "mixing_initial_separation",
        initial >= cfg.mixing_initial,
        format!("estimate at t = {} is {initial:.4}", rep.t_grid[0]),
    );
    ctx.check(
        "mixing_crossing",
        rep.crossing_time.is_some(),
        format!(
            "first time with estimate + CI <= {}: {:?}",
            rep.threshold, rep.crossing_time
        ),
    );
    ctx.check(
        "mixing_monotone",
        rep.decrease_fraction >= cfg.mixing_decrease,
        format!(
            "fraction of consecutive decreases {:.3}",
            rep.decrease_fraction
        ),
    );
    Ok(())
}

fn run_squeeze(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let lattice = cfg.lattice()?;
    let params = cfg.sim_params()?;
    let spec = cfg.noise_spec()?;
    let u0 = cfg.initial()?;
    let phi = SpectralField::eigenmode(lattice, &vec![1; lattice.dimension()])?;
    let v0 = &u0 + &(&phi * cfg.squeeze_w0);
    let controlled = params.clone().with_control(cfg.control());
    let n = cfg.ensemble_size;
    let rec = foias_prodi_experiment(
        &u0,
        &v0,
        &controlled,
        &spec,
        cfg.seed,
        n,
        true,
        cfg.record_stride,
    )?;
    for i in 0..n {
        ctx.report(
            ReportRow::new("squeeze_trajectory")
                .key("trajectory", i)
                .value("slope", rec.slopes[i].unwrap_or(f64::NEG_INFINITY))
                .value("control_energy", rec.control_energy[i])
                .value("sup_budget", rec.sup_budget[i]),
        );
    }
    let fraction = rec.fraction_below(cfg.slope_threshold);
    ctx.report(
        ReportRow::new("squeeze_summary")
            .key("lambda", rec.lambda)
            .key("modes", rec.modes)
            .value("w0", rec.w0)
            .value("fraction_below", fraction)
            .value("median_slope", rec.median_slope()),
    );
    ctx.check(
        "squeeze_fraction",
        fraction >= cfg.squeeze_fraction,
        format!("{fraction:.3} of slopes <= {}", cfg.slope_threshold),
    );
    if cfg.squeeze_baseline {
        let off = params.clone().with_control(crate::dynamics::Control {
            lambda: 0.0,
            modes: cfg.control_modes,
        });
        let base =
            foias_prodi_experiment(&u0, &v0, &off, &spec, cfg.seed, n, false, cfg.record_stride)?;
        let median = base.median_slope();
        ctx.report(
            ReportRow::new("squeeze_baseline")
                .value("median_slope", median)
                .value("fraction_below", base.fraction_below(cfg.slope_threshold)),
        );
        ctx.check(
            "squeeze_baseline_distinct",
            median >= cfg.baseline_median,
            format!("uncontrolled independent-noise median slope {median:.4}"),
        );
    }
    if !cfg.lambda_grid.is_empty() && !cfg.modes_grid.is_empty() {
        let sweep = squeeze_sweep(
            &u0,
            &v0,
            &params,
            &spec,
            &cfg.lambda_grid,
            &cfg.modes_grid,
            cfg.slope_threshold,
            cfg.seed,
            n,
            cfg.record_stride,
        )?;
        for s in sweep {
            ctx.report(
                ReportRow::new("squeeze_sweep")
                    .key("lambda", s.lambda)
                    .key("modes", s.modes)
                    .value("fraction_below", s.fraction_below)
                    .value("median_slope", s.median_slope)
                    .value("mean_control_energy", s.mean_control_energy),
            );
        }
    }
    Ok(())
}

fn run_recurrence(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let lattice = cfg.lattice()?;
    let params = cfg.sim_params()?;
    let spec = cfg.noise_spec()?;
    let n = cfg.ensemble_size;
    let mut reports = Vec::new();
    for (i, &level) in cfg.levels.iter().enumerate() {
        let a = at_level(&cfg.u0, lattice, level)?;
        let b = at_level(&cfg.u0_b, lattice, level)?;
        let first = (2 * i * n) as u64;
        let rep = recurrence_experiment(
            &a,
            &b,
            &params,
            &spec,
            cfg.seed,
            first,
            n,
            &cfg.m_list,
            cfg.ball_l,
            cfg.check_stride,
            &[],
        )?;
        reports.push((level, rep));
    }
    let horizon = reports[0].1.horizon;
    let pooled: Vec<Option<f64>> = reports
        .iter()
        .flat_map(|(_, r)| r.rows[0].tau.clone())
        .collect();
    let gamma = fit_gamma(&pooled, horizon);
    let mut max_censored: f64 = 0.0;
    let mut increasing = true;
    let mut moments = Vec::new();
    for (level, rep) in &reports {
        increasing &= rep.medians_increasing();
        for row in &rep.rows {
            max_censored = max_censored.max(row.censored);
            ctx.report(
                ReportRow::new("recurrence")
                    .key("level", *level)
                    .key("m", row.m)
                    .value("censored", row.censored)
                    .value("median", row.median.unwrap_or(f64::NAN))
                    .flag("unreachable", row.unreachable),
            );
        }
        let e: Vec<f64> = rep.rows[0]
            .tau
            .iter()
            .map(|t| (gamma * t.unwrap_or(horizon)).exp())
            .collect();
        let s = EnsembleStats::from_samples(&e);
        ctx.report(
            ReportRow::new("recurrence_exp_moment")
                .key("level", *level)
                .key("m", rep.rows[0].m)
                .value("gamma", gamma)
                .stat("estimate", &s)
                .value("ratio", s.mean / (1.0 + level * level)),
        );
        moments.push((*level, s.mean));
    }
    let x: Vec<f64> = moments.iter().map(|(l, _)| (1.0 + l * l).ln()).collect();
    let y: Vec<f64> = moments.iter().map(|(_, m)| m.ln()).collect();
    let exponent = if x.len() >= 2 {
        linear_fit(&x, &y).slope
    } else {
        f64::NAN
    };
    ctx.report(
        ReportRow::new("recurrence_growth")
            .value("gamma", gamma)
            .value("exponent", exponent)
            .value("max_censored", max_censored),
    );
    ctx.check(
        "recurrence_censoring",
        max_censored <= cfg.max_censoring,
        format!("max censoring {max_censored:.3} at horizon {horizon}"),
    );
    ctx.check(
        "recurrence_medians_increase",
        increasing,
        "medians strictly increase in m".into(),
    );
    ctx.check(
        "recurrence_subquadratic",
        exponent < 1.0,
        format!(
            "slope of log E exp(gamma tau) vs log(1 + level^2) = {exponent:.4} (gamma {gamma:.4})"
        ),
    );
    Ok(())
}

fn run_interpolation(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let mut violations = 0usize;
    for (d_idx, (&dim, &modes)) in cfg
        .interp_dimensions
        .iter()
        .zip(&cfg.interp_modes)
        .enumerate()
    {
        let lattice =
            ModeLattice::new(dim, modes, cfg.grid_oversample).map_err(|e| Error::Config {
                field: "interp_modes".into(),
                reason: e.to_string(),
            })?;
        // gaps[field][theta]
        let gaps = (0..cfg.n_fields as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::new(cfg.seed, ((d_idx as u64) << 32) | i);
                let f = SpectralField::random(lattice, cfg.field_decay, &mut rng);
                cfg.theta_list
                    .iter()
                    .map(|&th| f.interpolation_gap(th))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (t_idx, &theta) in cfg.theta_list.iter().enumerate() {
            let applicable: Vec<_> = gaps
                .iter()
                .map(|g| g[t_idx])
                .filter(|g| g.applicable())
                .collect();
            let bad = applicable.iter().filter(|g| !g.holds()).count();
            violations += bad;
            let worst = applicable.iter().map(|g| g.lhs / g.rhs).fold(0.0, f64::max);
            ctx.report(
                ReportRow::new("interpolation")
                    .key("dimension", dim)
                    .key("modes", modes)
                    .key("theta", theta)
                    .value("fields", gaps.len() as f64)
                    .value("applicable", applicable.len() as f64)
                    .value("violations", bad as f64)
                    .value("worst_ratio", worst)
                    .value(
                        "constant",
                        crate::lattice::interpolation_constant(dim, theta),
                    ),
            );
        }
    }
    ctx.check(
        "interpolation_holds",
        violations == 0,
        format!("{violations} applicable fields violate the inequality"),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(json).unwrap()
    }

    #[test]
    fn simulate_is_byte_deterministic() {
        let c = cfg(r#"{"experiment": "simulate", "modes": 8, "dt": 0.01, "t_final": 0.5}"#);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.output.ndjson(), b.output.ndjson());
        assert_eq!(a.output.csv().unwrap(), b.output.csv().unwrap());
        assert!(a.passed());
    }

    #[test]
    fn zero_noise_decay_assertion() {
        let c = cfg(
            r#"{"experiment": "simulate", "modes": 16, "dt": 1e-4, "t_final": 1.0,
                "noise": {"kind": "table", "entries": []}}"#,
        );
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.assertions.len(), 1);
        assert!(out.passed(), "{:?}", out.assertions);
    }

    #[test]
    fn invalid_config_is_an_error() {
        let c = cfg(r#"{"dt": 0.0}"#);
        let err = run_experiment(&c).unwrap_err();
        assert_eq!(error_exit_code(&err), 2);
    }

    #[test]
    fn blow_up_has_its_own_status() {
        let c = cfg(
            r#"{"experiment": "simulate", "modes": 8, "dt": 0.05, "t_final": 5.0,
                "u0": {"kind": "eigenmode", "mode": [1], "amplitude": 30.0}}"#,
        );
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.status, Status::BlowUp);
        assert_eq!(out.status.exit_code(), 3);
        assert!(out.output.rows().iter().any(|r| r.name == "blow_up"));
    }

    #[test]
    fn energy_balance_small_run() {
        let c = cfg(
            r#"{"experiment": "energy_balance", "modes": 16, "dt": 1e-3, "t_final": 0.5,
                "ensemble_size": 64, "energy_tolerance": 0.2}"#,
        );
        let out = run_experiment(&c).unwrap();
        assert!(out.output.rows().iter().any(|r| r.name == "energy_summary"));
        assert_eq!(out.assertions.len(), 2);
    }

    #[test]
    fn every_experiment_runs_small() {
        let base = r#""modes": 8, "dt": 0.01, "t_final": 2.0, "ensemble_size": 8, "series_trajectories": 1"#;
        for (kind, extra) in [
            ("ensemble", ""),
            ("moments", r#", "windows": [[0.0, 1.0], [1.0, 1.0]]"#),
            ("tails", ""),
            ("hitting", r#", "levels": [1.0, 2.0]"#),
            ("lyapunov", r#", "levels": [1.0, 2.0]"#),
            ("convolution", r#", "p_list": [1, 2]"#),
            ("stationary", r#", "burn_in": 1.0"#),
            (
                "mixing",
                r#", "ensemble_size": 128, "t_grid": [0.0, 1.0], "bootstrap": 10"#,
            ),
            ("squeeze", r#", "control_modes": 4, "lambda": 10.0"#),
            ("recurrence", r#", "levels": [1.0], "m_list": [1.0, 2.0]"#),
            (
                "interpolation",
                r#", "n_fields": 4, "interp_modes": [8, 4]"#,
            ),
        ] {
            let mut doc: serde_json::Value =
                serde_json::from_str(&format!(r#"{{"experiment": "{kind}", {base}}}"#)).unwrap();
            let patch: serde_json::Value =
                serde_json::from_str(&format!("{{{}}}", extra.trim_start_matches(','))).unwrap();
            for (k, v) in patch.as_object().unwrap() {
                doc[k] = v.clone();
            }
            let c = cfg(&doc.to_string());
            let out = run_experiment(&c).unwrap_or_else(|e| panic!("{kind}: {e}"));
            assert_ne!(out.status, Status::BlowUp, "{kind}");
            let first = out.output.ndjson().split(|b| *b == b'\n').next().unwrap();
            assert!(std::str::from_utf8(first)
                .unwrap()
                .contains(r#""type":"meta""#));
            assert!(!out.output.rows().is_empty(), "{kind}");
        }
    }
}
