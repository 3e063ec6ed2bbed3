use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use super::config::ExperimentConfig;
use super::output::{Output, ReportRow};
use super::run::{run_experiment, Assertion, Status};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Full,
    /// Quarter sample sizes, doubled tolerances.
    Quick,
}

/// One acceptance criterion: a set of presets that must all pass, or (for
/// `determinism`) be byte-reproducible.
#[derive(Debug, Clone)]
pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    pub presets: Vec<ExperimentConfig>,
    pub determinism: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub status: Vec<Status>,
    pub assertions: Vec<Assertion>,
    #[serde(skip)]
    pub ndjson: Vec<Vec<u8>>,
    #[serde(skip)]
    pub seconds: f64,
}

impl CriterionResult {
    /// `PASS`/`FAIL` line with the failing (or all) assertion details.
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let shown: Vec<&Assertion> = if self.passed {
            self.assertions.iter().collect()
        } else {
            self.assertions.iter().filter(|a| !a.passed).collect()
        };
        let detail = shown
            .iter()
            .map(|a| format!("{}: {}", a.name, a.detail))
            .collect::<Vec<_>>()
            .join("; ");
        format!(
            "[{verdict}] criterion {:>2} {}: {detail}",
            self.id, self.name
        )
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub scale: Scale,
    pub results: Vec<CriterionResult>,
    pub seconds: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        self.results.iter().map(|r| r.line() + "\n").collect()
    }

    /// NDJSON/CSV form of the pass/fail table. Timings are left out so the
    /// table is reproducible.
    pub fn output(&self) -> Output {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment = super::ExperimentKind::Validate;
        let mut out = Output::new(&cfg);
        for r in &self.results {
            out.report(
                ReportRow::new("criterion")
                    .key("id", r.id)
                    .key("name", r.name.clone())
                    .key("scale", json!(self.scale))
                    .key(
                        "assertions",
                        serde_json::to_value(&r.assertions).expect("assertions serialize"),
                    )
                    .flag("passed", r.passed),
            );
        }
        out
    }
}

fn base(json: serde_json::Value) -> ExperimentConfig {
    serde_json::from_value(json).expect("preset is a valid config")
}

fn quarter(n: usize) -> usize {
    (n / 4).max(1)
}

/// Presets for criteria 1 to 10 plus the determinism criterion.
pub fn criteria(scale: Scale) -> Vec<Criterion> {
    let quick = scale == Scale::Quick;
    let n = |full: usize| if quick { quarter(full) } else { full };
    // relative tolerance on a quantity that must stay below a bound
    let tol = |t: f64| if quick { 2.0 * t } else { t };
    // allowed shortfall of a fraction that must reach `f`
    let frac = |f: f64| if quick { 1.0 - 2.0 * (1.0 - f) } else { f };

    let c1 = base(json!({
        "experiment": "energy_balance", "dimension": 1, "modes": 64, "grid_oversample": 4,
        "noise": {"kind": "power_law", "amplitude": 1.0, "exponent": 2.0},
        "a": 0.0, "nu": 1.0, "r": 1.0, "dt": 2e-4, "t_final": 1.0, "record_stride": 50,
        "ensemble_size": n(256), "u0": {"kind": "eigenmode", "mode": [1], "amplitude": 1.0},
        "energy_tolerance": tol(0.03), "series_trajectories": 2
    }));
    let c2 = base(json!({
        "experiment": "ensemble", "modes": 64, "nonlinearity_on": false,
        "noise": {"kind": "power_law", "amplitude": 1.0, "exponent": 2.0},
        "dt": 0.02, "t_final": 10.0, "record_stride": 50, "ensemble_size": n(4096),
        "u0": {"kind": "eigenmode", "mode": [1], "amplitude": 1.0},
        "check_modes": 8, "oracle_sigmas": tol(3.0), "series_trajectories": 2
    }));
    let t3 = if quick { 20.0 + 180.0 / 4.0 } else { 200.0 };
    let c3 = base(json!({
        "experiment": "stationary", "modes": 32, "a": 0.0,
        "noise": {"kind": "power_law", "amplitude": 1.0, "exponent": 0.0},
        "dt": 1e-3, "t_final": t3, "burn_in": 20.0, "record_stride": 10,
        "u0": {"kind": "zero"}, "stationary_tolerance": tol(0.05), "series_trajectories": 0
    }));
    let zero_noise = json!({"kind": "table", "entries": []});
    let c4a = base(json!({
        "experiment": "simulate", "dimension": 1, "modes": 32, "noise": zero_noise,
        "dt": 1e-4, "t_final": 5.0, "record_stride": 100,
        "u0": {"kind": "eigenmode", "mode": [1], "amplitude": 1.0},
        "decay_tolerance": tol(1e-6)
    }));
    let c4b = base(json!({
        "experiment": "simulate", "dimension": 2, "modes": 8, "noise": zero_noise,
        "dt": 1e-4, "t_final": 5.0, "record_stride": 100,
        "u0": {"kind": "eigenmode", "mode": [1, 1], "amplitude": 1.0},
        "decay_tolerance": tol(1e-6)
    }));
    let c5 = base(json!({
        "experiment": "squeeze", "modes": 32, "lambda": 50.0, "control_modes": 8,
        "noise": {"kind": "power_law", "amplitude": 1.0, "exponent": 2.0},
        "dt": 1e-3, "t_final": 5.0, "record_stride": 10, "ensemble_size": n(64),
        "u0": {"kind": "zero"}, "squeeze_w0": 0.5, "slope_threshold": -0.5,
        "squeeze_fraction": frac(0.9), "baseline_median": tol(-0.1)
    }));
    let c6 = base(json!({
        "experiment": "mixing", "modes": 32,
        "noise": {"kind": "power_law", "amplitude": 1.0, "exponent": 2.0},
        "dt": 2e-3, "t_final": 20.0, "ensemble_size": n(512).max(128), "radius": 8,
        "u0": {"kind": "zero"}, "u0_b": {"kind": "eigenmode", "mode": [1], "amplitude": 3.0},
        "t_grid": [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0],
        "mixing_threshold": tol(0.1), "mixing_initial": if quick { 0.15 } else { 0.3 },
        "mixing_decrease": frac(0.7), "bootstrap": 200
    }));
    let c7 = base(json!({
        "experiment": "tails", "modes": 32,
        "noise": {"kind": "power_law", "amplitude": 1.0, "exponent": 2.0},
        "dt": 2e-3, "t_final": 50.0, "record_stride": 25, "ensemble_size": n(1024),
        "u0": {"kind": "zero"}, "rho_points": 12, "rho_quantile_lo": 0.5, "rho_quantile_hi": 0.99,
        "tail_r2": frac(0.9), "tail_decades": if quick { 0.5 } else { 1.0 }, "series_trajectories": 2
    }));
    let c8 = base(json!({
        "experiment": "interpolation", "interp_dimensions": [1, 2], "interp_modes": [32, 12],
        "theta_list": [0.3, 0.5, 0.7], "n_fields": n(1000), "field_decay": 1.0
    }));
    let c9 = base(json!({
        "experiment": "convolution", "modes": 16,
        "noise": {"kind": "single_mode", "mode": [1], "amplitude": 1.0},
        "dt": 1e-3, "t_final": 1.0, "window": 1.0, "record_stride": 100,
        "ensemble_size": n(4096), "p_list": [1, 2, 3, 4, 5, 6], "ratio_spread": tol(0.25),
        "series_trajectories": 2
    }));
    let c10 = base(json!({
        "experiment": "recurrence", "modes": 16,
        "noise": {"kind": "power_law", "amplitude": 0.5, "exponent": 2.0},
        "dt": 1e-3, "t_final": 100.0, "ensemble_size": n(128), "check_stride": 10,
        "levels": [1.0, 2.0, 4.0, 8.0], "m_list": [1.0, 2.0, 4.0], "ball_l": 2.0,
        "u0": {"kind": "sup_level", "mode": [1], "level": 1.0},
        "u0_b": {"kind": "sup_level", "mode": [2], "level": 1.0},
        "max_censoring": tol(0.2)
    }));

    let mut list = vec![
        Criterion {
            id: 1,
            name: "energy identity",
            presets: vec![c1],
            determinism: false,
        },
        Criterion {
            id: 2,
            name: "linear OU exactness",
            presets: vec![c2],
            determinism: false,
        },
        Criterion {
            id: 3,
            name: "stationary H1 balance",
            presets: vec![c3],
            determinism: false,
        },
        Criterion {
            id: 4,
            name: "deterministic decay",
            presets: vec![c4a, c4b],
            determinism: false,
        },
        Criterion {
            id: 5,
            name: "Foias-Prodi squeezing",
            presets: vec![c5],
            determinism: false,
        },
        Criterion {
            id: 6,
            name: "mixing decay",
            presets: vec![c6],
            determinism: false,
        },
        Criterion {
            id: 7,
            name: "tail statistic",
            presets: vec![c7],
            determinism: false,
        },
        Criterion {
            id: 8,
            name: "interpolation inequality",
            presets: vec![c8],
            determinism: false,
        },
        Criterion {
            id: 9,
            name: "stochastic convolution growth",
            presets: vec![c9],
            determinism: false,
        },
        Criterion {
            id: 10,
            name: "hitting and recurrence",
            presets: vec![c10],
            determinism: false,
        },
    ];
    let quick_presets = if quick {
        list.iter().flat_map(|c| c.presets.clone()).collect()
    } else {
        criteria(Scale::Quick)
            .into_iter()
            .filter(|c| !c.determinism)
            .flat_map(|c| c.presets)
            .collect()
    };
    list.push(Criterion {
        id: 11,
        name: "determinism",
        presets: quick_presets,
        determinism: true,
    });
    list
}

impl Criterion {
    /// Runs the presets. For the determinism criterion, `previous` holds
    /// earlier outputs of the same presets to compare against (otherwise
    /// every preset is run twice).
    pub fn evaluate(&self, previous: Option<&[Vec<u8>]>) -> Result<CriterionResult> {
        let start = Instant::now();
        let mut status = Vec::new();
        let mut assertions = Vec::new();
        let mut ndjson = Vec::new();
        let mut passed = true;
        for (k, preset) in self.presets.iter().enumerate() {
            let first = run_experiment(preset)?;
            if self.determinism {
                let reference = match previous.and_then(|p| p.get(k)) {
                    Some(bytes) => bytes.clone(),
                    None => run_experiment(preset)?.output.ndjson().to_vec(),
                };
                let same = reference == first.output.ndjson();
                passed &= same;
                assertions.push(Assertion {
                    name: format!("{}#{k}", preset.experiment),
                    passed: same,
                    detail: format!(
                        "{} bytes, {}",
                        first.output.ndjson().len(),
                        if same { "identical" } else { "differs" }
                    ),
                });
            } else {
                passed &= first.passed();
                assertions.extend(first.assertions.iter().cloned());
            }
            status.push(first.status);
            ndjson.push(first.output.ndjson().to_vec());
        }
        Ok(CriterionResult {
            id: self.id,
            name: self.name.to_string(),
            passed,
            status,
            assertions,
            ndjson,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Runs every criterion. At quick scale the determinism check compares a
/// second run against the outputs already produced.
pub fn validate(scale: Scale) -> Result<ValidationReport> {
    validate_with(scale, |_| {})
}

/// [`validate`] with a callback after each criterion.
pub fn validate_with(
    scale: Scale,
    mut progress: impl FnMut(&CriterionResult),
) -> Result<ValidationReport> {
    let start = Instant::now();
    let mut results: Vec<CriterionResult> = Vec::new();
    for c in criteria(scale) {
        let r = if c.determinism && scale == Scale::Quick {
            let prior: Vec<Vec<u8>> = results.iter().flat_map(|r| r.ndjson.clone()).collect();
            c.evaluate(Some(&prior))?
        } else {
            c.evaluate(None)?
        };
        progress(&r);
        results.push(r);
    }
    Ok(ValidationReport {
        scale,
        results,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for scale in [Scale::Full, Scale::Quick] {
            let list = criteria(scale);
            assert_eq!(list.len(), 11);
            for c in &list {
                for p in &c.presets {
                    p.validate()
                        .unwrap_or_else(|e| panic!("criterion {}: {e}", c.id));
                }
            }
            assert_eq!(list[10].presets.len(), 11);
        }
    }

    #[test]
    fn zero_tolerance_fails_only_its_criterion() {
        let mut list = criteria(Scale::Quick);
        list[3].presets[0].decay_tolerance = -1.0;
        let broken = list[3].evaluate(None).unwrap();
        assert!(!broken.passed);
        assert!(broken.line().starts_with("[FAIL]"));
        let fine = criteria(Scale::Quick)[3].evaluate(None).unwrap();
        assert!(fine.passed, "{}", fine.line());
    }
}
