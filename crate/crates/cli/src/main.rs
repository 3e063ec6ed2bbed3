//! Command-line front end: `cgl-ergo <experiment> --config <path>` and
//! `cgl-ergo validate [--quick]`.

use std::path::PathBuf;
use std::process::ExitCode;

use cgl_ergo::experiment::{
    error_exit_code, run_experiment, validate_with, ExperimentConfig, ExperimentKind, Scale,
};
use cgl_ergo::Error;
use clap::Parser;

const USAGE_EXIT: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cgl-ergo",
    version,
    about = "Stochastic complex Ginzburg-Landau Monte Carlo harness"
)]
struct Cli {
    /// Experiment name, or `validate` for the acceptance suite.
    #[arg(value_parser = experiment_names())]
    experiment: String,
    /// JSON config file (required except for `validate`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (defaults to `output_path` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed` from the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// `validate` only: quarter scale with doubled tolerances.
    #[arg(long)]
    quick: bool,
}

fn experiment_names() -> Vec<&'static str> {
    ExperimentKind::ALL.iter().map(|k| k.name()).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
        {
            eprintln!("error: cannot configure {k} threads: {e}");
            return ExitCode::from(USAGE_EXIT);
        }
    }
    let kind = ExperimentKind::parse(&cli.experiment).expect("clap checked the name");
    let code = if kind == ExperimentKind::Validate {
        run_validate(&cli)
    } else {
        run_single(&cli, kind)
    };
    ExitCode::from(code as u8)
}

fn report_error(err: &Error) -> i32 {
    eprintln!("error: {err}");
    error_exit_code(err)
}

fn run_single(cli: &Cli, kind: ExperimentKind) -> i32 {
    if cli.quick {
        eprintln!("error: --quick only applies to `validate`");
        return USAGE_EXIT as i32;
    }
    let Some(path) = &cli.config else {
        eprintln!("error: `{kind}` needs --config <path>");
        return USAGE_EXIT as i32;
    };
    let mut cfg = match ExperimentConfig::from_path(path) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    if cfg.experiment != kind {
        eprintln!("note: config names `{}`, running `{kind}`", cfg.experiment);
        cfg.experiment = kind;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let outcome = match run_experiment(&cfg) {
        Ok(o) => o,
        Err(e) => return report_error(&e),
    };
    // --out is a destination only; the echoed config stays the same.
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output_path));
    match outcome.output.write_to(&dir, kind.name()) {
        Ok((nd, csv)) => println!("wrote {} and {}", nd.display(), csv.display()),
        Err(e) => return report_error(&e),
    }
    for a in &outcome.assertions {
        let verdict = if a.passed { "PASS" } else { "FAIL" };
        println!("[{verdict}] {}: {}", a.name, a.detail);
    }
    let code = outcome.status.exit_code();
    if code == 3 {
        eprintln!("error: trajectory blew up; partial series written");
    }
    code
}

fn run_validate(cli: &Cli) -> i32 {
    if cli.config.is_some() || cli.seed.is_some() {
        eprintln!("error: `validate` uses fixed presets; --config and --seed are not accepted");
        return USAGE_EXIT as i32;
    }
    let scale = if cli.quick { Scale::Quick } else { Scale::Full };
    let report = match validate_with(scale, |r| println!("{}", r.line())) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    let passed = report.results.iter().filter(|r| r.passed).count();
    println!(
        "{passed}/{} criteria passed in {:.1} s",
        report.results.len(),
        report.seconds
    );
    if let Some(out) = &cli.out {
        match report.output().write_to(out, "validate") {
            Ok((nd, csv)) => println!("wrote {} and {}", nd.display(), csv.display()),
            Err(e) => return report_error(&e),
        }
    }
    if report.passed() {
        0
    } else {
        1
    }
}
