//! Config-driven CLI over the file-backed stages.
//!
//! `shapeforge <stage> --config <path> [--workers N] [--out DIR]`
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

pub mod config;
pub mod manifest;
pub mod report;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use report::{report, verify_artifacts, verify_quarantine, Verification};
pub use stages::{augment, evaluate, generate, pdm, predict, train};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Stage {
    /// Synthesize the study corpus
    Generate,
    /// Build the shape space from the PDM-training split
    Pdm,
    /// Sample the shape space and warp training images
    Augment,
    /// Fit the volumetric network on the augmented set
    Train,
    /// Predict loadings for augmented and corpus volumes
    Predict,
    /// Error reports, histograms, vertex fields, downstream tests
    Evaluate,
    /// Verify the manifest and write report/report.md
    Report,
    /// Run the built-in numerical checks
    Selftest,
    /// All stages from generate to report
    Run,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] =
        [Stage::Generate, Stage::Pdm, Stage::Augment, Stage::Train, Stage::Predict, Stage::Evaluate, Stage::Report];
}

#[derive(Debug, Parser)]
#[command(name = "shapeforge", version, about = "Shape models from volumetric images")]
struct Cli {
    #[command(subcommand)]
    stage: Stage,
    /// Run configuration (`section.key = value` lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding run.out
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

/// Execute one stage (or the whole pipeline for [`Stage::Run`]).
pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    match stage {
        Stage::Generate => generate(cfg),
        Stage::Pdm => pdm(cfg),
        Stage::Augment => augment(cfg),
        Stage::Train => train(cfg),
        Stage::Predict => predict(cfg),
        Stage::Evaluate => evaluate(cfg),
        Stage::Report => report(cfg),
        Stage::Selftest => selftest(),
        Stage::Run => {
            for s in Stage::PIPELINE {
                log::info!("stage {s:?}");
                run_stage(s, cfg)?;
            }
            Ok(())
        }
    }
}

/// Quick numerical checks of the core operators.
pub fn selftest() -> Result<()> {
    use crate::neuralnet::{check_gradients, xavier_init, Batch, NetSpec};
    let fail = |what: &str, detail: String| Err(Error::Degenerate(format!("selftest {what}: {detail}")));

    let spec = NetSpec::loadings_regressor([4; 3], 2, 1, 3)?;
    let params = xavier_init(&spec, 1)?;
    let x: Vec<f64> = (0..6 * 64).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    let t = [[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2], [0.0, 0.1], [0.2, 0.2], [-0.1, -0.3]];
    let targets: Vec<&[f64]> = t.iter().map(|r| r.as_slice()).collect();
    for c in check_gradients(&spec, &params, &Batch::new(6, spec.input, x)?, &targets, 1e-4)? {
        if !(c.rel_error < 1e-4) {
            return fail("gradients", format!("{c:?}"));
        }
    }
    log::info!("selftest: gradients ok");

    let tt = crate::evalstats::student_t_cdf(2.262, 9.0);
    if (2.0 * (1.0 - tt) - 0.05).abs() > 1e-3 {
        return fail("t distribution", format!("two-sided p at 2.262/9 df = {}", 2.0 * (1.0 - tt)));
    }
    log::info!("selftest: t distribution ok");

    let from = crate::synthdata::make_shape(&crate::synthdata::ShapeParams::ellipsoid([10.0, 8.0, 6.0]), 16)?;
    let to = crate::synthdata::make_shape(&crate::synthdata::ShapeParams::ellipsoid([11.0, 7.0, 6.5]), 16)?;
    let w = crate::augment::fit_tps(&from, &to, 0.0)?;
    let worst = from.points.iter().zip(&to.points).map(|(a, b)| (w.apply(a) - b).norm()).fold(0.0, f64::max);
    if worst > 1e-6 {
        return fail("TPS interpolation", format!("residual {worst}"));
    }
    log::info!("selftest: TPS ok");
    Ok(())
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return 1;
        }
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("worker pool already set up: {e}");
        }
    }
    if cli.stage == Stage::Selftest && cli.config.is_none() {
        return report_result(selftest());
    }
    let Some(path) = cli.config else {
        eprintln!("error: --config <path> is required for {:?}", cli.stage);
        return 1;
    };
    let mut cfg = match RunConfig::load(&path) {
        Ok(c) => c,
        Err(e) => return report_result(Err(e)),
    };
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    report_result(run_stage(cli.stage, &cfg))
}

fn report_result(r: Result<()>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(e) => {
            // usage problems are caught before any stage runs
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_command(["shapeforge", "frobnicate"]), 1);
        assert_eq!(run_command(["shapeforge"]), 1);
        assert_eq!(run_command(["shapeforge", "pdm"]), 1);
        assert_eq!(run_command(["shapeforge", "pdm", "--config", "x.cfg", "--workers", "0"]), 1);
    }

    #[test]
    fn missing_config_file_is_a_data_error() {
        assert_eq!(run_command(["shapeforge", "pdm", "--config", "/nonexistent/x.cfg"]), 2);
    }

    #[test]
    fn selftest_passes() {
        selftest().unwrap();
    }
}
