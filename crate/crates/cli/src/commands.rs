use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use attnspec::detector::{
    evaluate_one, fit_detector, fit_perplexity, shd_classify, Classifier, DetectorConfig, DetectorError, EvalReport,
    PerplexityModel, ShdResult, Verdict,
};
use attnspec::io::parse_capture;
use attnspec::stats::{build_baseline, compare_groups};
use attnspec::theory::{run_verification, VerifyConfig};
use attnspec::{analyze_run, read_trajectory_report, write_report, DetectorModel, ReportFormat, ReportRef, TrajectoryReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CliConfig, PartialConfig, Precision};
use crate::{BaselineCommand, Cli, Command, Failure, StatsCommand};

const MAGIC: &[u8] = b"SPECLLM1";

pub fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(path) => PartialConfig::load(path)?,
        None => PartialConfig::default(),
    };
    let cfg = file.merge(cli.settings.partial()).resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(anyhow!("--threads must be at least 1").into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| anyhow!("thread pool: {e}"))?;
    pool.install(|| dispatch(cli.command, &cfg))
}

fn dispatch(command: Command, cfg: &CliConfig) -> Result<(), Failure> {
    match command {
        Command::Analyze { capture, output } => {
            let report = load_report(&capture, cfg)?;
            emit(&render(&report, cfg.format.into())?, output.as_deref())?;
        }
        Command::PlotData { input, output } => {
            let report = load_report(&input, cfg)?;
            emit(&render(&report, ReportFormat::Csv)?, output.as_deref())?;
        }
        Command::Baseline {
            command: BaselineCommand::Build { dir, output },
        } => {
            let runs = load_dir(&dir, cfg)?;
            let band = build_baseline(&runs, cfg.band_multiplier).with_context(|| format!("baseline from {}", dir.display()))?;
            emit(&json(&WithConfig { config: cfg, result: &band })?, output.as_deref())?;
        }
        Command::Stats {
            command: StatsCommand::Compare { dir_a, dir_b, output },
        } => {
            let a = load_dir(&dir_a, cfg)?;
            let b = load_dir(&dir_b, cfg)?;
            let layers = compare_groups(&a, &b).context("comparing groups")?;
            let out = Comparison {
                config: cfg,
                group_a: Group::of(&dir_a, &a),
                group_b: Group::of(&dir_b, &b),
                layers,
            };
            emit(&json(&out)?, output.as_deref())?;
        }
        Command::Fit {
            factual,
            calibration,
            test,
            auto_direction,
            default_threshold,
            output,
        } => fit(cfg, &factual, &calibration, test.as_deref(), auto_direction, default_threshold, output.as_deref())?,
        Command::Detect { input, model, output } => {
            let text = fs::read(&model).with_context(|| format!("reading model {}", model.display()))?;
            let file: ModelFile = serde_json::from_slice(&text).with_context(|| format!("parsing model {}", model.display()))?;
            let report = load_report(&input, cfg)?;
            let shd = shd_classify(&report, &file.shd).with_context(|| format!("classifying {}", input.display()))?;
            let perplexity = file.perplexity.as_ref().map(|m| m.classify(&report).map_err(|e| e.to_string()));
            let out = Detection {
                config: cfg,
                run_id: &report.run_id,
                domain: &report.manifest.domain_tag,
                variant: file.shd.variant,
                shd,
                perplexity: perplexity.as_ref().and_then(|r| r.as_ref().ok().copied()),
                perplexity_note: perplexity.and_then(|r| r.err()),
            };
            emit(&json(&out)?, output.as_deref())?;
        }
        Command::Verify {
            sweeps,
            max_nodes,
            max_dim,
            eigen_max_nodes,
            min_correlation,
            output,
        } => {
            let vc = VerifyConfig {
                sweeps,
                seed: cfg.seed,
                max_nodes,
                max_dim,
                eigen_max_nodes,
                min_correlation,
            };
            if max_nodes < 2 || max_dim < 1 || eigen_max_nodes < 2 {
                return Err(anyhow!("verify needs --max-nodes >= 2, --max-dim >= 1 and --eigen-max-nodes >= 2").into());
            }
            let report = run_verification(&vc);
            for c in &report.checks {
                log::info!("{}: {}/{} passed", c.name, c.passed, c.instances);
            }
            emit(&json(&report)?, output.as_deref())?;
            if !report.all_passed {
                for c in report.checks.iter().filter(|c| !c.ok()) {
                    eprintln!("FAILED {}: {}/{} instances passed", c.name, c.passed, c.instances);
                }
                if !report.correlation_ok {
                    eprintln!("FAILED hfer_mad_correlation: {:?}", report.correlation);
                }
                return Err(Failure::SweepFailed);
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct WithConfig<'a, T: Serialize> {
    config: &'a CliConfig,
    result: &'a T,
}

#[derive(Serialize)]
struct Group {
    dir: String,
    runs: usize,
}

impl Group {
    fn of(dir: &Path, runs: &[TrajectoryReport]) -> Self {
        Group {
            dir: dir.display().to_string(),
            runs: runs.len(),
        }
    }
}

#[derive(Serialize)]
struct Comparison<'a> {
    config: &'a CliConfig,
    group_a: Group,
    group_b: Group,
    layers: Vec<attnspec::stats::LayerComparison>,
}

#[derive(Serialize)]
struct Detection<'a> {
    config: &'a CliConfig,
    run_id: &'a str,
    domain: &'a str,
    variant: attnspec::FiedlerVariant,
    shd: ShdResult,
    perplexity: Option<Verdict>,
    perplexity_note: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(default)]
    config: Option<serde_json::Value>,
    shd: DetectorModel,
    #[serde(default)]
    perplexity: Option<PerplexityModel>,
    #[serde(default)]
    perplexity_note: Option<String>,
    #[serde(default)]
    evaluation: Option<Vec<EvalReport>>,
}

fn fit(
    cfg: &CliConfig,
    factual: &Path,
    calibration: &Path,
    test: Option<&Path>,
    auto_direction: bool,
    default_threshold: f64,
    output: Option<&Path>,
) -> Result<()> {
    if !(default_threshold.is_finite()) {
        return Err(anyhow!("default threshold must be finite"));
    }
    let fact = load_dir(factual, cfg)?;
    let calib = load_dir(calibration, cfg)?;
    let dc = DetectorConfig {
        variant: cfg.fiedler_variant,
        default_threshold,
        auto_direction,
        ..DetectorConfig::default()
    };
    let shd = fit_detector(&fact, &calib, &dc).context("fitting detector")?;
    for w in &shd.warnings {
        log::warn!("{w}");
    }
    let (perplexity, perplexity_note) = match fit_perplexity(&calib) {
        Ok(m) => (Some(m), None),
        Err(e @ DetectorError::Inapplicable(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e).context("fitting perplexity baseline"),
    };
    let evaluation = match test {
        None => None,
        Some(dir) => {
            let runs = load_dir(dir, cfg)?;
            let mut reports = vec![evaluate_one(&shd, &runs).context("evaluating detector")?];
            if let Some(p) = &perplexity {
                reports.push(evaluate_one(p, &runs).context("evaluating perplexity baseline")?);
            }
            Some(reports)
        }
    };
    let file = ModelFile {
        config: Some(serde_json::to_value(cfg)?),
        shd,
        perplexity,
        perplexity_note,
        evaluation,
    };
    emit(&json(&file)?, output)
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn render(report: &TrajectoryReport, format: ReportFormat) -> Result<Vec<u8>> {
    Ok(write_report(ReportRef::Trajectory(report), format)?)
}

fn emit(bytes: &[u8], output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

/// A capture file is analyzed; anything else is read as a JSON report.
fn load_report(path: &Path, cfg: &CliConfig) -> Result<TrajectoryReport> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    if bytes.starts_with(MAGIC) {
        let capture = parse_capture(&bytes).with_context(|| format!("invalid capture {}", path.display()))?;
        let analysis = cfg.analysis();
        let report = match cfg.precision {
            Precision::F64 => analyze_run::<f64>(&capture, &analysis),
            Precision::F32 => analyze_run::<f32>(&capture, &analysis),
        };
        report.with_context(|| format!("analyzing {}", path.display()))
    } else {
        read_trajectory_report(&bytes).with_context(|| format!("invalid report {}", path.display()))
    }
}

/// Loads every regular, non-hidden file of `dir` in name order.
fn load_dir(dir: &Path, cfg: &CliConfig) -> Result<Vec<TrajectoryReport>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("listing {}", dir.display()))?;
    paths.retain(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')));
    paths.sort();
    if paths.is_empty() {
        return Err(anyhow!("directory {} contains no runs", dir.display()));
    }
    paths.par_iter().map(|p| load_report(p, cfg)).collect()
}
