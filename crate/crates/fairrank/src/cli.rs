//! The `fairrank` command-line surface.
//!
//! Subcommands: `synth`, `convert`, `calibrate`, `evaluate`, `sweep`,
//! `coverage`. Values resolve by precedence flag > config file > default;
//! the config file (`--config`) is TOML whose keys mirror the flag names
//! (`alpha = 0.15`, `cal-fraction = 0.25`, ...). Every run logs the fully
//! resolved configuration, including defaulted values and the seed, so any
//! report can be reproduced. `FAIRRANK_LOG` controls log verbosity.
//!
//! Exit codes: 0 on success, 1 on validation or parse errors, 2 when a
//! coverage run abstains in every trial.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, QueryCollection, SplitSpec};
use crate::harness::{
    self, emit_report, evaluation_report, write_report, AlphaMode, CalibrationSettings, OutFormat,
    Report, SynthSpec,
};
use crate::metrics::{self, EvalMode};
use crate::plmodel::{fit_normalization, Lambdas, RcScoreTable, TplConfig};
use crate::riskcontrol::{self, build_grid, Bound, CalibrationResult, GridMode, RiskSpec};
use crate::seeds::mix;
use crate::{Error, Result};

const CAL_TAG: u64 = 0xCA10;
const EVAL_TAG: u64 = 0xE7A1;
const SWEEP_TAG: u64 = 0x53EE;

/// Input dataset format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Svmlight,
}

#[derive(Parser, Debug)]
#[command(
    name = "fairrank",
    version,
    about = "Calibrate a pretrained ranking scorer into a thresholded Plackett-Luce \
             stochastic ranker with a distribution-free utility guarantee"
)]
pub struct Cli {
    /// TOML config file; keys mirror flag names, flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; drawn from OS entropy (and logged) when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct DataArgs {
    /// Input dataset (JSONL queries, or SVMLight features with --scores).
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,

    /// Score sidecar for SVMLight input (one real per feature line).
    #[arg(long, value_name = "PATH")]
    scores: Option<PathBuf>,

    #[arg(long, value_enum)]
    format: Option<DataFormat>,
}

#[derive(Args, Debug, Default, Clone)]
struct ModelArgs {
    /// Ranking cutoff K.
    #[arg(long)]
    k: Option<usize>,

    /// Softmax temperature τ.
    #[arg(long)]
    tau: Option<f64>,

    /// Monte Carlo samples per query.
    #[arg(long)]
    mc_samples: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
#[command(group(ArgGroup::new("target").args(["alpha", "alpha_rel"])))]
struct RiskArgs {
    /// Absolute target risk level α.
    #[arg(long)]
    alpha: Option<f64>,

    /// Relative target: guarantee NDCG@K >= ρ times the deterministic
    /// model's NDCG@K (α = 1 − ρ·U*).
    #[arg(long)]
    alpha_rel: Option<f64>,

    /// Tolerance δ.
    #[arg(long)]
    delta: Option<f64>,

    #[arg(long, value_enum)]
    bound: Option<Bound>,

    /// Number of candidate thresholds.
    #[arg(long)]
    grid_points: Option<usize>,

    #[arg(long, value_enum)]
    grid_mode: Option<GridMode>,
}

#[derive(Args, Debug, Default, Clone)]
struct OutArgs {
    /// Output path; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    #[arg(long, value_enum)]
    out_format: Option<OutFormat>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark dataset as JSONL.
    Synth {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        num_queries: Option<usize>,
        #[arg(long)]
        docs_min: Option<usize>,
        #[arg(long)]
        docs_max: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        tie_cluster_prob: Option<f64>,
    },
    /// Convert SVMLight features plus a score sidecar to JSONL.
    Convert {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Select a risk-controlling threshold on a calibration dataset.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        risk: RiskArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate NDCG / risk / disparity at a fixed threshold.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Threshold λ to evaluate.
        #[arg(long, conflicts_with = "calibration", allow_negative_numbers = true)]
        lambda: Option<f64>,
        /// Calibration JSON to take λ̂ from (falls back to λ = 1 on abstain).
        #[arg(long, value_name = "PATH")]
        calibration: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sweep the utility/fairness trade-off over a threshold grid.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long, value_enum)]
        grid_mode: Option<GridMode>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Repeated-split coverage experiment.
    Coverage {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        risk: RiskArgs,
        /// Number of repeated splits.
        #[arg(long)]
        trials: Option<u32>,
        /// Calibration fraction of each split.
        #[arg(long)]
        cal_fraction: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
}

/// Config-file schema: every key mirrors a flag name.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    scores: Option<PathBuf>,
    format: Option<DataFormat>,
    k: Option<usize>,
    tau: Option<f64>,
    #[serde(rename = "mc-samples")]
    mc_samples: Option<usize>,
    alpha: Option<f64>,
    #[serde(rename = "alpha-rel")]
    alpha_rel: Option<f64>,
    delta: Option<f64>,
    bound: Option<Bound>,
    #[serde(rename = "grid-points")]
    grid_points: Option<usize>,
    #[serde(rename = "grid-mode")]
    grid_mode: Option<GridMode>,
    trials: Option<u32>,
    #[serde(rename = "cal-fraction")]
    cal_fraction: Option<f64>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    #[serde(rename = "out-format")]
    out_format: Option<OutFormat>,
    lambda: Option<f64>,
    #[serde(rename = "num-queries")]
    num_queries: Option<usize>,
    #[serde(rename = "docs-min")]
    docs_min: Option<usize>,
    #[serde(rename = "docs-max")]
    docs_max: Option<usize>,
    #[serde(rename = "noise-sigma")]
    noise_sigma: Option<f64>,
    #[serde(rename = "tie-cluster-prob")]
    tie_cluster_prob: Option<f64>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved run configuration, logged before any computation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: &'static str,
    pub input: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub format: DataFormat,
    pub tpl: TplConfig,
    pub alpha_mode: Option<AlphaMode>,
    pub settings: CalibrationSettings,
    pub trials: u32,
    pub cal_fraction: f64,
    pub lambda: Option<f64>,
    pub calibration: Option<PathBuf>,
    pub synth: SynthSpec,
    pub out: Option<PathBuf>,
    pub out_format: OutFormat,
    pub seed: u64,
    pub threads: Option<usize>,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let file = FileConfig::load(cli.config.as_deref())?;

    let seed = cli.seed.or(file.seed).unwrap_or_else(|| {
        let s: u64 = rand::random();
        log::info!("no --seed given; drew {s} from OS entropy");
        s
    });
    let threads = cli.threads.or(file.threads);

    let (subcommand, data, model, risk, out_args) = match &cli.command {
        Command::Synth { out, .. } => (
            "synth",
            DataArgs::default(),
            ModelArgs::default(),
            RiskArgs::default(),
            out.clone(),
        ),
        Command::Convert { data, out } => (
            "convert",
            data.clone(),
            ModelArgs::default(),
            RiskArgs::default(),
            out.clone(),
        ),
        Command::Calibrate {
            data,
            model,
            risk,
            out,
        } => (
            "calibrate",
            data.clone(),
            model.clone(),
            risk.clone(),
            out.clone(),
        ),
        Command::Evaluate {
            data, model, out, ..
        } => (
            "evaluate",
            data.clone(),
            model.clone(),
            RiskArgs::default(),
            out.clone(),
        ),
        Command::Sweep {
            data,
            model,
            grid_points,
            grid_mode,
            out,
        } => (
            "sweep",
            data.clone(),
            model.clone(),
            RiskArgs {
                grid_points: *grid_points,
                grid_mode: *grid_mode,
                ..RiskArgs::default()
            },
            out.clone(),
        ),
        Command::Coverage {
            data,
            model,
            risk,
            out,
            ..
        } => (
            "coverage",
            data.clone(),
            model.clone(),
            risk.clone(),
            out.clone(),
        ),
    };

    let k = model.k.or(file.k).unwrap_or(5);
    let tau = model.tau.or(file.tau).unwrap_or(1.0);
    let m = model.mc_samples.or(file.mc_samples).unwrap_or(100);
    let tpl = TplConfig::new(k, tau, Lambdas::Shared(0.0), m)?;

    let alpha = risk.alpha.or(file.alpha);
    let alpha_rel = risk.alpha_rel.or(file.alpha_rel);
    let alpha_mode = match (alpha, alpha_rel) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "--alpha and --alpha-rel are mutually exclusive".into(),
            ))
        }
        (Some(a), None) => Some(AlphaMode::Absolute(a)),
        (None, Some(rho)) => Some(AlphaMode::Relative(rho)),
        (None, None) => None,
    };
    if let Some(mode) = &alpha_mode {
        mode.validate()?;
    }

    let settings = CalibrationSettings {
        delta: risk.delta.or(file.delta).unwrap_or(0.1),
        bound: risk.bound.or(file.bound).unwrap_or(Bound::Hb),
        grid_points: risk.grid_points.or(file.grid_points).unwrap_or(101),
        grid_mode: risk
            .grid_mode
            .or(file.grid_mode)
            .unwrap_or(GridMode::Uniform),
        dkwm_const: riskcontrol::DkwmConst::Conservative,
    };
    if !(settings.delta > 0.0 && settings.delta < 1.0) {
        return Err(Error::Config(format!(
            "delta must lie in (0,1), got {}",
            settings.delta
        )));
    }
    if settings.grid_points < 1 {
        return Err(Error::Config("grid-points must be >= 1".into()));
    }

    let (trials, cal_fraction) = match &cli.command {
        Command::Coverage {
            trials,
            cal_fraction,
            ..
        } => (
            trials.or(file.trials).unwrap_or(100),
            cal_fraction.or(file.cal_fraction).unwrap_or(0.25),
        ),
        _ => (
            file.trials.unwrap_or(100),
            file.cal_fraction.unwrap_or(0.25),
        ),
    };
    if trials < 1 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    // Validates the fraction range.
    SplitSpec::new(cal_fraction, seed, 0)?;

    let (lambda, calibration) = match &cli.command {
        Command::Evaluate {
            lambda,
            calibration,
            ..
        } => (lambda.or(file.lambda), calibration.clone()),
        _ => (file.lambda, None),
    };
    if let Some(l) = lambda {
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {l}")));
        }
    }

    let synth = match &cli.command {
        Command::Synth {
            num_queries,
            docs_min,
            docs_max,
            noise_sigma,
            tie_cluster_prob,
            ..
        } => {
            let defaults = SynthSpec::default();
            let spec = SynthSpec {
                num_queries: num_queries
                    .or(file.num_queries)
                    .unwrap_or(defaults.num_queries),
                docs_per_query: (
                    docs_min
                        .or(file.docs_min)
                        .unwrap_or(defaults.docs_per_query.0),
                    docs_max
                        .or(file.docs_max)
                        .unwrap_or(defaults.docs_per_query.1),
                ),
                noise_sigma: noise_sigma
                    .or(file.noise_sigma)
                    .unwrap_or(defaults.noise_sigma),
                tie_cluster_prob: tie_cluster_prob
                    .or(file.tie_cluster_prob)
                    .unwrap_or(defaults.tie_cluster_prob),
                seed,
                ..defaults
            };
            spec.validate()?;
            spec
        }
        _ => SynthSpec {
            seed,
            ..SynthSpec::default()
        },
    };

    Ok(RunConfig {
        subcommand,
        input: data.input.or(file.input),
        scores: data.scores.or(file.scores),
        format: data.format.or(file.format).unwrap_or(DataFormat::Jsonl),
        tpl,
        alpha_mode,
        settings,
        trials,
        cal_fraction,
        lambda,
        calibration,
        synth,
        out: out_args.out.or(file.out),
        out_format: out_args
            .out_format
            .or(file.out_format)
            .unwrap_or(OutFormat::Json),
        seed,
        threads,
    })
}

fn load_dataset(cfg: &RunConfig) -> Result<QueryCollection> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| Error::Config("--input is required".into()))?;
    let collection = match cfg.format {
        DataFormat::Jsonl => {
            if cfg.scores.is_some() {
                return Err(Error::Config(
                    "--scores only applies to --format svmlight".into(),
                ));
            }
            dataset::parse_jsonl(input)?
        }
        DataFormat::Svmlight => {
            let scores = cfg
                .scores
                .as_deref()
                .ok_or_else(|| Error::Config("--format svmlight requires --scores".into()))?;
            dataset::parse_svmlight(input, scores)?
        }
    };
    let total = collection.len();
    let (filtered, removed) = dataset::filter_no_relevant(&collection, 1)?;
    if removed > 0 {
        log::info!("filtered {removed}/{total} queries with no relevant documents");
    }
    if filtered.is_empty() {
        return Err(Error::Validation(
            "no queries with relevant documents remain after filtering".into(),
        ));
    }
    Ok(filtered)
}

fn build_table(cfg: &RunConfig, collection: &QueryCollection) -> Result<RcScoreTable> {
    let stats = fit_normalization(collection)?;
    log::info!(
        "normalization stats: mean={:.6}, std={:.6}{}",
        stats.mean,
        stats.std,
        if stats.is_degenerate() {
            " (degenerate)"
        } else {
            ""
        }
    );
    RcScoreTable::build_or_uniform(collection, &stats, cfg.tpl.tau)
}

fn emit<R: Report>(report: &R, cfg: &RunConfig) -> Result<()> {
    match &cfg.out {
        Some(path) => {
            emit_report(report, path, cfg.out_format)?;
            log::info!("wrote report to {}", path.display());
            Ok(())
        }
        None => write_report(report, std::io::stdout().lock(), cfg.out_format),
    }
}

fn require_alpha(cfg: &RunConfig) -> Result<AlphaMode> {
    cfg.alpha_mode
        .ok_or_else(|| Error::Config("one of --alpha or --alpha-rel is required".into()))
}

fn resolve_alpha(mode: AlphaMode, table: &RcScoreTable, k: usize) -> Result<f64> {
    match mode {
        AlphaMode::Absolute(a) => Ok(a),
        AlphaMode::Relative(rho) => {
            let det = metrics::deterministic_utility(table, k)?;
            let alpha = 1.0 - rho * det.mean_ndcg;
            log::info!(
                "relative target: deterministic NDCG@{k} = {:.4}, alpha = {alpha:.4}",
                det.mean_ndcg
            );
            Ok(alpha)
        }
    }
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<i32> {
    match &cli.command {
        Command::Synth { .. } => {
            let out = cfg
                .out
                .as_deref()
                .ok_or_else(|| Error::Config("synth requires --out".into()))?;
            let collection = harness::generate_synthetic(&cfg.synth)?;
            dataset::write_jsonl(&collection, out)?;
            log::info!(
                "wrote {} queries ({} docs) to {}",
                collection.len(),
                collection.num_docs(),
                out.display()
            );
            Ok(0)
        }
        Command::Convert { .. } => {
            let input = cfg
                .input
                .as_deref()
                .ok_or_else(|| Error::Config("--input is required".into()))?;
            let scores = cfg
                .scores
                .as_deref()
                .ok_or_else(|| Error::Config("convert requires --scores".into()))?;
            let out = cfg
                .out
                .as_deref()
                .ok_or_else(|| Error::Config("convert requires --out".into()))?;
            let collection = dataset::parse_svmlight(input, scores)?;
            dataset::write_jsonl(&collection, out)?;
            log::info!(
                "converted {} queries ({} docs) to {}",
                collection.len(),
                collection.num_docs(),
                out.display()
            );
            Ok(0)
        }
        Command::Calibrate { .. } => {
            let collection = load_dataset(cfg)?;
            let table = build_table(cfg, &collection)?;
            let alpha = resolve_alpha(require_alpha(cfg)?, &table, cfg.tpl.k)?;
            let grid = build_grid(cfg.settings.grid_mode, cfg.settings.grid_points, &table)?;
            let spec = RiskSpec::new(alpha, cfg.settings.delta, cfg.settings.bound, grid)?
                .with_dkwm_const(cfg.settings.dkwm_const);
            let result = riskcontrol::calibrate(&table, &cfg.tpl, &spec, mix(cfg.seed, CAL_TAG))?;
            match result.lambda_hat {
                Some(l) => log::info!(
                    "selected lambda_hat = {l} ({} certified candidates)",
                    result.certified.len()
                ),
                None => log::warn!("abstained: no threshold certifies at alpha={alpha}"),
            }
            emit(&result, cfg)?;
            Ok(0)
        }
        Command::Evaluate { .. } => {
            let collection = load_dataset(cfg)?;
            let table = build_table(cfg, &collection)?;
            let lambda = match (&cfg.lambda, &cfg.calibration) {
                (Some(l), None) => *l,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    let result: CalibrationResult = serde_json::from_str(&text).map_err(|e| {
                        Error::Config(format!("{}: not a calibration JSON: {e}", path.display()))
                    })?;
                    let l = result.lambda_or_fallback();
                    log::info!("using lambda = {l} from {}", path.display());
                    l
                }
                (None, None) => {
                    return Err(Error::Config(
                        "evaluate requires --lambda or --calibration".into(),
                    ))
                }
                (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
            };
            let summary = metrics::evaluate_collection(
                &table,
                &cfg.tpl.with_lambda(lambda),
                EvalMode::Auto {
                    seed: mix(cfg.seed, EVAL_TAG),
                },
            )?;
            emit(&evaluation_report(summary, lambda), cfg)?;
            Ok(0)
        }
        Command::Sweep { .. } => {
            let collection = load_dataset(cfg)?;
            let table = build_table(cfg, &collection)?;
            let grid = build_grid(cfg.settings.grid_mode, cfg.settings.grid_points, &table)?;
            let curve =
                harness::run_tradeoff_sweep(&table, &cfg.tpl, &grid, mix(cfg.seed, SWEEP_TAG))?;
            emit(&curve, cfg)?;
            Ok(0)
        }
        Command::Coverage { .. } => {
            let collection = load_dataset(cfg)?;
            let alpha_mode = require_alpha(cfg)?;
            let split = SplitSpec::new(cfg.cal_fraction, cfg.seed, 0)?;
            let report = harness::run_coverage(
                &collection,
                alpha_mode,
                &cfg.settings,
                cfg.trials,
                &split,
                &cfg.tpl,
                cfg.seed,
            )?;
            log::info!(
                "coverage: {}/{} covered, {} abstentions",
                report.covered,
                report.trials - report.abstentions,
                report.abstentions
            );
            emit(&report, cfg)?;
            if report.all_abstained() {
                log::warn!("every trial abstained");
                Ok(2)
            } else {
                Ok(0)
            }
        }
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // Tests may initialize the global pool more than once; later calls
        // are no-ops.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match resolve(&cli) {
        Ok(cfg) => {
            log::info!(
                "resolved config: {}",
                serde_json::to_string(&cfg).unwrap_or_else(|e| format!("<unserializable: {e}>"))
            );
            match execute(&cli, &cfg) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn defaults_without_flags_or_file() {
        let cli = parse(&["fairrank", "coverage", "--alpha", "0.2", "--seed", "9"]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!(cfg.tpl.k, 5);
        assert_eq!(cfg.tpl.tau, 1.0);
        assert_eq!(cfg.tpl.m, 100);
        assert_eq!(cfg.settings.delta, 0.1);
        assert_eq!(cfg.settings.bound, Bound::Hb);
        assert_eq!(cfg.settings.grid_points, 101);
        assert_eq!(cfg.settings.grid_mode, GridMode::Uniform);
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.cal_fraction, 0.25);
        assert_eq!(cfg.out_format, OutFormat::Json);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.alpha_mode, Some(AlphaMode::Absolute(0.2)));
    }

    #[test]
    fn alpha_and_alpha_rel_conflict() {
        let result = Cli::try_parse_from([
            "fairrank",
            "coverage",
            "--alpha",
            "0.2",
            "--alpha-rel",
            "0.9",
        ]);
        assert!(result.is_err(), "clap must reject the combination");
    }

    #[test]
    fn config_file_supplies_values_and_flags_win() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "alpha = 0.3\ndelta = 0.2\nk = 7\ntau = 0.5\nseed = 4\n\
             cal-fraction = 0.4\ngrid-points = 11\nbound = \"dkwm\"\nmc-samples = 64"
        )
        .unwrap();
        let path = f.path().to_str().unwrap();

        let cli = parse(&["fairrank", "coverage", "--config", path]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!(cfg.alpha_mode, Some(AlphaMode::Absolute(0.3)));
        assert_eq!(cfg.settings.delta, 0.2);
        assert_eq!(cfg.tpl.k, 7);
        assert_eq!(cfg.tpl.tau, 0.5);
        assert_eq!(cfg.tpl.m, 64);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.cal_fraction, 0.4);
        assert_eq!(cfg.settings.grid_points, 11);
        assert_eq!(cfg.settings.bound, Bound::Dkwm);

        let cli = parse(&[
            "fairrank", "coverage", "--config", path, "--alpha", "0.15", "--k", "3", "--seed", "8",
        ]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!(cfg.alpha_mode, Some(AlphaMode::Absolute(0.15)));
        assert_eq!(cfg.tpl.k, 3);
        assert_eq!(cfg.seed, 8);
        assert_eq!(cfg.settings.delta, 0.2, "file value still applies");
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "alhpa = 0.3").unwrap();
        let cli = parse(&[
            "fairrank",
            "coverage",
            "--alpha",
            "0.2",
            "--config",
            f.path().to_str().unwrap(),
        ]);
        assert!(matches!(resolve(&cli), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_numeric_fields_are_rejected_before_running() {
        for args in [
            vec!["fairrank", "coverage", "--alpha", "1.5"],
            vec!["fairrank", "coverage", "--alpha", "0.2", "--delta", "0"],
            vec![
                "fairrank",
                "coverage",
                "--alpha",
                "0.2",
                "--cal-fraction",
                "1.0",
            ],
            vec!["fairrank", "coverage", "--alpha", "0.2", "--tau", "0"],
            vec!["fairrank", "coverage", "--alpha", "0.2", "--k", "0"],
            vec!["fairrank", "evaluate", "--lambda", "-0.5"],
        ] {
            let cli = parse(&args);
            assert!(resolve(&cli).is_err(), "{args:?} should fail validation");
        }
    }

    #[test]
    fn unknown_flag_exits_one() {
        assert_eq!(run(["fairrank", "coverage", "--no-such-flag"]), 1);
        assert_eq!(run(["fairrank", "no-such-subcommand"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["fairrank", "--help"]), 0);
    }

    proptest! {
        /// flag > config-file > default, field by field.
        #[test]
        fn precedence_holds_per_field(
            flag_alpha in proptest::option::of(0.05f64..0.9),
            file_alpha in proptest::option::of(0.05f64..0.9),
            flag_k in proptest::option::of(1usize..20),
            file_k in proptest::option::of(1usize..20),
            flag_seed in proptest::option::of(any::<u64>()),
            file_seed in proptest::option::of(any::<u64>()),
            file_delta in proptest::option::of(0.01f64..0.5),
        ) {
            let mut f = tempfile::NamedTempFile::new().unwrap();
            let mut body = String::new();
            if let Some(a) = file_alpha {
                body.push_str(&format!("alpha = {a}\n"));
            }
            if let Some(k) = file_k {
                body.push_str(&format!("k = {k}\n"));
            }
            if let Some(s) = file_seed {
                body.push_str(&format!("seed = {s}\n"));
            }
            if let Some(d) = file_delta {
                body.push_str(&format!("delta = {d}\n"));
            }
            f.write_all(body.as_bytes()).unwrap();

            let mut args: Vec<String> = vec![
                "fairrank".into(),
                "coverage".into(),
                "--config".into(),
                f.path().to_str().unwrap().into(),
            ];
            let (alpha_str, k_str, seed_str);
            if let Some(a) = flag_alpha {
                alpha_str = a.to_string();
                args.extend(["--alpha".into(), alpha_str.clone()]);
            }
            if let Some(k) = flag_k {
                k_str = k.to_string();
                args.extend(["--k".into(), k_str.clone()]);
            }
            if let Some(s) = flag_seed {
                seed_str = s.to_string();
                args.extend(["--seed".into(), seed_str.clone()]);
            }

            let cli = Cli::try_parse_from(&args).unwrap();
            let cfg = resolve(&cli).unwrap();

            let expected_alpha = flag_alpha.or(file_alpha);
            match expected_alpha {
                Some(a) => prop_assert_eq!(cfg.alpha_mode, Some(AlphaMode::Absolute(a))),
                None => prop_assert_eq!(cfg.alpha_mode, None),
            }
            prop_assert_eq!(cfg.tpl.k, flag_k.or(file_k).unwrap_or(5));
            if let Some(s) = flag_seed.or(file_seed) {
                prop_assert_eq!(cfg.seed, s);
            }
            prop_assert_eq!(cfg.settings.delta, file_delta.unwrap_or(0.1));
        }
    }
}
