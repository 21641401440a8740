//! The `calibkit` command line.
//!
//! Each subcommand reads logs, calls the library and writes JSON (and SVG)
//! into `--out-dir`. Exit codes: 0 success, 1 invalid input or failed
//! computation, 2 usage error.

use std::error::Error;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::analysis::{
    coupling_analysis, pareto_table, stratified_ece, train_lm, CouplingOptions, NGramModel, ParetoEntry,
    PerplexitySource,
};
use crate::log::{read_log, PredictionLog};
use crate::metrics::{
    accuracy_at_k_report, execution_report, sequence_level_report, sequence_scores, token_level_report,
    BinningConfig, BinningStrategy, CalibrationReport, EvalSettings, Level,
};
use crate::program::{Aggregation, NormalizationConfig, ProgramDialect};
use crate::render::{render_reliability, ReliabilityStyle};
use crate::splits::{
    build_splits, extract_splits, split_report, write_manifest, ModelConfidences, DEFAULT_PERCENTILE,
};

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(name = "calibkit", version, about = "Calibration reports for semantic-parser prediction logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that logs parse, validate and align.
    Validate(ValidateArgs),
    /// Compute a calibration report.
    Ece(EceArgs),
    /// Compute a calibration report and draw its reliability diagram.
    Reliability(ReliabilityArgs),
    /// Extract EASY/HARD splits from an ensemble of logs.
    Splits(SplitsArgs),
    /// Relate input perplexity to binned confidence and accuracy.
    Coupling(CouplingArgs),
    /// Sequence-level ECE per difficulty label.
    Stratify(StratifyArgs),
    /// Accuracy against ECE across models, with the Pareto front.
    Pareto(ParetoArgs),
}

#[derive(Debug, Clone, Args)]
struct EvalOpts {
    /// Program syntax: lisp_like or sql.
    #[arg(long, default_value_t = ProgramDialect::LispLike)]
    dialect: ProgramDialect,
    /// Treat 'x' and "x" literals as equal in exact match.
    #[arg(long)]
    unify_quotes: bool,
    /// Lowercase tokens before exact match.
    #[arg(long)]
    case_fold: bool,
    /// Collapse whitespace inside tokens before exact match.
    #[arg(long)]
    collapse_whitespace: bool,
    /// Subword and token confidence aggregation: min or mean.
    #[arg(long = "agg", default_value_t = Aggregation::Min)]
    method: Aggregation,
}

impl EvalOpts {
    fn normalization(&self) -> NormalizationConfig {
        NormalizationConfig {
            unify_quotes: self.unify_quotes,
            case_fold: self.case_fold,
            collapse_whitespace: self.collapse_whitespace,
        }
    }

    fn settings(&self) -> EvalSettings {
        EvalSettings {
            dialect: self.dialect,
            normalization: self.normalization(),
            method: self.method,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct BinOpts {
    /// adaptive (equal-count bins) or fixed (equal-width bins).
    #[arg(long, default_value_t = BinningStrategy::Adaptive)]
    binning: BinningStrategy,
    /// Significance level for the adaptive bin size.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Margin of error for the adaptive bin size.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Number of fixed-width bins.
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

impl BinOpts {
    fn config(&self) -> CliResult<BinningConfig> {
        let config = BinningConfig {
            strategy: self.binning,
            alpha: self.alpha,
            epsilon: self.epsilon,
            fixed_bin_count: self.bins,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
struct OutOpts {
    /// Directory for report files; created if missing.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Base name for output files (default derived from model and dataset).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Criterion {
    ExactMatch,
    Execution,
    AccAtK,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, default_value_t = ProgramDialect::LispLike)]
    dialect: ProgramDialect,
}

#[derive(Debug, Args)]
struct ReportOpts {
    log: PathBuf,
    /// token (teacher-forced) or sequence (free-decoded).
    #[arg(long, default_value_t = Level::Sequence)]
    level: Level,
    /// Sequence-level correctness.
    #[arg(long, value_enum, default_value_t = Criterion::ExactMatch)]
    criterion: Criterion,
    /// Beam depth for acc-at-k.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    bins: BinOpts,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Debug, Args)]
struct EceArgs {
    #[command(flatten)]
    report: ReportOpts,
}

#[derive(Debug, Args)]
struct ReliabilityArgs {
    #[command(flatten)]
    report: ReportOpts,
    /// Confidence on x and accuracy on y.
    #[arg(long)]
    standard_axes: bool,
    /// Diagram heading (default "<model> on <dataset>").
    #[arg(long)]
    title: Option<String>,
}

#[derive(Debug, Args)]
struct SplitsArgs {
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Pooled percentile of sequence confidence used as the threshold.
    #[arg(long, default_value_t = DEFAULT_PERCENTILE, conflicts_with = "threshold")]
    percentile: f64,
    /// Explicit confidence threshold instead of a percentile.
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Debug, Args)]
struct CouplingArgs {
    log: PathBuf,
    /// Train an n-gram model on this file (one input per line).
    #[arg(long, conflicts_with = "lm_model")]
    lm_corpus: Option<PathBuf>,
    /// Load a saved n-gram count table.
    #[arg(long)]
    lm_model: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    lm_order: usize,
    /// Add-k smoothing constant.
    #[arg(long, default_value_t = 0.1)]
    lm_k: f64,
    /// Write the trained model's count table here.
    #[arg(long, requires = "lm_corpus")]
    save_lm: Option<PathBuf>,
    /// Drop examples above this perplexity.
    #[arg(long)]
    perplexity_cap: Option<f64>,
    /// Fit slopes over examples rather than bins.
    #[arg(long)]
    per_example: bool,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    bins: BinOpts,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Debug, Args)]
struct StratifyArgs {
    log: PathBuf,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    bins: BinOpts,
    #[command(flatten)]
    out: OutOpts,
}

#[derive(Debug, Args)]
struct ParetoArgs {
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, default_value_t = Level::Sequence)]
    level: Level,
    #[command(flatten)]
    eval: EvalOpts,
    #[command(flatten)]
    bins: BinOpts,
    #[command(flatten)]
    out: OutOpts,
}

/// Settings of one invocation, stored alongside every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    pub dialect: ProgramDialect,
    pub normalization: NormalizationConfig,
    pub aggregation: Aggregation,
    pub binning: Option<BinningConfig>,
    pub output_dir: PathBuf,
    /// Subcommand-specific options.
    pub options: Map<String, Value>,
}

impl RunConfig {
    fn new(subcommand: &str, inputs: &[PathBuf], eval: &EvalOpts, binning: Option<BinningConfig>, out: &OutOpts) -> Self {
        Self {
            subcommand: subcommand.into(),
            inputs: inputs.to_vec(),
            dialect: eval.dialect,
            normalization: eval.normalization(),
            aggregation: eval.method,
            binning,
            output_dir: out.out_dir.clone(),
            options: Map::new(),
        }
    }

    fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.options.insert(key.into(), serde_json::to_value(value).expect("serializable option"));
        self
    }
}

fn file_stem(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.chars()
                .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("_")
}

fn check_inputs(paths: &[PathBuf]) -> CliResult<()> {
    for path in paths {
        if !path.is_file() {
            return Err(format!("input file not found: {}", path.display()).into());
        }
    }
    Ok(())
}

fn load(path: &Path) -> CliResult<PredictionLog> {
    read_log(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write_output(out: &OutOpts, file: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(&out.out_dir).map_err(|e| format!("{}: {e}", out.out_dir.display()))?;
    let path = out.out_dir.join(file);
    fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn write_report(out: &OutOpts, name: &str, config: &RunConfig, report: impl Serialize) -> CliResult<PathBuf> {
    let doc = json!({ "config": config, "report": report });
    write_output(out, &format!("{name}.report.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn calibration(opts: &ReportOpts, log: &PredictionLog) -> CliResult<CalibrationReport> {
    let binning = opts.bins.config()?;
    let settings = opts.eval.settings();
    let report = match (opts.level, opts.criterion) {
        (Level::Token, Criterion::ExactMatch) => token_level_report(&log.records, settings.method, &binning)?,
        (Level::Token, other) => {
            return Err(format!("criterion {other:?} applies to sequence level only").into());
        }
        (Level::Sequence, Criterion::ExactMatch) => sequence_level_report(log, &settings, &binning)?,
        (Level::Sequence, Criterion::Execution) => execution_report(log, &settings, &binning)?,
        (Level::Sequence, Criterion::AccAtK) => accuracy_at_k_report(log, opts.k, &settings, &binning)?,
    };
    Ok(report)
}

fn report_config(subcommand: &str, opts: &ReportOpts) -> CliResult<RunConfig> {
    let mut config = RunConfig::new(subcommand, std::slice::from_ref(&opts.log), &opts.eval, Some(opts.bins.config()?), &opts.out)
        .with("level", opts.level);
    if opts.level == Level::Sequence {
        config = config.with("criterion", opts.criterion);
        if opts.criterion == Criterion::AccAtK {
            config = config.with("k", opts.k);
        }
    }
    Ok(config)
}

fn report_name(opts: &ReportOpts, log: &PredictionLog) -> String {
    opts.out.name.clone().unwrap_or_else(|| {
        let level = opts.level.to_string();
        let criterion = match (opts.level, opts.criterion) {
            (Level::Sequence, Criterion::Execution) => "exec".to_string(),
            (Level::Sequence, Criterion::AccAtK) => format!("acc{}", opts.k),
            _ => String::new(),
        };
        file_stem(&[log.model_id(), log.dataset_id(), &level, &criterion])
    })
}

fn cmd_validate(args: &ValidateArgs) -> CliResult<()> {
    check_inputs(&args.logs)?;
    for path in &args.logs {
        let log = load(path)?;
        log.check_tokenization(args.dialect)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let with_stream = log.records.iter().filter(|r| r.predicted_subwords.is_some()).count();
        if with_stream > 0 {
            let settings = EvalSettings {
                dialect: args.dialect,
                ..Default::default()
            };
            sequence_scores(&log, &settings).map_err(|e| format!("{}: {e}", path.display()))?;
        }
        println!(
            "{}: ok ({} records, model {}, dataset {})",
            path.display(),
            log.records.len(),
            log.model_id(),
            log.dataset_id()
        );
    }
    Ok(())
}

fn cmd_ece(args: &EceArgs) -> CliResult<()> {
    let opts = &args.report;
    check_inputs(std::slice::from_ref(&opts.log))?;
    let log = load(&opts.log)?;
    let report = calibration(opts, &log)?;
    let path = write_report(&opts.out, &report_name(opts, &log), &report_config("ece", opts)?, &report)?;
    println!(
        "ECE {:.2} ({} level, {} samples, {} bins) -> {}",
        report.ece,
        report.level,
        report.total_samples,
        report.bins.len(),
        path.display()
    );
    Ok(())
}

fn cmd_reliability(args: &ReliabilityArgs) -> CliResult<()> {
    let opts = &args.report;
    check_inputs(std::slice::from_ref(&opts.log))?;
    let log = load(&opts.log)?;
    let report = calibration(opts, &log)?;
    let style = ReliabilityStyle {
        standard_axes: args.standard_axes,
        title: Some(
            args.title
                .clone()
                .unwrap_or_else(|| format!("{} on {}", log.model_id(), log.dataset_id())),
        ),
        ..Default::default()
    };
    let svg = render_reliability(&report, &style)?;
    let name = report_name(opts, &log);
    let config = report_config("reliability", opts)?.with("style", &style);
    let json_path = write_report(&opts.out, &name, &config, &report)?;
    let svg_path = write_output(&opts.out, &format!("{name}.svg"), &svg)?;
    println!(
        "ECE {:.2} ({} bins) -> {}, {}",
        report.ece,
        report.bins.len(),
        json_path.display(),
        svg_path.display()
    );
    Ok(())
}

fn cmd_splits(args: &SplitsArgs) -> CliResult<()> {
    check_inputs(&args.logs)?;
    let logs = args.logs.iter().map(|p| load(p)).collect::<CliResult<Vec<_>>>()?;
    let models = logs
        .iter()
        .map(|log| ModelConfidences::from_log(log, args.eval.dialect))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = match args.threshold {
        Some(threshold) => extract_splits(&models, threshold)?,
        None => build_splits(&models, args.percentile)?,
    };
    let report = split_report(&manifest, &logs, args.eval.dialect, &args.eval.normalization())?;
    let dataset = file_stem(&[&manifest.dataset_id]);
    fs::create_dir_all(&args.out.out_dir).map_err(|e| format!("{}: {e}", args.out.out_dir.display()))?;
    let manifest_path = args.out.out_dir.join(format!("{dataset}.manifest.json"));
    write_manifest(&manifest, &manifest_path)?;
    let mut config = RunConfig::new("splits", &args.logs, &args.eval, None, &args.out);
    config = match args.threshold {
        Some(t) => config.with("threshold", t),
        None => config.with("percentile", args.percentile),
    };
    let name = args.out.name.clone().unwrap_or_else(|| format!("{dataset}_splits"));
    let report_path = write_report(&args.out, &name, &config, &report)?;
    println!(
        "threshold {:.6}: {} hard, {} easy ({:.2}% hard) -> {}, {}",
        manifest.threshold,
        manifest.hard_ids.len(),
        manifest.easy_ids.len(),
        report.union_hard_percentage,
        manifest_path.display(),
        report_path.display()
    );
    Ok(())
}

fn cmd_coupling(args: &CouplingArgs) -> CliResult<()> {
    let mut inputs = vec![args.log.clone()];
    inputs.extend(args.lm_corpus.clone());
    inputs.extend(args.lm_model.clone());
    check_inputs(&inputs)?;
    let log = load(&args.log)?;
    let lm: Option<NGramModel> = if let Some(corpus_path) = &args.lm_corpus {
        let text = fs::read_to_string(corpus_path).map_err(|e| format!("{}: {e}", corpus_path.display()))?;
        let corpus: Vec<String> = text.lines().map(str::to_string).collect();
        let lm = train_lm(&corpus, args.lm_order, args.lm_k)?;
        if let Some(save) = &args.save_lm {
            lm.save(save)?;
        }
        Some(lm)
    } else if let Some(model_path) = &args.lm_model {
        Some(NGramModel::load(model_path)?)
    } else {
        None
    };
    let source = lm.as_ref().map_or(PerplexitySource::Stored, PerplexitySource::Model);
    let options = CouplingOptions {
        binning: args.bins.config()?,
        perplexity_cap: args.perplexity_cap,
        per_example: args.per_example,
    };
    let report = coupling_analysis(&log, args.eval.dialect, &args.eval.normalization(), source, &options)?;
    let mut eval = args.eval.clone();
    eval.method = Aggregation::Min;
    let mut config = RunConfig::new("coupling", &inputs, &eval, Some(options.binning), &args.out)
        .with("perplexity_cap", args.perplexity_cap)
        .with("per_example", args.per_example);
    config = match &lm {
        Some(lm) => config
            .with("perplexity_source", "ngram")
            .with("lm_order", lm.order())
            .with("lm_k", lm.smoothing_k()),
        None => config.with("perplexity_source", "stored"),
    };
    let name = args
        .out
        .name
        .clone()
        .unwrap_or_else(|| file_stem(&[log.model_id(), log.dataset_id(), "coupling"]));
    let path = write_report(&args.out, &name, &config, &report)?;
    println!(
        "slope confidence {:.6}, slope accuracy {:.6}, gap {:.6} ({} bins) -> {}",
        report.slope_confidence,
        report.slope_accuracy,
        report.coupling_gap,
        report.bins.len(),
        path.display()
    );
    Ok(())
}

fn cmd_stratify(args: &StratifyArgs) -> CliResult<()> {
    check_inputs(std::slice::from_ref(&args.log))?;
    let log = load(&args.log)?;
    let binning = args.bins.config()?;
    let strata = stratified_ece(&log, &args.eval.settings(), &binning)?;
    let config = RunConfig::new("stratify", std::slice::from_ref(&args.log), &args.eval, Some(binning), &args.out);
    let name = args
        .out
        .name
        .clone()
        .unwrap_or_else(|| file_stem(&[log.model_id(), log.dataset_id(), "strata"]));
    let path = write_report(&args.out, &name, &config, &strata)?;
    for (label, s) in &strata {
        let note = if s.single_bin_fallback { " (single bin)" } else { "" };
        println!("{label}: ECE {:.2}, accuracy {:.2}, n = {}{note}", s.ece, 100.0 * s.accuracy, s.count);
    }
    println!("-> {}", path.display());
    Ok(())
}

fn cmd_pareto(args: &ParetoArgs) -> CliResult<()> {
    check_inputs(&args.logs)?;
    let binning = args.bins.config()?;
    let settings = args.eval.settings();
    let mut entries = Vec::new();
    let mut datasets = Vec::new();
    for path in &args.logs {
        let log = load(path)?;
        let report = match args.level {
            Level::Token => token_level_report(&log.records, settings.method, &binning)?,
            Level::Sequence => sequence_level_report(&log, &settings, &binning)?,
        };
        datasets.push(log.dataset_id().to_string());
        entries.push(ParetoEntry {
            model_id: log.model_id().to_string(),
            overall_accuracy: report.overall_accuracy,
            ece: report.ece,
        });
    }
    datasets.dedup();
    if datasets.len() > 1 {
        return Err(format!("logs cover different datasets: {}", datasets.join(", ")).into());
    }
    let rows = pareto_table(&entries);
    let config = RunConfig::new("pareto", &args.logs, &args.eval, Some(binning), &args.out).with("level", args.level);
    let name = args
        .out
        .name
        .clone()
        .unwrap_or_else(|| file_stem(&[&datasets[0], "pareto"]));
    let path = write_report(&args.out, &name, &config, &rows)?;
    for row in &rows {
        let mark = if row.on_front { "*" } else { " " };
        println!("{mark} {}: accuracy {:.2}, ECE {:.2}", row.model_id, 100.0 * row.overall_accuracy, row.ece);
    }
    println!("-> {}", path.display());
    Ok(())
}

fn print_error(err: &dyn Error) {
    eprint!("error: {err}");
    let mut source = err.source();
    while let Some(s) = source {
        eprint!(": {s}");
        source = s.source();
    }
    eprintln!();
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Ece(a) => cmd_ece(a),
        Command::Reliability(a) => cmd_reliability(a),
        Command::Splits(a) => cmd_splits(a),
        Command::Coupling(a) => cmd_coupling(a),
        Command::Stratify(a) => cmd_stratify(a),
        Command::Pareto(a) => cmd_pareto(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            print_error(e.as_ref());
            1
        }
    }
}
