//! Subcommands of the `bidscreen` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use bidscreen::data::{self, CsvSchema, DataError, Dataset, Label};
use bidscreen::evaluation::{
    self, EvaluationConfig, EvaluationError, ImportanceGrouping, ImportanceOptions, MetricName, Metrics,
};
use bidscreen::models::{self, ExampleSet, Family, ModelArtifact, ModelError, TrainConfig};
use bidscreen::reporting::{self, ReportError, ReportOptions, Thresholds};
use bidscreen::screens::{self, FeatureMode, ScreenConfig, ScreenError};
use bidscreen::simulate::{self, SimConfig, SimError};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::server::{self, ApiError, AppState};
use crate::store::{content_id, RunStore, StoreError};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Simulate(#[from] SimError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Api(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        Self::Api(e.message().to_string())
    }
}

impl CliError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_family(s: &str) -> Result<Family, String> {
    Family::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Family::ALL.iter().map(|f| f.as_str()).collect();
        format!("unknown family `{s}` (expected one of {})", names.join(", "))
    })
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

/// A comma-separated bid list given on the command line.
#[derive(Debug, Clone)]
pub struct BidList(pub Vec<f64>);

fn parse_bids(s: &str) -> Result<BidList, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("`{x}` is not a number")))
        .collect::<Result<_, _>>()
        .map(BidList)
}

#[derive(Debug, Parser)]
#[command(name = "bidscreen", version, about = "Screen procurement tenders for bid rigging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// Input tender CSV
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output file
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Model file, or model id when --store is given
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Model family: logit, lasso_logit, cart, random_forest,
    /// gradient_boosting, neural_net or super_learner
    #[arg(long, global = true, value_parser = parse_family)]
    pub family: Option<Family>,
    /// Classification threshold; also the low traffic-light threshold
    #[arg(long, global = true, default_value_t = 0.5, value_parser = parse_probability)]
    pub threshold: f64,
    /// High traffic-light threshold
    #[arg(long = "threshold-high", global = true, default_value_t = 0.7, value_parser = parse_probability)]
    pub threshold_high: f64,
    /// Master seed for splits, training and resampling [default: 7]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Resampling replicates for evaluation intervals (0 skips them)
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// JSON configuration file for the subcommand
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Machine-readable JSON on stdout
    #[arg(long, global = true)]
    pub json: bool,
    /// Run store directory
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a raw bid CSV, clean it and write the tender CSV
    Ingest,
    /// Generate a labeled synthetic tender CSV
    Simulate,
    /// Compute the screens of every tender
    Screens,
    /// Train a classifier on every labeled tender
    Train,
    /// Split, train and score one model family
    Evaluate,
    /// Error rates over a grid of thresholds
    Sweep,
    /// Permutation importance of features or screens
    Importance,
    /// Score tenders (or one bid list) with a trained model
    Screen {
        /// Comma-separated bids of a single tender
        #[arg(long, value_parser = parse_bids, allow_hyphen_values = true)]
        bids: Option<BidList>,
    },
    /// Screening report for a set of tenders
    Report,
    /// Run the HTTP service
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Bearer token required on every endpoint except /health
        #[arg(long, env = "BIDSCREEN_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
}

/// Settings read from `--config` by the model subcommands.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Full training configuration; `--family` and `--seed` still apply.
    pub model: Option<TrainConfig>,
    pub feature_mode: Option<FeatureMode>,
    pub screens: ScreenConfig,
    pub ratio: Option<f64>,
    pub alpha: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub importance_repeats: Option<usize>,
    pub importance_grouping: Option<ImportanceGrouping>,
    pub min_group_size: Option<usize>,
    pub min_suspicious: Option<usize>,
    pub top_clusters: Option<usize>,
}

fn read_config<T: DeserializeOwned + Default>(flags: &Flags) -> Result<T, CliError> {
    match &flags.config {
        None => Ok(T::default()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("--config {}: {e}", path.display())))
        }
    }
}

fn require<'a, T>(value: &'a Option<T>, flag: &str, command: &str) -> Result<&'a T, CliError> {
    value.as_ref().ok_or_else(|| usage(format!("`{command}` requires {flag}")))
}

fn thresholds(flags: &Flags) -> Result<Thresholds, CliError> {
    Thresholds::new(flags.threshold, flags.threshold_high)
        .map_err(|_| usage("--threshold must be below --threshold-high"))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let raw = data::ingest_csv(path, &CsvSchema::default())?;
    Ok(data::wrangle(&raw))
}

fn open_store(flags: &Flags) -> Result<Option<RunStore>, CliError> {
    flags.store.as_ref().map(RunStore::open).transpose().map_err(CliError::from)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads `--model` from a file, or from the store by id.
fn load_model(flags: &Flags, command: &str) -> Result<(String, ModelArtifact), CliError> {
    let model_arg = require(&flags.model, "--model", command)?;
    let path = Path::new(model_arg);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        let model = ModelArtifact::from_json(&text)?;
        return Ok((content_id(model.to_json()?.as_bytes()), model));
    }
    match open_store(flags)? {
        Some(store) => Ok((model_arg.clone(), store.get_model(model_arg)?)),
        None => Err(usage(format!("--model `{model_arg}` is not a file (pass --store to look up ids)"))),
    }
}

fn train_config(flags: &Flags, cfg: &PipelineConfig) -> Result<TrainConfig, CliError> {
    let seed = flags.seed.unwrap_or(DEFAULT_SEED);
    let base = match (&cfg.model, flags.family) {
        (Some(m), Some(f)) if m.family() != f => {
            return Err(usage(format!(
                "--family {} conflicts with the {} model in --config",
                f.as_str(),
                m.family().as_str()
            )))
        }
        (Some(m), _) => m.clone(),
        (None, Some(f)) => f.default_config(seed),
        (None, None) => return Err(usage("--family (or a model in --config) is required")),
    };
    Ok(match flags.seed {
        Some(s) => base.with_seed(s),
        None if cfg.model.is_some() => base,
        None => base.with_seed(seed),
    })
}

fn example_set(dataset: &Dataset, mode: FeatureMode, cfg: &PipelineConfig) -> Result<ExampleSet, CliError> {
    let (set, skipped) = ExampleSet::from_dataset(dataset, mode, &cfg.screens)?;
    if skipped > 0 {
        log::warn!("{skipped} labeled tenders skipped: undefined screens");
    }
    Ok(set)
}

fn mode_for(config: &TrainConfig, cfg: &PipelineConfig) -> FeatureMode {
    cfg.feature_mode.unwrap_or_else(|| config.family().default_feature_mode())
}

fn to_json_line<T: Serialize>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let flags = &cli.flags;
    match &cli.command {
        Command::Ingest => ingest(flags, out),
        Command::Simulate => simulate_cmd(flags, out),
        Command::Screens => screens_cmd(flags, out),
        Command::Train => train_cmd(flags, out),
        Command::Evaluate => evaluate_cmd(flags, out),
        Command::Sweep => sweep_cmd(flags, out),
        Command::Importance => importance_cmd(flags, out),
        Command::Screen { bids } => screen_cmd(flags, bids.as_ref().map(|b| b.0.as_slice()), out),
        Command::Report => report_cmd(flags, out),
        Command::Serve { port, bind, token } => serve_cmd(flags, SocketAddr::new(*bind, *port), token.clone()),
    }
}

fn ingest(flags: &Flags, out: &mut dyn Write) -> Result<(), CliError> {
    let input = require(&flags.input, "--input", "ingest")?;
    let schema: CsvSchema = read_config(flags)?;
    let raw = data::ingest_csv(input, &schema)?;
    let clean = data::wrangle(&raw);
    if let Some(path) = &flags.output {
        let mut bytes = Vec::new();
        data::write_csv(&clean, &mut bytes)?;
        write_file(path, &bytes)?;
    }
    let dataset_id = match open_store(flags)? {
        Some(store) => Some(store.put_dataset(&clean)?),
        None => None,
    };
    let labeled = clean.labeled().count();
    if flags.json {
        out.write_all(
            to_json_line(&serde_json::json!({
                "n_tenders": clean.len(),
                "n_labeled": labeled,
                "wrangling_log": clean.wrangling_log,
                "dataset_id": dataset_id,
            }))?
            .as_bytes(),
        )?;
    } else {
        writeln!(out, "tenders kept:        {}", clean.len())?;
        writeln!(out, "labeled:             {labeled}")?;
        writeln!(out, "dropped (< 3 bids):  {}", clean.wrangling_log.dropped_tenders)?;
        writeln!(out, "collapsed variants:  {}", clean.wrangling_log.collapsed_variants)?;
        if let Some(id) = dataset_id {
            writeln!(out, "dataset id:          {id}")?;
        }
    }
    Ok(())
}

fn simulate_cmd(flags: &Flags, out: &mut dyn Write) -> Result<(), CliError> {
    let output = require(&flags.output, "--output", "simulate")?;
    let mut config: SimConfig = read_config(flags)?;
    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    let dataset = simulate::generate(&config)?;
    let mut bytes = Vec::new();
    data::write_csv(&dataset, &mut bytes)?;
    write_file(output, &bytes)?;
    let cartel = dataset.tenders.iter().filter(|t| t.label == Label::Cartel).count();
    if flags.json {
        out.write_all(
            to_json_line(&serde_json::json!({
                "n_tenders": dataset.len(),
                "n_cartel": cartel,
                "seed": config.seed,
                "output": output,
            }))?
            .as_bytes(),
        )?;
    } else {
        writeln!(
            out,
            "{} tenders ({} cartel) written to {}",
            dataset.len(),
            cartel,
            output.display()
        )?;
    }
    Ok(())
}

fn screens_cmd(flags: &Flags, out: &mut dyn Write) -> Result<(), CliError> {
    let input = require(&flags.input, "--input", "screens")?;
    let config: ScreenConfig = read_config(flags)?;
    let dataset = load_dataset(input)?;
    let rows = screens::screen_all(&dataset.tenders, &config)?;
    let mut csv_bytes = Vec::new();
    screens::write_screens_csv(&rows, &mut csv_bytes).map_err(|e| std::io::Error::other(e.to_string()))?;
    if let Some(path) = &flags.output {
        write_file(path, &csv_bytes)?;
    }
    if flags.json {
        out.write_all(to_json_line(&rows)?.as_bytes())?;
    } else if flags.output.is_none() {
        out.write_all(&csv_bytes)?;
    } else {
        writeln!(out, "screens of {} tenders written", rows.len())?;
    }
    Ok(())
}

fn train_cmd(flags: &Flags, out: &mut dyn Write) -> Result<(), CliError> {
    let input = require(&flags.input, "--input", "train")?;
    let cfg: PipelineConfig = read_config(flags)?;
    let config = train_config(flags, &cfg)?;
    let dataset = load_dataset(input)?;
    let set = example_set(&dataset, mode_for(&config, &cfg), &cfg)?;
    let model = models::train(&set, &config)?;
    let json = model.to_json()?;
    let id = content_id(json.as_bytes());
    if let Some(path) = &flags.output {
        write_file(path, json.as_bytes())?;
    }
    if let Some(store) = open_store(flags)? {
        let stored = store.put_model(&model)?;
        debug_assert_eq!(stored, id);
    }
    if flags.json {
        out.write_all(
            to_json_line(&serde_json::json!({
                "model_id": id,
                "family": model.family,
                "n_train": model.n_train,
                "n_features": model.n_features(),
            }))?
            .as_bytes(),
        )?;
    } else {
        writeln!(out, "model {id}")?;
        writeln!(out, "family:     {}", model.family.as_str())?;
        writeln!(out, "trained on: {} tenders, {} features", model.n_train, model.n_features())?;
        if let Some(cart) = model.as_cart() {
            write!(out, "{}", cart.render())?;
        }
    }
    Ok(())
}

fn evaluation_config(flags: &Flags, cfg: &PipelineConfig) -> EvaluationConfig {
    let d = EvaluationConfig::default();
    EvaluationConfig {
        ratio: cfg.ratio.unwrap_or(d.ratio),
        threshold: flags.threshold,
        seed: flags.seed.unwrap_or(DEFAULT_SEED),
        replicates: flags.replicates.unwrap_or(0),
        alpha: cfg.alpha.unwrap_or(d.alpha),
        importance_repeats: cfg.importance_repeats.unwrap_or(d.importance_repeats),
        importance_grouping: cfg.importance_grouping.unwrap_or(d.importance_grouping),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".to_string())
}

fn metrics_table(m: &Metrics, out: &mut String) {
    for name in MetricName::ALL {
        let _ = writeln!(out, "{:<10} {}", name.as_str(), opt(m.get(name)));
    }
    let c = m.confusion;
    let _ = writeln!(out, "confusion  tp {} fp {} fn {} tn {}", c.tp, c.fp, c.fn_, c.tn);
}

fn sweep_table(sweep: &[evaluation::SweepPoint], out: &mut String) {
    let _ = writeln!(out, "{:>9} {:>7} {:>7} {:>8}", "threshold", "ccr", "fpr", "flagged");
    for p in sweep {
        let _ = writeln!(out, "{:>9.2} {:>7} {:>7} {:>8}", p.threshold, opt(Some(p.ccr)), opt(p.fpr), p.flagged);
    }
}

fn evaluate_cmd(flags: &Flags, out: &mut dyn Write) -> Result<(), CliError> {
    let input = require(&flags.input, "--input", "evaluate")?;
    let mut cfg: PipelineConfig = read_config(flags)?;
    if flags.model.is_some() && cfg.model.is_none() && flags.family.is_none() {
        let (_, model) = load_model(flags, "evaluate")?;
        cfg.model = Some(model.training_config.clone());
        cfg.feature_mode = cfg.feature_mode.or(model.feature_mode);
    }
    let config = train_config(flags, &cfg)?;
    let dataset = load_dataset(input)?;
    let set = example_set(&dataset, mode_for(&config, &cfg), &cfg)?;
    let eval_config = evaluation_config(flags, &cfg);
    let (report, _) = evaluation::evaluate(&set, &config, &eval_config)?;
    let json = report.to_json()?;
    if let Some(path) = &flags.output {
        write_file(path, json.as_bytes())?;
    }
    if let Some(store) = open_store(flags)? {
        store.put_report("evaluation", &report)?;
    }
    if flags.json {
        writeln!(out, "{json}")?;
        return Ok(());
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} train / {} test, threshold {}",
        report.family.as_str(),
        report.n_train,
        report.n_test,
        eval_config.threshold
    );
    metrics_table(&report.point_metrics, &mut s);
    if let Some(iv) = &report.intervals {
        let _ = writeln!(s, "\n{:.0}% intervals over {} replicates", (1.0 - iv.alpha) * 100.0, iv.replicates);
        for name in MetricName::ALL {
            if let Some(i) = iv.get(name) {
                let _ = writeln!(
                    s,
                    "{:<10} {:.3} [{:.3}, {:.3}]",
                    name.as_str(),
                    i.median,
                    i.lower,
                    i.upper
                );
            }
        }
    }
    let _ = writeln!(s);
    sweep_table(&report.sweep, &mut s);
    if let Some(imp) = &report.importances {
        let _ = writeln!(s, "\ntop features");
        for (name, r) in imp.ranked().into_iter().take(10) {
            let _ = writeln!(s, "{name:<16} {r:.3}");
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

/// A scored test set: the given model on every labeled input tender, or a
/// fresh model on the training part of a split.
fn model_and_test(flags: &Flags, cfg: &PipelineConfig, command: &str) -> Result<(ModelArtifact, ExampleSet), CliError> {
    let input = require(&flags.input, "--input", command)?;
    let dataset = load_dataset(input)?;
    if flags.model.is_some() {
        let (_, model) = load_model(flags, command)?;
        let mode = model.feature_mode.ok_or(ModelError::NoFeatureMode)?;
        let set = example_set(&dataset, mode, cfg)?;
        return Ok((model, set));
    }
    let config = train_config(flags, cfg)?;
    let set = example_set(&dataset, mode_for(&config, cfg), cfg)?;
    let ratio = cfg.ratio.unwrap_or(EvaluationConfig::default().ratio);
    let (train, test) = evaluation::split(&set, ratio, flags.seed.unwrap_or(DEFAULT_SEED))?;
    Ok((models::train(&train, &config)?, test))
}

fn sweep_cmd(flags: &Flags, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg: PipelineConfig = read_config(flags)?;
    let (model, test) = model_and_test(flags, &cfg, "sweep")?;
    let preds = evaluation::predictions(&model, &test)?;
    let grid = cfg.grid.clone().unwrap_or_else(evaluation::default_grid);
    let sweep = evaluation::threshold_sweep(&preds, &grid)?;
    if let Some(path) = &flags.output {
        let mut bytes = Vec::new();
        evaluation::write_sweep_csv(&sweep, &mut bytes)?;
        write_file(path, &bytes)?;
    }
    if flags.json {
        out.write_all(to_json_line(&sweep)?.as_bytes())?;
    } else {
        let mut s = String::new();
        sweep_table(&sweep, &mut s);
        out.write_all(s.as_bytes())?;
    }
    Ok(())
}

fn importance_cmd(flags: &Flags, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg: PipelineConfig = read_config(flags)?;
    let (model, test) = model_and_test(flags, &cfg, "importance")?;
    let d = ImportanceOptions::default();
    let options = ImportanceOptions {
        repeats: cfg.importance_repeats.unwrap_or(d.repeats),
        threshold: flags.threshold,
        grouping: cfg.importance_grouping.unwrap_or(d.grouping),
        seed: flags.seed.unwrap_or(DEFAULT_SEED),
    };
    let imp = evaluation::permutation_importance(&model, &test, &options)?;
    if let Some(path) = &flags.output {
        let mut bytes = Vec::new();
        evaluation::write_importances_csv(&imp, &mut bytes)?;
        write_file(path, &bytes)?;
    }
    if flags.json {
        out.write_all(to_json_line(&imp)?.as_bytes())?;
    } else {
        for (name, r) in imp.ranked() {
            writeln!(out, "{name:<16} {r:.3}")?;
        }
    }
    Ok(())
}

fn screen_cmd(flags: &Flags, bids: Option<&[f64]>, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg: PipelineConfig = read_config(flags)?;
    let (model_id, model) = load_model(flags, "screen")?;
    let t = thresholds(flags)?;
    match (bids, &flags.input) {
        (Some(_), Some(_)) => Err(usage("`screen` takes either --bids or --input, not both")),
        (None, None) => Err(usage("`screen` requires --bids or --input")),
        (Some(bids), None) => {
            let r = server::screen_bids(&model, &model_id, bids, &cfg.screens, t)?;
            if flags.json {
                out.write_all(to_json_line(&r)?.as_bytes())?;
                return Ok(());
            }
            writeln!(out, "model {}", r.model_id)?;
            for (name, v) in screens::SCREEN_NAMES.iter().zip(r.screens.values()) {
                writeln!(out, "{name:<8} {}", v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into()))?;
            }
            writeln!(out, "probability {:.4}", r.probability)?;
            writeln!(out, "light       {}", r.light.as_str())?;
            for step in r.tree_path.iter().flatten() {
                writeln!(out, "  {step}")?;
            }
            Ok(())
        }
        (None, Some(input)) => {
            let dataset = load_dataset(input)?;
            let (verdicts, skipped) = reporting::score_dataset(&model, &model_id, &dataset, &cfg.screens, t)?;
            let mut bytes = Vec::new();
            reporting::write_verdicts_csv(&verdicts, &mut bytes)?;
            if let Some(path) = &flags.output {
                write_file(path, &bytes)?;
            }
            if flags.json {
                out.write_all(
                    to_json_line(&serde_json::json!({
                        "model_id": model_id,
                        "thresholds": t,
                        "verdicts": verdicts,
                        "skipped": skipped,
                    }))?
                    .as_bytes(),
                )?;
            } else if flags.output.is_none() {
                out.write_all(&bytes)?;
            } else {
                writeln!(out, "{} tenders scored, {} skipped", verdicts.len(), skipped.len())?;
            }
            Ok(())
        }
    }
}

fn report_cmd(flags: &Flags, out: &mut dyn Write) -> Result<(), CliError> {
    let input = require(&flags.input, "--input", "report")?;
    let cfg: PipelineConfig = read_config(flags)?;
    let (model_id, model) = load_model(flags, "report")?;
    let d = ReportOptions::default();
    let options = ReportOptions {
        thresholds: thresholds(flags)?,
        min_group_size: cfg.min_group_size.unwrap_or(d.min_group_size),
        min_suspicious: cfg.min_suspicious.unwrap_or(d.min_suspicious),
        max_firms: d.max_firms,
        top_clusters: cfg.top_clusters.unwrap_or(d.top_clusters),
    };
    let dataset = load_dataset(input)?;
    let (verdicts, skipped) = reporting::score_dataset(&model, &model_id, &dataset, &cfg.screens, options.thresholds)?;
    let report = reporting::screening_report(&dataset, verdicts, skipped, &model_id, &options)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &flags.output {
        write_file(path, json.as_bytes())?;
    }
    if let Some(store) = open_store(flags)? {
        store.put_report("screening", &report)?;
    }
    if flags.json {
        writeln!(out, "{json}")?;
    } else {
        out.write_all(report.render().as_bytes())?;
    }
    Ok(())
}

fn serve_cmd(flags: &Flags, addr: SocketAddr, token: Option<String>) -> Result<(), CliError> {
    let cfg: PipelineConfig = read_config(flags)?;
    let store = RunStore::open(flags.store.clone().unwrap_or_else(|| PathBuf::from("store")))?;
    let default_model = match &flags.model {
        None => None,
        Some(model_arg) if Path::new(model_arg).is_file() => {
            let model = ModelArtifact::from_json(&fs::read_to_string(model_arg)?)?;
            Some(store.put_model(&model)?)
        }
        Some(id) => {
            store.get_model(id)?;
            Some(id.clone())
        }
    };
    let state = AppState::new(store, default_model, thresholds(flags)?, cfg.screens, token);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(server::serve(state, addr))?;
    Ok(())
}
