//! Command-line surface: `train`, `eval`, `gradcheck` and `minebench`.
//!
//! Runs are described by a JSON configuration with strict key checking. An
//! invalid configuration exits with status 2 and names the offending key;
//! runtime failures exit with status 1.

mod gradcheck;
mod minebench;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

pub use gradcheck::{run_gradcheck, GradcheckOptions, GradcheckRow, COMPONENTS, GRADCHECK_TOLERANCE};
pub use minebench::{minebench_csv, random_batch, run_minebench, MinebenchRow, MINEBENCH_COLUMNS};

use crate::datasets::{gen_synthetic, load_csv, write_csv, Dataset, SyntheticSpec};
use crate::error::Error;
use crate::evaluation::DEFAULT_RECALL_KS;
use crate::network::{init_params, ConvSpec, NetConfig, TwoHeadNet};
use crate::tensor::SeededRng;
use crate::trainer::{evaluate_net, train, NetEvaluation, TrainConfig};

/// Where training samples come from.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
        /// `[height, width, channels]`; defaults to `[1, d, 1]`.
        #[serde(default)]
        shape: Option<[usize; 3]>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    #[serde(default = "default_d_emb")]
    pub d_emb: usize,
    /// Defaults to two 3x3 stride-2 convolutions with 8 channels.
    #[serde(default)]
    pub conv: Option<Vec<ConvSpec>>,
}

impl Default for NetSection {
    fn default() -> Self {
        Self { d_emb: default_d_emb(), conv: None }
    }
}

fn default_d_emb() -> usize {
    256
}

fn default_ks() -> Vec<usize> {
    DEFAULT_RECALL_KS.to_vec()
}

fn default_output() -> PathBuf {
    PathBuf::from("run")
}

/// Everything a `train` run needs; the run is reproducible from this and the seed.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    /// Per-class number of training samples; the rest of each class is held out.
    #[serde(default)]
    pub split: Option<Vec<usize>>,
    #[serde(default)]
    pub net: NetSection,
    pub train: TrainConfig,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Also write the training log as JSON lines.
    #[serde(default)]
    pub json_log: bool,
}

/// Failure of a command, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2.
    Config(String),
    /// Exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid config: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parses a run configuration, reporting the key path of the first problem.
pub fn parse_run_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            CliError::Config(inner.to_string())
        } else {
            CliError::Config(format!("at `{path}`: {inner}"))
        }
    })?;
    config.train.validate().map_err(|e| CliError::Config(format!("at `train`: {e}")))?;
    if config.ks.is_empty() || config.ks.contains(&0) {
        return Err(CliError::Config("at `ks`: values must be >= 1".into()));
    }
    Ok(config)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_run_config(&text)
}

fn default_shape(dataset: &Dataset) -> [usize; 3] {
    match *dataset.sample_shape() {
        [h, w, c] => [h, w, c],
        _ => [1, dataset.samples[0].len(), 1],
    }
}

/// Loads or generates the dataset of a run, shaped for the network.
pub fn build_dataset(config: &RunConfig, seed: u64) -> Result<Dataset, CliError> {
    let dataset = match &config.data {
        DataSource::Synthetic(spec) => gen_synthetic(spec, &mut SeededRng::new(seed).fork(10))?.dataset,
        DataSource::Csv { path, has_header, shape } => {
            let d = load_csv(path, *has_header)?;
            match shape {
                Some(s) => d.reshape_samples(s)?,
                None => d,
            }
        }
    };
    let shape = default_shape(&dataset);
    Ok(dataset.reshape_samples(&shape)?)
}

pub fn net_config_for(config: &RunConfig, dataset: &Dataset) -> NetConfig {
    let input = default_shape(dataset);
    let mut net = NetConfig::desk(input[2], dataset.n_classes, config.net.d_emb);
    net.input = input;
    if let Some(conv) = &config.net.conv {
        net.conv = conv.clone();
    }
    net
}

/// Summary of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TwoHeadNet,
    pub log: crate::trainer::TrainLog,
    pub evaluation: Option<NetEvaluation>,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Trains per `config` and writes `checkpoint.bin`, `train_log.csv`
/// (optionally `train_log.jsonl`), `summary.json` and, when a split is
/// configured, `test.csv` into the output directory.
pub fn cmd_train(config: &RunConfig, seed_override: Option<u64>) -> Result<TrainOutcome, CliError> {
    let started = Instant::now();
    let seed = seed_override.unwrap_or(config.seed);
    let dataset = build_dataset(config, seed)?;
    let (train_set, test_set) = match &config.split {
        Some(counts) => {
            let (a, b) = dataset.split_per_class(counts).map_err(|e| CliError::Config(format!("at `split`: {e}")))?;
            (a, Some(b))
        }
        None => (dataset, None),
    };
    let net_cfg = net_config_for(config, &train_set);
    net_cfg.layer_shapes().map_err(|e| CliError::Config(format!("at `net`: {e}")))?;
    let net = init_params(&net_cfg, &mut SeededRng::new(seed).fork(11))?;
    let train_cfg = TrainConfig { seed, ..config.train.clone() };
    let (net, log) = train(net, &train_set, &train_cfg)?;

    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let checkpoint = out.join("checkpoint.bin");
    net.save(&checkpoint)?;
    let log_path = out.join("train_log.csv");
    log.write_csv(&log_path)?;
    if config.json_log {
        std::fs::write(out.join("train_log.jsonl"), log.to_json_lines()).map_err(Error::from)?;
    }
    let evaluation = match &test_set {
        Some(test) => {
            write_csv(test, out.join("test.csv"))?;
            Some(evaluate_net(&net, test, &config.ks, &mut SeededRng::new(seed).fork(12))?)
        }
        None => None,
    };
    let last = log.final_record().expect("at least one iteration");
    let collapse_events: Vec<&String> = log.events.iter().filter(|e| e.contains("collapse")).collect();
    let skipped = log.events.iter().filter(|e| e.contains("no triplets")).count();
    let mut summary = json!({
        "seed": seed,
        "iterations": log.records.len(),
        "param_count": net.param_count(),
        "final": {
            "loss_total": last.loss_total,
            "loss_soft": last.loss_soft,
            "loss_embed": last.loss_embed,
            "mean_norm": last.mean_norm,
            "collapse": last.collapse,
        },
        "collapse_events": collapse_events,
        "softmax_only_steps": skipped,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    if let Some(ev) = &evaluation {
        summary["eval"] = eval_json(ev);
    }
    let summary_path = out.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("json") + "\n")
        .map_err(Error::from)?;
    Ok(TrainOutcome { net, log, evaluation, checkpoint, log_path, summary_path })
}

pub fn eval_json(ev: &NetEvaluation) -> serde_json::Value {
    json!({ "embedding": ev.embedding.to_json(), "penultimate": ev.penultimate.to_json() })
}

/// Embeds a CSV dataset with a checkpoint and reports both heads.
pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    has_header: bool,
    ks: &[usize],
    seed: u64,
) -> Result<NetEvaluation, CliError> {
    let net = TwoHeadNet::load(checkpoint)?;
    let dataset = load_csv(data, has_header)?;
    let input = net.config().input;
    if dataset.samples[0].len() != input.iter().product::<usize>() {
        return Err(CliError::Runtime(format!(
            "dataset rows have {} features, checkpoint expects {:?}",
            dataset.samples[0].len(),
            input
        )));
    }
    if dataset.n_classes > net.config().n_classes {
        return Err(CliError::Runtime(format!(
            "dataset has {} classes, checkpoint {}",
            dataset.n_classes,
            net.config().n_classes
        )));
    }
    let dataset = dataset.reshape_samples(&input)?;
    Ok(evaluate_net(&net, &dataset, ks, &mut SeededRng::new(seed))?)
}

fn parse_k(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("`{s}` is not a positive integer")),
        Ok(k) => Ok(k),
    }
}

#[derive(Debug, Parser)]
#[command(name = "twohead", version, about = "Two-head classification and embedding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a labeled CSV file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_k, value_delimiter = ',', default_value = "1,4,8,16")]
        ks: Vec<usize>,
        #[arg(long)]
        header: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, hide = true)]
        perturb: Option<String>,
    },
    /// Time the miners on random batches and check them against the oracles.
    Minebench {
        #[arg(long)]
        batch: usize,
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_or_print(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Train { config, seed } => {
            let cfg = load_run_config(&config)?;
            let outcome = cmd_train(&cfg, seed)?;
            eprintln!(
                "trained {} iterations; wrote {}, {}, {}",
                outcome.log.records.len(),
                outcome.checkpoint.display(),
                outcome.log_path.display(),
                outcome.summary_path.display()
            );
            Ok(0)
        }
        Command::Eval { ckpt, data, ks, header, seed, out } => {
            let ev = cmd_eval(&ckpt, &data, header, &ks, seed)?;
            let text = serde_json::to_string_pretty(&eval_json(&ev)).expect("json") + "\n";
            if let Some(path) = &out {
                write_or_print(&text, Some(path))?;
            }
            print!("{text}");
            Ok(0)
        }
        Command::Gradcheck { seed, points, perturb } => {
            if points == 0 {
                return Err(CliError::Config("--points must be >= 1".into()));
            }
            let rows = run_gradcheck(&GradcheckOptions { seed, points, perturb })?;
            println!("{:<18} {:>6} {:>12} status", "component", "points", "max_rel_err");
            for r in &rows {
                println!(
                    "{:<18} {:>6} {:>12.3e} {}",
                    r.component,
                    r.points,
                    r.max_rel_error,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            Ok(if rows.iter().all(GradcheckRow::passed) { 0 } else { 1 })
        }
        Command::Minebench { batch, trials, seed, out } => {
            let rows = run_minebench(batch, trials, seed)?;
            write_or_print(&minebench_csv(&rows), out.as_deref())?;
            let failures = rows.iter().filter(|r| !r.oracle_ok).count();
            eprintln!("{} mining runs, {} oracle mismatches", rows.len(), failures);
            Ok(if failures == 0 { 0 } else { 1 })
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
