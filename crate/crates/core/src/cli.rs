//! Command-line front end: `train`, `eval`, `steer`, `synth` and `inspect`.
//!
//! A `--config` file holds flat `key = value` lines named after the long
//! flags. Its values are spliced into the argument list ahead of the
//! command-line flags, so flags given on the command line win. Keys that no
//! command knows are rejected; keys that belong to another command are
//! ignored, so one file can serve a whole pipeline.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};

use crate::baseline::{PolicyKind, SamplingPolicy};
use crate::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::error::Error;
use crate::evaluator::{evaluate, ALL_ATTACKS};
use crate::flow_data::{
    generate_synthetic, load_flows_csv, split_dataset, truncate_flows, write_flows_csv,
    FlowDataset, SynthConfig, RAW_FEATURE_NAMES,
};
use crate::model::{ActionSpace, Topology};
use crate::steering::{run_steered, ModelSampler, SteeringConfig};
use crate::trainer::{train, AlphaMode, TrainConfig, TrainLogRecord};

#[derive(Debug, Parser)]
#[command(name = "sparseids", version, about = "Reinforcement-learned packet sampling for flow intrusion detection")]
pub struct Cli {
    /// Seed for every random choice (split, initialization, sampling).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat `key = value` file of flag values; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a sampler and classifier and write a checkpoint.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split under a sampling policy.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Steer the tradeoff of a uniform-alpha checkpoint towards a sparsity target.
    #[command(args_override_self = true)]
    Steer(SteerArgs),
    /// Write a synthetic flow dataset.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Describe a checkpoint.
    #[command(args_override_self = true)]
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Per-packet flow CSV.
    #[arg(long)]
    pub data: PathBuf,

    /// Fraction of flows in the training split.
    #[arg(long, default_value_t = 0.667)]
    pub split: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub split: SplitArgs,

    /// Flows are cut to this many packets.
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,

    #[arg(long, default_value_t = 8)]
    pub epochs: usize,

    /// Adam learning rate.
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,

    /// Sparsity weight: a fixed value, or "uniform" to draw it per flow and
    /// feed it to the model.
    #[arg(long, default_value = "0.5")]
    pub alpha: AlphaMode,

    /// Entropy bonus weight.
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,

    /// "continuous" or "discrete:k".
    #[arg(long, default_value = "continuous")]
    pub actions: ActionSpace,

    /// "shared" or "separate".
    #[arg(long, default_value = "shared")]
    pub topology: Topology,

    /// Flows per optimizer step.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,

    /// LSTM width.
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,

    /// LSTM layers.
    #[arg(long, default_value_t = 3)]
    pub layers: usize,

    /// Checkpoint to write.
    #[arg(long, default_value = "model.spid")]
    pub out: PathBuf,

    /// Training log CSV to write.
    #[arg(long, default_value = "train_log.csv")]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub split: SplitArgs,

    /// Checkpoint to evaluate.
    #[arg(long)]
    pub model: PathBuf,

    /// rl, random, first-m, relative-first-m or every-ith.
    #[arg(long, default_value = "rl")]
    pub policy: PolicyKind,

    /// Sampling rate in (0, 1] for the baselines [default: none; required for baselines].
    #[arg(long)]
    pub rate: Option<f64>,

    /// Expected flow length for first-m [default: mean length of the training split].
    #[arg(long)]
    pub avg_len: Option<f64>,

    /// Also write one histogram per attack type.
    #[arg(long)]
    pub by_attack: bool,

    /// Tradeoff fed to uniform-alpha models [default: 1.0].
    #[arg(long)]
    pub tradeoff: Option<f64>,

    /// Directory for the report, key-value metrics and histograms.
    #[arg(long, default_value = "eval")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    #[command(flatten)]
    pub split: SplitArgs,

    /// Checkpoint trained with --alpha uniform.
    #[arg(long)]
    pub model: PathBuf,

    /// Minimum sparsity to reach, in (0, 1) [default: none; required].
    #[arg(long)]
    pub target: f64,

    /// Tradeoff decrement per window.
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,

    /// Flows per window.
    #[arg(long, default_value_t = 1000)]
    pub window: usize,

    /// Starting tradeoff, the largest seen in training.
    #[arg(long, default_value_t = 1.0)]
    pub tradeoff_max: f64,

    /// Steering trace CSV to write.
    #[arg(long, default_value = "steering.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset CSV to write.
    #[arg(long, default_value = "synthetic.csv")]
    pub out: PathBuf,

    #[arg(long, default_value_t = 2000)]
    pub flows: usize,

    /// Longest flow generated.
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,

    /// Shortest flow generated.
    #[arg(long, default_value_t = 1)]
    pub min_len: usize,

    /// Fraction of flows that are attacks.
    #[arg(long, default_value_t = 0.5)]
    pub attack_ratio: f64,

    /// Packet position that separates attacks from benign flows.
    #[arg(long, default_value_t = 3)]
    pub signal_index: usize,

    /// Fraction of flows running to the full length.
    #[arg(long, default_value_t = 0.5)]
    pub long_share: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint to describe.
    #[arg(long)]
    pub model: PathBuf,
}

/// A failed command: a short machine-readable kind, a process exit code
/// and a one-line message.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub code: i32,
    pub msg: String,
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;
pub const EXIT_DIVERGED: i32 = 6;

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.msg.replace('\n', " ");
        write!(f, "error[{}]: {}", self.kind, msg.trim())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Io { .. } => ("io", EXIT_IO),
            Error::MalformedRow { .. } | Error::InvalidFlow { .. } | Error::EmptyDataset => ("data", EXIT_DATA),
            Error::InvalidArgument(_) | Error::UnknownAttackType { .. } => ("usage", EXIT_USAGE),
            Error::CorruptCheckpoint { .. } | Error::VersionMismatch { .. } => ("checkpoint", EXIT_CHECKPOINT),
            Error::TopologyMismatch(_) => ("topology", EXIT_CHECKPOINT),
            Error::Diverged(_) | Error::NonFinite(_) => ("diverged", EXIT_DIVERGED),
            Error::DimensionMismatch { .. } | Error::Tape(_) => ("internal", EXIT_OTHER),
        };
        CliError {
            kind,
            code,
            msg: e.to_string(),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse `args` (including the program name), run the command and return
/// the process exit code. Errors are printed to stderr as one line.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(Parsed::Exit(code)) => return code,
        Err(Parsed::Fail(e)) => {
            eprintln!("{e}");
            return e.code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code
        }
    }
}

enum Parsed {
    /// Help or version was printed.
    Exit(i32),
    Fail(CliError),
}

fn parse(args: Vec<String>) -> std::result::Result<Cli, Parsed> {
    let args = splice_config(args).map_err(Parsed::Fail)?;
    Cli::try_parse_from(args).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                let _ = e.print();
                Parsed::Exit(if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                    EXIT_USAGE
                } else {
                    0
                })
            }
            _ => {
                let text = e.to_string();
                let line = text
                    .lines()
                    .find(|l| !l.trim().is_empty())
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: ")
                    .to_string();
                Parsed::Fail(CliError::usage(line))
            }
        }
    })
}

const GLOBAL_VALUE_FLAGS: [&str; 3] = ["--seed", "--threads", "--config"];

/// Insert the values of a `--config` file into `args`.
fn splice_config(args: Vec<String>) -> CliResult<Vec<String>> {
    let mut config_path = None;
    let mut sub_pos = None;
    let command = Cli::command();
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if a == "--" {
            break;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            config_path = Some(PathBuf::from(v));
        } else if a == "--config" {
            config_path = args.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if GLOBAL_VALUE_FLAGS.contains(&a.as_str()) {
            i += 1;
        } else if sub_pos.is_none()
            && !a.starts_with('-')
            && command.get_subcommands().any(|s| s.get_name() == a)
        {
            sub_pos = Some(i);
        }
        i += 1;
    }
    let Some(path) = config_path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let entries = parse_config(&text)?;

    let sub = sub_pos.map(|p| args[p].clone());
    let mut known = BTreeSet::new();
    let mut globals = BTreeSet::new();
    for arg in command.get_arguments() {
        if let Some(l) = arg.get_long() {
            known.insert(l.to_string());
            globals.insert(l.to_string());
        }
    }
    let mut own = Vec::new();
    for s in command.get_subcommands() {
        for arg in s.get_arguments() {
            if let Some(l) = arg.get_long() {
                known.insert(l.to_string());
                if Some(s.get_name()) == sub.as_deref() {
                    own.push((l.to_string(), matches!(arg.get_action(), ArgAction::SetTrue)));
                }
            }
        }
    }

    let mut global_args = Vec::new();
    let mut sub_args = Vec::new();
    for (line, key, value) in entries {
        if key == "config" || key == "help" || key == "version" || !known.contains(&key) {
            return Err(CliError::usage(format!("{}:{line}: unknown key {key:?}", path.display())));
        }
        let target = if globals.contains(&key) {
            &mut global_args
        } else if let Some((_, is_flag)) = own.iter().find(|(l, _)| *l == key) {
            if *is_flag {
                let on: bool = value.parse().map_err(|_| {
                    CliError::usage(format!("{}:{line}: {key} must be true or false", path.display()))
                })?;
                if on {
                    sub_args.push(format!("--{key}"));
                }
                continue;
            }
            &mut sub_args
        } else {
            continue;
        };
        target.push(format!("--{key}={value}"));
    }

    let mut out = Vec::with_capacity(args.len() + global_args.len() + sub_args.len());
    out.push(args[0].clone());
    out.extend(global_args);
    match sub_pos {
        Some(p) => {
            out.extend(args[1..=p].iter().cloned());
            out.extend(sub_args);
            out.extend(args[p + 1..].iter().cloned());
        }
        None => out.extend(args[1..].iter().cloned()),
    }
    Ok(out)
}

/// `(line number, key, value)` for every setting; `#` starts a comment and
/// underscores in keys read as dashes.
fn parse_config(text: &str) -> CliResult<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if !seen.insert(key.clone()) {
            return Err(CliError::usage(format!("config line {}: {key} set twice", n + 1)));
        }
        out.push((n + 1, key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError {
                kind: "internal",
                code: EXIT_OTHER,
                msg: e.to_string(),
            })?;
    }
    match cli.command {
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Eval(a) => cmd_eval(a, cli.seed),
        Command::Steer(a) => cmd_steer(a, cli.seed),
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn load_split(args: &SplitArgs, seed: u64) -> CliResult<(FlowDataset, FlowDataset)> {
    if !(args.split > 0.0 && args.split < 1.0) {
        return Err(CliError::usage(format!("--split must lie in (0, 1), got {}", args.split)));
    }
    if !args.data.exists() {
        return Err(io_error(
            &args.data,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let ds = load_flows_csv(&args.data)?;
    Ok(split_dataset(&ds, args.split, seed)?)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))
}

fn cmd_train(a: TrainArgs, seed: u64) -> CliResult<()> {
    let config = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        alpha: a.alpha,
        beta: a.beta,
        action_space: a.actions,
        topology: a.topology,
        batch: a.batch,
        seed,
        max_len: a.max_len,
        hidden: a.hidden,
        layers: a.layers,
    };
    config.validate()?;
    let (train_set, _) = load_split(&a.split, seed)?;

    let mut log = create(&a.log)?;
    writeln!(log, "{}", TrainLogRecord::CSV_HEADER).map_err(|e| io_error(&a.log, e))?;
    let mut log_err = None;
    let mut last = None;
    let checkpoint = train(&config, &train_set, |r| {
        if log_err.is_none() {
            log_err = r.write_csv_row(&mut log).err();
        }
        last = Some(r.clone());
    })?;
    if let Some(e) = log_err {
        return Err(io_error(&a.log, e));
    }
    log.flush().map_err(|e| io_error(&a.log, e))?;
    checkpoint.save(&a.out)?;
    if let Some(r) = last {
        println!(
            "trained on {} flows: final accuracy {:.4}, sparsity {:.4}, loss {:.4}",
            train_set.len(),
            r.accuracy,
            r.sparsity,
            r.loss
        );
    }
    println!("wrote {} and {}", a.out.display(), a.log.display());
    Ok(())
}

/// Attack-type tags become file names.
fn file_tag(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn cmd_eval(a: EvalArgs, seed: u64) -> CliResult<()> {
    let checkpoint = Checkpoint::load(&a.model)?;
    let encoder = checkpoint.encoder();
    let tradeoff = match (encoder.with_tradeoff, a.tradeoff) {
        (true, t) => Some(t.unwrap_or(1.0)),
        (false, None) => None,
        (false, Some(_)) => {
            return Err(CliError::usage(
                "--tradeoff needs a model trained with --alpha uniform",
            ))
        }
    };
    let (train_set, test_set) = load_split(&a.split, seed)?;
    let policy = match (a.policy, a.rate) {
        (PolicyKind::Rl, None) => SamplingPolicy::rl(),
        (PolicyKind::Rl, Some(_)) => return Err(CliError::usage("--rate applies only to the baselines")),
        (_, None) => {
            return Err(CliError::usage(format!("--policy {} needs --rate", a.policy)))
        }
        (kind, Some(rate)) => {
            let avg_len = match (kind, a.avg_len) {
                (PolicyKind::FirstM, None) => {
                    Some(truncate_flows(&train_set, encoder.max_len)?.mean_flow_length())
                }
                (_, avg) => avg,
            };
            SamplingPolicy::new(kind, rate, avg_len)?
        }
    };
    let evaluation = evaluate(&checkpoint.model, &encoder, &test_set, &policy, tradeoff, seed)?;

    fs::create_dir_all(&a.out_dir).map_err(|e| io_error(&a.out_dir, e))?;
    let text = evaluation.report.to_text();
    let report_path = a.out_dir.join("report.txt");
    fs::write(&report_path, &text).map_err(|e| io_error(&report_path, e))?;
    let kv_path = a.out_dir.join("metrics.txt");
    fs::write(&kv_path, evaluation.report.to_key_values()).map_err(|e| io_error(&kv_path, e))?;

    let mut groups = vec![ALL_ATTACKS.to_string()];
    if a.by_attack {
        groups.extend(evaluation.attack_types.iter().cloned());
    }
    for g in groups {
        let path = a.out_dir.join(format!("histogram_{}.csv", file_tag(&g)));
        let mut out = create(&path)?;
        evaluation
            .histogram(&g)?
            .write_csv(&mut out)
            .and_then(|()| out.flush())
            .map_err(|e| io_error(&path, e))?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_steer(a: SteerArgs, seed: u64) -> CliResult<()> {
    let config = SteeringConfig {
        tradeoff_max: a.tradeoff_max,
        step: a.step,
        window: a.window,
        target: a.target,
    };
    config.validate()?;
    let checkpoint = Checkpoint::load(&a.model)?;
    let sampler = ModelSampler::new(&checkpoint)?;
    let (_, test_set) = load_split(&a.split, seed)?;
    let test_set = truncate_flows(&test_set, checkpoint.train.max_len)?;
    let trace = run_steered(&sampler, &test_set.flows, &config)?;
    let mut out = create(&a.out)?;
    trace
        .write_csv(&mut out)
        .and_then(|()| out.flush())
        .map_err(|e| io_error(&a.out, e))?;
    println!(
        "{} windows, stopped by {:?}, final tradeoff {}",
        trace.windows.len(),
        trace.stop,
        trace.final_tradeoff().unwrap_or(config.tradeoff_max)
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs, seed: u64) -> CliResult<()> {
    let config = SynthConfig {
        flows: a.flows,
        max_len: a.max_len,
        min_len: a.min_len,
        long_flow_share: a.long_share,
        attack_ratio: a.attack_ratio,
        signal_index: a.signal_index,
    };
    let ds = generate_synthetic(&config, seed)?;
    let mut out = create(&a.out)?;
    write_flows_csv(&ds, &mut out)?;
    out.flush().map_err(|e| io_error(&a.out, e))?;
    let s = ds.summary();
    println!(
        "wrote {} flows ({} attacks, {} packets) to {}",
        s.flows,
        s.attacks,
        s.packets,
        a.out.display()
    );
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> CliResult<()> {
    let c = Checkpoint::load(&a.model)?;
    let m = c.model.config();
    let mut s = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(s, "format version {FORMAT_VERSION}");
    let _ = writeln!(s, "topology {}", m.topology);
    let _ = writeln!(s, "action space {}", m.action_space);
    let _ = writeln!(s, "input dim {}", m.input_dim);
    let _ = writeln!(s, "hidden {} x {} layers", m.hidden, m.layers);
    let _ = writeln!(s, "parameters {}", c.model.num_parameters());
    for p in c.model.store().iter() {
        let _ = writeln!(s, "  {:<28} {:>4} x {:<4} {}", p.name, p.rows, p.cols, p.len());
    }
    let _ = writeln!(s, "config");
    for (k, v) in c.train.to_pairs() {
        let _ = writeln!(s, "  {k} = {v}");
    }
    let _ = writeln!(s, "normalization (mean, std)");
    for (j, name) in RAW_FEATURE_NAMES.iter().enumerate() {
        let _ = writeln!(s, "  {:<14} {} {}", name, c.stats.mean[j], c.stats.std[j]);
    }
    print!("{s}");
    Ok(())
}
