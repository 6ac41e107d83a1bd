//! Command-line front end: `train`, `eval`, `gradcheck`, `export-activation`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or model
//! error, 3 gradient check failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grad_check::{check_gradients, clear_kinks, CheckOptions, Sample, KINK_MARGIN};
use crate::io::{curve_csv, export_activation, load_csv, Checkpoint, RunConfig};
use crate::loss::{mean_loss, LossKind};
use crate::network::Scaling;
use crate::optim::train;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

/// Samples drawn for `gradcheck`.
const GRADCHECK_SAMPLES: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "vnn", version, about = "Networks with trainable basis-expansion activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network described by a config file and save a checkpoint.
    Train(TrainArgs),
    /// Report the loss (and accuracy, for softmax outputs) of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Tabulate a learned hidden-layer activation and its slope as CSV.
    ExportActivation(ExportArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV whose trailing columns (as many as the output width) are targets.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// The CSV files start with a header row.
    #[arg(long)]
    header: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    header: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Defaults to the built-in XOR configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed for initialization and sample generation.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Also write failing coordinates as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Hidden layer, counting from 1.
    #[arg(long)]
    layer: usize,
    /// Neuron within a neuron-mode layer, counting from 1.
    #[arg(long)]
    neuron: Option<usize>,
    /// Interval as `A:B`.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
    range: (f64, f64),
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected A:B, got `{s}`"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("`{v}` is not a finite number"))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a >= b {
        return Err(format!("range start {a} must be below end {b}"));
    }
    Ok((a, b))
}

enum Failure {
    Usage(String),
    Data(String),
    GradCheck,
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

/// Runs the CLI on `args` (including the program name), writing normal output
/// to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::ExportActivation(a) => cmd_export(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Data(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_DATA
        }
        Err(Failure::GradCheck) => {
            let _ = writeln!(err, "error: gradient check failed");
            EXIT_GRADCHECK
        }
    }
}

pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = RunConfig::load(&a.config).map_err(usage)?;
    let mut net = cfg.build_network().map_err(usage)?;
    let n_targets = net.output_width();
    let train_set = load_csv(&a.data, n_targets, a.header).map_err(data)?;
    let val_set = match &a.val {
        Some(p) => Some(load_csv(p, n_targets, a.header).map_err(data)?),
        None => None,
    };
    let history = train(&mut net, &train_set, val_set.as_ref(), cfg.loss, &cfg.train).map_err(data)?;
    for e in &history.entries {
        let mut line = format!("epoch {} train_loss {:.16e}", e.epoch, e.train_loss);
        if let Some(v) = e.val_loss {
            line.push_str(&format!(" val_loss {v:.16e}"));
        }
        writeln!(out, "{line}").map_err(data)?;
    }
    Checkpoint::new(net, cfg.loss, cfg.train.seed)
        .save(&a.out)
        .map_err(data)?;
    Ok(())
}

fn argmax(v: ndarray::ArrayView1<'_, f64>) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(&a.model).map_err(data)?;
    let net = &ckpt.network;
    let ds = load_csv(&a.data, net.output_width(), a.header).map_err(data)?;
    if ds.feature_width() != net.input_width() {
        return Err(data(format!(
            "dataset has {} feature columns, model expects {}",
            ds.feature_width(),
            net.input_width()
        )));
    }
    let loss = mean_loss(net, ds.iter(), ckpt.loss).map_err(data)?;
    writeln!(out, "loss {loss:.16e}").map_err(data)?;
    if net.output().scaling == Scaling::Softmax {
        let mut correct = 0usize;
        for (x, t) in ds.iter() {
            let y = net.predict(x).map_err(data)?;
            if argmax(y.view()) == argmax(t) {
                correct += 1;
            }
        }
        writeln!(out, "accuracy {:.6}", correct as f64 / ds.len() as f64).map_err(data)?;
    }
    Ok(())
}

/// Random inputs in [-1, 1] and targets suited to the loss: values in [0, 1]
/// for mse, points on the probability simplex for cross-entropy.
fn gradcheck_samples(rng: &mut ChaCha8Rng, d: usize, k: usize, loss: LossKind) -> Vec<Sample> {
    (0..GRADCHECK_SAMPLES)
        .map(|_| {
            let x = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..=1.0));
            let t = match loss {
                LossKind::Mse => Array1::from_shape_fn(k, |_| rng.random_range(0.0..=1.0)),
                LossKind::CrossEntropy => {
                    let w = Array1::from_shape_fn(k, |_| rng.random_range(0.05..=1.0));
                    let s = w.sum();
                    w / s
                }
            };
            (x, t)
        })
        .collect()
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let mut net = cfg.build_network().map_err(usage)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(2);
    let samples = gradcheck_samples(&mut rng, net.input_width(), net.output_width(), cfg.loss);
    let shifted = clear_kinks(&mut net, &samples, KINK_MARGIN).map_err(data)?;
    let opts = CheckOptions {
        rel_tol: a.tol,
        seed: cfg.train.seed,
        ..CheckOptions::default()
    };
    let report = check_gradients(&net, &samples, cfg.loss, &opts).map_err(usage)?;
    if shifted > 0 {
        writeln!(out, "shifted {shifted} bias(es) away from activation kinks").map_err(data)?;
    }
    write!(out, "{report}").map_err(data)?;
    if let Some(p) = &a.report {
        std::fs::write(p, report.failures_csv()).map_err(|e| data(format!("cannot write {}: {e}", p.display())))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::GradCheck)
    }
}

fn cmd_export(a: ExportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.layer == 0 || a.neuron == Some(0) {
        return Err(usage("layer and neuron indices start at 1"));
    }
    if a.steps < 2 {
        return Err(usage("steps must be at least 2"));
    }
    let ckpt = Checkpoint::load(&a.model).map_err(data)?;
    let (lo, hi) = a.range;
    let points = export_activation(&ckpt.network, a.layer - 1, a.neuron.map(|j| j - 1), lo, hi, a.steps)
        .map_err(data)?;
    std::fs::write(&a.out, curve_csv(&points)).map_err(|e| data(format!("cannot write {}: {e}", a.out.display())))?;
    writeln!(out, "wrote {} points to {}", points.len(), a.out.display()).map_err(data)?;
    Ok(())
}
