//! Command-line front end. The `nlmda` binary calls [`main`].
//!
//! Settings resolve as built-in defaults, then the `--config` file, then flags.
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::model::{gradcheck_model, read_checkpoint, write_checkpoint, ModelConfig, NlmdaNet};
use crate::pipeline::{
    fir_bandpass, preprocess, read_epochs, stratified_split, synth_generate, write_epochs,
    EpochSet, RawRecording, SynthConfig,
};
use crate::tensor::primitive_gradchecks;
use crate::train::{cross_validate_with, evaluate, fit, FoldResult, LogisticModel, RunMetrics};

pub use config::{check_output_path, RunConfig};

/// Largest relative gradient error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "nlmda",
    version,
    about = "EEG vigilance classification with NLMDA-Net"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded two-class synthetic epoch file.
    Synth(SynthArgs),
    /// Filter, decimate, epoch and label a raw recording.
    Preprocess(PreprocessArgs),
    /// Train on a 70:15:15 split and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on an epoch file.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation.
    Cv(CvArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print per-layer and total parameter counts.
    Paramcount(ParamcountArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output epoch file; a `.manifest` is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 17)]
    pub channels: usize,
    /// Samples per epoch.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 200)]
    pub fs: u32,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Headerless little-endian f32 samples, channel-major.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Sampling rate of the raw data in Hz.
    #[arg(long)]
    pub fs: u32,
    /// Number of channels in the raw file.
    #[arg(long, default_value_t = 17)]
    pub channels: usize,
    /// Comma-separated electrode labels (defaults to ch0, ch1, ...).
    #[arg(long)]
    pub channel_names: Option<String>,
    /// PERCLOS text file: one `time_seconds value` pair per line.
    #[arg(long)]
    pub perclos: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Decimation factor.
    #[arg(long, default_value_t = 5)]
    pub factor: usize,
    /// FIR length (odd).
    #[arg(long, default_value_t = 1001)]
    pub taps: usize,
    /// Lower band edge in Hz.
    #[arg(long, default_value_t = 1.0)]
    pub lo: f64,
    /// Upper band edge in Hz.
    #[arg(long, default_value_t = 75.0)]
    pub hi: f64,
}

/// Flags that override the configuration file.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Epoch file to train on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for splits, shuffling and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for parameter initialization.
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Metrics output file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.train.adam.lr = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.model_seed {
            cfg.model.seed = v;
        }
        if let Some(v) = &self.metrics {
            cfg.metrics = Some(v.clone());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Checkpoint output file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Number of folds.
    #[arg(long)]
    pub k: Option<usize>,
    /// Folds trained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also cross-validate the logistic-regression baseline on the same folds.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check the small test network on every parameter coordinate.
    #[arg(long)]
    pub tiny: bool,
    /// Without --tiny: configuration of the network to check.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Without --tiny: number of randomly chosen parameter coordinates.
    #[arg(long, default_value_t = 200)]
    pub coords: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ParamcountArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status. Reports go to stdout, errors to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}

/// Runs a parsed command and returns its report.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Paramcount(a) => cmd_paramcount(&a),
    }
}

fn echo(out: &mut String, pairs: &[(&str, String)]) {
    out.push_str("# effective configuration\n");
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
}

fn echo_config(out: &mut String, cfg: &RunConfig) {
    out.push_str("# effective configuration\n");
    out.push_str(&cfg.to_ini());
    out.push_str("# end configuration\n");
}

fn cmd_synth(a: &SynthArgs) -> Result<String> {
    check_output_path(&a.out)?;
    let mut out = String::new();
    echo(
        &mut out,
        &[
            ("out", a.out.display().to_string()),
            ("n_per_class", a.n_per_class.to_string()),
            ("seed", a.seed.to_string()),
            ("channels", a.channels.to_string()),
            ("samples", a.samples.to_string()),
            ("fs", a.fs.to_string()),
        ],
    );
    let set = synth_generate(&SynthConfig {
        n_per_class: a.n_per_class,
        channels: a.channels,
        samples: a.samples,
        fs_hz: a.fs,
        seed: a.seed,
    })?;
    write_epochs(&set, &a.out)?;
    let _ = writeln!(out, "wrote {} epochs to {}", set.len(), a.out.display());
    Ok(out)
}

fn read_perclos(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read PERCLOS file {}: {e}", path.display())))?;
    let mut series = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parsed = match fields[..] {
            [t, v] => t.parse::<f64>().ok().zip(v.parse::<f64>().ok()),
            _ => None,
        };
        series.push(parsed.ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected `time value`",
                path.display(),
                n + 1
            ))
        })?);
    }
    Ok(series)
}

fn cmd_preprocess(a: &PreprocessArgs) -> Result<String> {
    for p in [&a.input, &a.perclos] {
        if !p.is_file() {
            return Err(Error::Config(format!(
                "input file {} does not exist",
                p.display()
            )));
        }
    }
    check_output_path(&a.out)?;
    let names: Vec<String> = match &a.channel_names {
        Some(s) => s.split(',').map(|n| n.trim().to_string()).collect(),
        None => (0..a.channels).map(|i| format!("ch{i}")).collect(),
    };
    let mut out = String::new();
    echo(
        &mut out,
        &[
            ("in", a.input.display().to_string()),
            ("fs", a.fs.to_string()),
            ("channels", names.join(",")),
            ("perclos", a.perclos.display().to_string()),
            ("out", a.out.display().to_string()),
            ("factor", a.factor.to_string()),
            ("taps", a.taps.to_string()),
            ("band", format!("{}-{}", a.lo, a.hi)),
        ],
    );
    let taps = fir_bandpass(a.fs as f64, a.lo, a.hi, a.taps)?;
    let rec =
        RawRecording::from_f32_le(a.fs, names, &fs::read(&a.input)?, read_perclos(&a.perclos)?)?;
    let set = preprocess(&rec, &taps, a.factor)?;
    write_epochs(&set, &a.out)?;
    let counts = set.class_counts();
    let _ = writeln!(
        out,
        "wrote {} epochs of shape (1, {}, {}) to {}; class counts {:?}",
        set.len(),
        set.channels(),
        set.samples(),
        a.out.display(),
        counts
    );
    Ok(out)
}

fn load_data(cfg: &RunConfig) -> Result<EpochSet> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input data file given".into()))?;
    let set = read_epochs(path)?;
    check_geometry(&cfg.model, &set)?;
    Ok(set)
}

fn check_geometry(model: &ModelConfig, set: &EpochSet) -> Result<()> {
    if set.channels() != model.channels
        || set.samples() != model.samples
        || set.fs_hz as usize != model.fs_hz
    {
        return Err(Error::Config(format!(
            "data has {} channels x {} samples at {} Hz, the model expects {} x {} at {} Hz",
            set.channels(),
            set.samples(),
            set.fs_hz,
            model.channels,
            model.samples,
            model.fs_hz
        )));
    }
    if let Some(&l) = set.labels.iter().find(|&&l| l >= model.n_classes) {
        return Err(Error::Config(format!(
            "label {l} exceeds the model's {} classes",
            model.n_classes
        )));
    }
    Ok(())
}

fn write_metrics(path: Option<&PathBuf>, text: &str, out: &mut String) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, text)?;
        let _ = writeln!(out, "metrics written to {}", p.display());
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<String> {
    let mut cfg = a.common.resolve()?;
    if let Some(p) = &a.checkpoint {
        cfg.checkpoint = Some(p.clone());
    }
    cfg.validate(true)?;
    let mut out = String::new();
    echo_config(&mut out, &cfg);
    let set = load_data(&cfg)?;
    let split = stratified_split(&set.labels, cfg.split, cfg.train.seed)?;
    if split.val.is_empty() {
        return Err(Error::Config(format!(
            "the {}/{}/{} split leaves no validation epochs; the data set is too small",
            cfg.split.0, cfg.split.1, cfg.split.2
        )));
    }
    let model_cfg = ModelConfig {
        n_train: cfg.n_train.unwrap_or(split.train.len()),
        ..cfg.model.clone()
    };
    let mut net = NlmdaNet::new(model_cfg)?;
    let (train, val) = (set.subset(&split.train)?, set.subset(&split.val)?);
    let report = fit(&mut net, &train, &val, &cfg.train)?;
    let accuracy = if split.test.is_empty() {
        report.best_val_accuracy()
    } else {
        evaluate(&mut net, &set.subset(&split.test)?)?
    };
    if let Some(p) = &cfg.checkpoint {
        write_checkpoint(&net, p)?;
        let _ = writeln!(out, "checkpoint written to {}", p.display());
    }
    let metrics = RunMetrics::from_folds(vec![FoldResult { accuracy, report }]);
    let mut header = vec![
        ("command".to_string(), "train".to_string()),
        ("n_train".into(), split.train.len().to_string()),
        ("n_val".into(), split.val.len().to_string()),
        ("n_test".into(), split.test.len().to_string()),
        ("k_pooling".into(), net.config.k_pooling()?.to_string()),
    ];
    header.extend(cfg.to_pairs());
    let text = metrics.to_text(&header);
    let _ = writeln!(out, "best_epoch={}", metrics.folds[0].report.best_epoch);
    let _ = writeln!(
        out,
        "val_accuracy={}",
        metrics.folds[0].report.best_val_accuracy()
    );
    let _ = writeln!(out, "test_accuracy={accuracy}");
    write_metrics(cfg.metrics.as_ref(), &text, &mut out)?;
    Ok(out)
}

fn cmd_eval(a: &EvalArgs) -> Result<String> {
    for p in [&a.checkpoint, &a.data] {
        if !p.is_file() {
            return Err(Error::Config(format!(
                "input file {} does not exist",
                p.display()
            )));
        }
    }
    if let Some(p) = &a.metrics {
        check_output_path(p)?;
    }
    let mut out = String::new();
    echo(
        &mut out,
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("data", a.data.display().to_string()),
        ],
    );
    let mut net = read_checkpoint(&a.checkpoint)?;
    let set = read_epochs(&a.data)?;
    check_geometry(&net.config, &set)?;
    let accuracy = evaluate(&mut net, &set)?;
    let _ = writeln!(out, "accuracy={accuracy}");
    let text = format!(
        "command=eval\ncheckpoint={}\ndata={}\nn={}\naccuracy={accuracy}\n",
        a.checkpoint.display(),
        a.data.display(),
        set.len()
    );
    write_metrics(a.metrics.as_ref(), &text, &mut out)?;
    Ok(out)
}

fn cmd_cv(a: &CvArgs) -> Result<String> {
    let mut cfg = a.common.resolve()?;
    if let Some(k) = a.k {
        cfg.folds = k;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    cfg.validate(true)?;
    let mut out = String::new();
    echo_config(&mut out, &cfg);
    let set = load_data(&cfg)?;
    let metrics = cross_validate_with(&set, cfg.folds, &cfg.train, cfg.jobs, |_, n_fit| {
        NlmdaNet::new(ModelConfig {
            n_train: cfg.n_train.unwrap_or(n_fit),
            ..cfg.model.clone()
        })
    })?;
    let mut header = vec![("command".to_string(), "cv".to_string())];
    header.extend(cfg.to_pairs());
    let mut text = metrics.to_text(&header);
    let _ = writeln!(out, "fold_accuracies={:?}", metrics.fold_accuracies);
    let _ = writeln!(out, "mean_accuracy={}", metrics.mean);
    let _ = writeln!(out, "ci95_halfwidth={}", metrics.ci95_halfwidth);
    if a.baseline {
        let (c, t, k) = (set.channels(), set.samples(), cfg.model.n_classes);
        let base = cross_validate_with(&set, cfg.folds, &cfg.train, cfg.jobs, |_, _| {
            LogisticModel::new(c, t, k)
        })?;
        let _ = writeln!(out, "baseline_mean_accuracy={}", base.mean);
        let _ = writeln!(text, "baseline.mean_accuracy={}", base.mean);
        let _ = writeln!(text, "baseline.ci95_halfwidth={}", base.ci95_halfwidth);
        let _ = writeln!(
            text,
            "baseline.fold_accuracies={}",
            base.fold_accuracies
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
    }
    write_metrics(cfg.metrics.as_ref(), &text, &mut out)?;
    Ok(out)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<String> {
    let cfg = match (&a.config, a.tiny) {
        (_, true) => RunConfig {
            model: ModelConfig::tiny(),
            ..RunConfig::default()
        },
        (Some(p), false) => RunConfig::load(p)?,
        (None, false) => RunConfig::default(),
    };
    let mut model = cfg.model.clone();
    model.n_train = cfg.n_train.unwrap_or(model.n_train);
    model.validate()?;
    let mut out = String::new();
    echo(
        &mut out,
        &[
            ("tiny", a.tiny.to_string()),
            (
                "coords",
                if a.tiny {
                    "all".into()
                } else {
                    a.coords.to_string()
                },
            ),
            ("seed", a.seed.to_string()),
        ],
    );
    let mut results: Vec<(String, f64)> = primitive_gradchecks(a.seed)?
        .into_iter()
        .map(|(n, e)| (n.to_string(), e))
        .collect();
    let coords = (!a.tiny).then_some(a.coords);
    results.push((
        "end_to_end".into(),
        gradcheck_model(&model, 2, a.seed, coords)?,
    ));
    let mut worst = 0.0f64;
    for (name, err) in &results {
        let _ = writeln!(out, "{name:<16} {err:.3e}");
        worst = worst.max(*err);
    }
    let _ = writeln!(
        out,
        "max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})"
    );
    if worst >= GRADCHECK_TOLERANCE {
        print!("{out}");
        return Err(Error::Numerical(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(out)
}

fn cmd_paramcount(a: &ParamcountArgs) -> Result<String> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut model = cfg.model.clone();
    model.n_train = cfg.n_train.unwrap_or(model.n_train);
    model.validate()?;
    let mut out = String::new();
    echo_config(&mut out, &cfg);
    let table = model.param_table()?;
    let _ = writeln!(out, "{:<22} {:>10}", "layer", "parameters");
    for (name, n) in &table {
        let _ = writeln!(out, "{name:<22} {n:>10}");
    }
    let _ = writeln!(
        out,
        "{:<22} {:>10}",
        "total",
        table.iter().map(|(_, n)| n).sum::<usize>()
    );
    Ok(out)
}
