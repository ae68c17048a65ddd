//! Command-line surface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data, file or
//! checkpoint error, 3 numeric failure.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ablation::{run_ablation, select_variants, standard_variants};
use crate::checkpoint;
use crate::config::{parse_kv, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_csv, predict_windows, MaeMode, MaeTable, SHORT_TERM_MS};
use crate::motion::{load_dataset_dir, read_motion_file, synth_dataset, write_dataset_dir, write_motion_file, Dataset, SampleWindow};
use crate::refine::StageInput;
use crate::training::{train_loop_with, TrainOutputs, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "motion-refine", about = "Coarse-to-fine motion prediction", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic sinusoid dataset.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Predict future frames for one history file.
    Predict(PredictArgs),
    /// MAE per action and horizon on a dataset directory.
    Eval(EvalArgs),
    /// Dump history, ground truth and predictions of every window as CSV.
    Export(ExportArgs),
    /// Train the standard variants and tabulate their MAE.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    subjects: usize,
    /// Windows per subject.
    #[arg(long, default_value_t = 200)]
    windows: usize,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    t: usize,
    #[arg(long, default_value_t = 12)]
    channels: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Training flags; each one overrides the matching config file key.
#[derive(Debug, Args)]
struct TrainFlags {
    /// `key=value` file; flags below win on conflict.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_adversarial: bool,
    /// Total networks in the cascade: 1 is the predictor alone, 2 adds one
    /// refinement stage.
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    plain_stack: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Frames between consecutive windows cut from each trial.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log (default: `<out>.metrics.csv`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Continue from this checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Motion file; its last N frames are the history.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaeModeArg {
    FullFrame,
    JointMean,
}

impl From<MaeModeArg> for MaeMode {
    fn from(m: MaeModeArg) -> Self {
        match m {
            MaeModeArg::FullFrame => MaeMode::FullFrame,
            MaeModeArg::JointMean => MaeMode::JointMean,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = SHORT_TERM_MS)]
    horizons: Vec<u32>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full-frame")]
    mae_mode: MaeModeArg,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Export at most this many windows.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Separate test set; otherwise `--test-subjects` or the training data.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Subject ids held out of training and used for testing.
    #[arg(long, value_delimiter = ',')]
    test_subjects: Vec<u32>,
    #[arg(long)]
    csv: PathBuf,
    /// Comma-separated variant names (default: all).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = SHORT_TERM_MS)]
    horizons: Vec<u32>,
    #[arg(long, value_enum, default_value = "full-frame")]
    mae_mode: MaeModeArg,
    #[command(flatten)]
    flags: TrainFlags,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Parse(_)
        | Error::Shape { .. }
        | Error::Data(_)
        | Error::Contract(_)
        | Error::Checkpoint(_)
        | Error::Io { .. } => EXIT_DATA,
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn cli_main<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Export(a) => export(a, out),
        Command::Ablate(a) => ablate(a, out),
    }
}

fn say(out: &mut dyn Write, text: &str) {
    let _ = writeln!(out, "{text}");
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let ds = synth_dataset(a.seed, a.subjects, a.windows, a.n, a.t, a.channels)?;
    write_dataset_dir(&ds, &a.out)?;
    say(out, &format!("wrote {} windows to {}", ds.len(), a.out.display()));
    Ok(())
}

/// Config file first, then flags.
fn build_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::desk();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in parse_kv(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    if flags.no_adversarial {
        cfg.adversarial = false;
    }
    if let Some(r) = flags.stages {
        if r == 0 {
            return Err(Error::Argument("--stages counts the predictor and must be at least 1".into()));
        }
        cfg.stages = r - 1;
    }
    if flags.plain_stack {
        cfg.stage_input = StageInput::Plain;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.lr {
        cfg.lr = v;
    }
    for kv in &flags.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_for(cfg: &TrainConfig, dir: &Path, stride: usize) -> Result<Dataset> {
    load_dataset_dir(dir, cfg.history, cfg.future, stride)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let (mut trainer, ds) = match &a.resume {
        Some(path) => {
            let mut t = checkpoint::load(path)?;
            let cfg = build_config(&a.flags)?;
            if a.flags.epochs.is_some() {
                t.config.epochs = cfg.epochs;
            }
            let ds = load_for(&t.config, &a.data, a.flags.stride)?;
            (t, ds)
        }
        None => {
            let cfg = build_config(&a.flags)?;
            let ds = load_for(&cfg, &a.data, a.flags.stride)?;
            (Trainer::new(cfg, ds.channels())?, ds)
        }
    };
    let metrics = a.metrics.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".metrics.csv");
        PathBuf::from(p)
    });
    let outputs = TrainOutputs {
        checkpoint: Some(a.out.clone()),
        metrics_log: Some(metrics.clone()),
    };
    let log = train_loop_with(&mut trainer, &ds, None, &outputs)?;
    if let Some(last) = log.last() {
        say(out, &format!("epoch {} L={} eval_mae_400={:?}", last.epoch, last.l, last.eval_mae_400));
    }
    say(out, &format!("checkpoint {} metrics {}", a.out.display(), metrics.display()));
    Ok(())
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let trainer = checkpoint::load(&a.ckpt)?;
    let cfg = &trainer.config;
    if a.frames == 0 || a.frames > cfg.future {
        return Err(Error::Argument(format!(
            "--frames {} must lie in 1..={} (the model's prediction length)",
            a.frames, cfg.future
        )));
    }
    let seq = read_motion_file(&a.input)?;
    if seq.frames() < cfg.history {
        return Err(Error::Data(format!(
            "{}: {} frames, model needs a history of {}",
            a.input.display(),
            seq.frames(),
            cfg.history
        )));
    }
    let history = seq.slice_frames(seq.frames() - cfg.history, seq.frames())?;
    let placeholder = crate::motion::zero_velocity_predict(&history, cfg.future)?;
    let window = SampleWindow::new(history, placeholder, 0, 0)?;
    let preds = predict_windows(&trainer.model, &trainer.codec()?, &[&window])?;
    let future = preds.refined[0].slice_frames(0, a.frames)?;
    write_motion_file(&a.out, &future)?;
    say(out, &format!("wrote {} frames to {}", a.frames, a.out.display()));
    Ok(())
}

fn print_table(out: &mut dyn Write, label: &str, t: &MaeTable) {
    let mut line = format!("{label:<14}");
    for (h, v) in t.horizons_ms.iter().zip(t.average()) {
        let _ = write!(line, " {h}ms={v:.4}");
    }
    say(out, &line);
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let trainer = checkpoint::load(&a.ckpt)?;
    let ds = load_for(&trainer.config, &a.data, a.stride)?;
    let report = evaluate(&trainer.model, &ds, &trainer.codec()?, &a.horizons, a.mae_mode.into())?;
    print_table(out, "refined", &report.refined);
    print_table(out, "coarse", &report.coarse);
    print_table(out, "zero-velocity", &report.zero_velocity);
    if let Some(path) = &a.csv {
        export_csv(&report.refined, path)?;
    }
    Ok(())
}

fn export(a: ExportArgs, out: &mut dyn Write) -> Result<()> {
    let trainer = checkpoint::load(&a.ckpt)?;
    let ds = load_for(&trainer.config, &a.data, a.stride)?;
    let n = a.limit.unwrap_or(ds.len()).min(ds.len());
    let windows: Vec<&SampleWindow> = ds.windows()[..n].iter().collect();
    let preds = predict_windows(&trainer.model, &trainer.codec()?, &windows)?;
    let mut text = String::from("window,subject,action,frame,source");
    for c in 0..ds.channels() {
        let _ = write!(text, ",c{c}");
    }
    text.push('\n');
    for (i, w) in windows.iter().enumerate() {
        let action = &ds.actions()[w.action_id as usize];
        let h = w.history().frames();
        let parts = [
            ("history", w.history(), 0),
            ("truth", w.future(), h),
            ("coarse", &preds.coarse[i], h),
            ("refined", &preds.refined[i], h),
        ];
        for (source, seq, offset) in parts {
            for (f, row) in seq.values().rows().into_iter().enumerate() {
                let _ = write!(text, "{i},{},{action},{},{source}", w.subject_id, f + offset);
                for v in row {
                    let _ = write!(text, ",{v}");
                }
                text.push('\n');
            }
        }
    }
    fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    say(out, &format!("exported {n} windows to {}", a.out.display()));
    Ok(())
}

fn ablate(a: AblateArgs, out: &mut dyn Write) -> Result<()> {
    let base = build_config(&a.flags)?;
    let all = load_for(&base, &a.data, a.flags.stride)?;
    let (train, test) = match (&a.test_data, a.test_subjects.is_empty()) {
        (Some(dir), _) => (all, load_for(&base, dir, a.flags.stride)?),
        (None, false) => {
            let keep: Vec<u32> = all
                .subject_ids()
                .iter()
                .copied()
                .filter(|s| !a.test_subjects.contains(s))
                .collect();
            (all.filter_subjects(&keep)?, all.filter_subjects(&a.test_subjects)?)
        }
        (None, true) => (all.clone(), all),
    };
    let variants = if a.variants.is_empty() {
        standard_variants()
    } else {
        let names: Vec<&str> = a.variants.iter().map(String::as_str).collect();
        select_variants(&names)?
    };
    let table = run_ablation(&train, &test, &base, &variants, &a.horizons, a.mae_mode.into())?;
    fs::write(&a.csv, table.to_csv()).map_err(|e| Error::io(&a.csv, e))?;
    for row in &table.rows {
        say(out, &format!("{:<24} mean={:.4}", row.variant, row.mean()));
    }
    Ok(())
}
