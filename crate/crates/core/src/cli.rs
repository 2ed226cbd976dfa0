//! Command-line interface. [`run`] returns the process exit code: 0 on
//! success, 1 for usage errors, 2 for data errors and 3 for numeric
//! failures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    load_sessions, normalize_dataset, read_sessions, session_to_samples, synth_sessions, write_sessions,
    DataError, LandmarkFrame, PersonRecord, Session, StatsWindow, N_LANDMARKS, OBSERVED_LEN,
};
use crate::eval::{evaluate, EvalError};
use crate::kernel::gradcheck::{primitive_suite, GradCheck};
use crate::model::{forecast_batch, model_gradient_suite, ModelError};
use crate::train::{load_checkpoint, RunOptions, TrainConfig, TrainError, TrainState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Data(d) => d.into(),
            ModelError::Input(m) => CliError::Data(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::NonFinite { .. } | TrainError::Kernel(_) => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dyadcast", version, about = "Forecast dyadic non-verbal behaviour from 2-D landmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic coupled dyads as a session file.
    GenSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0.8)]
        coupling: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a session file.
    Train(TrainArgs),
    /// Forecast the last 50 frames of every person in a session file.
    Forecast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write predicted trajectories as CSV.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Score a checkpoint against the constant-pose baseline.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report path prefix; writes `<prefix>.txt` and `<prefix>.json`.
        #[arg(long, default_value = "report")]
        report: PathBuf,
    },
    /// Finite-difference check of every primitive and both losses.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Session file; overrides `data` from the config file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// TOML file with `TrainConfig` fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Width of every hidden layer.
    #[arg(long)]
    hidden: Option<usize>,
    /// Context vector length.
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    non_saturating: bool,
    /// Sequential execution and zeroed timings for bit-identical histories.
    #[arg(long)]
    deterministic: bool,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    quiet: bool,
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge_toml(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge_toml(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn build_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = match args.preset {
        Preset::Full => TrainConfig::default(),
        Preset::Desk => TrainConfig::desk(),
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let file: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut base = toml::Table::try_from(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
        merge_toml(&mut base, file);
        cfg = base
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut cfg.epochs, args.epochs);
    set(&mut cfg.batch_size, args.batch_size);
    set(&mut cfg.warmup_epochs, args.warmup_epochs);
    set(&mut cfg.checkpoint_every, args.checkpoint_every);
    set(&mut cfg.model.context_dim, args.context);
    if let Some(h) = args.hidden {
        cfg.model.encoder_hidden = h;
        cfg.model.generator_hidden = h;
        cfg.model.discriminator_hidden = h;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.clip_norm {
        cfg.clip_norm = v;
    }
    if args.data.is_some() {
        cfg.data = args.data.clone();
    }
    cfg.non_saturating |= args.non_saturating;
    cfg.deterministic |= args.deterministic;
    if cfg.warmup_epochs > cfg.epochs && args.warmup_epochs.is_none() {
        cfg.warmup_epochs = cfg.epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen_synthetic(seed: u64, count: usize, coupling: f64, out: &Path) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&coupling) {
        return Err(CliError::Usage(format!("coupling must be in [0, 1], got {coupling}")));
    }
    write_sessions(out, &synth_sessions(seed, count, coupling))?;
    eprintln!("wrote {count} sessions to {}", out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut state = match &args.resume {
        Some(path) => {
            let mut s = TrainState::from_checkpoint(load_checkpoint(path)?);
            if let Some(e) = args.epochs {
                s.config.epochs = e;
            }
            if args.data.is_some() {
                s.config.data = args.data.clone();
            }
            s.config.validate()?;
            s
        }
        None => TrainState::new(build_config(args)?)?,
    };
    let data = state
        .config
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("no training data: pass --data or set `data` in the config".into()))?;
    let samples = normalize_dataset(&load_sessions(&data)?, StatsWindow::Full)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Data(format!("{}: {e}", args.out_dir.display())))?;
    let opts = RunOptions {
        checkpoint: Some(args.out_dir.join("checkpoint.ckpt")),
        history: Some(args.out_dir.join("history.csv")),
        progress: !args.quiet,
    };
    let started = Instant::now();
    state.train(&samples, &opts)?;
    eprintln!(
        "trained {} epochs on {} samples in {:.1}s; wrote {}",
        state.epoch(),
        samples.len(),
        started.elapsed().as_secs_f64(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_forecast(data: &Path, checkpoint: &Path, out: &Path, trajectories: Option<&Path>) -> Result<(), CliError> {
    let params = load_checkpoint(checkpoint)?.params;
    let sessions = read_sessions(data)?;
    let mut results = Vec::with_capacity(sessions.len());
    let mut csv = String::from("session_id,person,frame,landmark,x,y\n");
    for (i, session) in sessions.iter().enumerate() {
        let samples = normalize_dataset(&session_to_samples(session, i)?, StatsWindow::Observed)?;
        let pairs: Vec<(&[LandmarkFrame], &[LandmarkFrame])> =
            samples.iter().map(|s| (s.target.observed(), s.partner.observed())).collect();
        let predicted = forecast_batch(&pairs, &params)?;
        let mut persons = Vec::with_capacity(2);
        for ((sample, frames), person) in samples.iter().zip(predicted).zip(&session.persons) {
            let stats = sample.target.stats().ok_or_else(|| CliError::Data("missing statistics".into()))?;
            let frames: Vec<LandmarkFrame> = frames.iter().map(|f| stats.denormalize_frame(f)).collect();
            for (t, f) in frames.iter().enumerate() {
                for (j, p) in f.points().iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{},{},{},{}", session.session_id, person.id, OBSERVED_LEN + t, j, p[0], p[1]);
                }
            }
            persons.push(PersonRecord::from_frames(person.id.clone(), &frames, true));
        }
        results.push(Session {
            session_id: session.session_id.clone(),
            fps: session.fps,
            persons,
        });
    }
    write_sessions(out, &results)?;
    if let Some(path) = trajectories {
        fs::write(path, csv).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    eprintln!(
        "forecast {} sessions ({} landmarks x 50 frames per person) to {}",
        results.len(),
        N_LANDMARKS,
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(data: &Path, checkpoint: &Path, report: &Path) -> Result<(), CliError> {
    let params = load_checkpoint(checkpoint)?.params;
    let samples = normalize_dataset(&load_sessions(data)?, StatsWindow::Observed)?;
    let r = evaluate(&params, &samples)?;
    let text = r.to_text();
    let write = |ext: &str, body: &str| {
        let path = report.with_extension(ext);
        fs::write(&path, body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    };
    write("txt", &text)?;
    write("json", &r.to_json())?;
    print!("{}", text.lines().take(5).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}

/// Primitive and model gradient checks for `seed`.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheck>, CliError> {
    let mut checks = primitive_suite(seed).map_err(|e| CliError::Numeric(e.to_string()))?;
    checks.extend(model_gradient_suite(seed)?);
    Ok(checks)
}

fn cmd_gradcheck(seed: u64) -> Result<(), CliError> {
    let started = Instant::now();
    let checks = gradcheck_suite(seed)?;
    let mut worst = 0.0f64;
    for c in &checks {
        println!("{:<24} {:>6} entries  max rel error {:.3e}", c.name, c.entries, c.max_rel_error);
        worst = worst.max(c.max_rel_error);
    }
    println!("max relative error: {worst:.3e} ({:.1}s)", started.elapsed().as_secs_f64());
    if worst.is_nan() || worst >= GRADCHECK_TOLERANCE {
        return Err(CliError::Numeric(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::GenSynthetic {
            seed,
            count,
            coupling,
            out,
        } => cmd_gen_synthetic(*seed, *count, *coupling, out),
        Command::Train(args) => cmd_train(args),
        Command::Forecast {
            data,
            checkpoint,
            out,
            trajectories,
        } => cmd_forecast(data, checkpoint, out, trajectories.as_deref()),
        Command::Evaluate {
            data,
            checkpoint,
            report,
        } => cmd_evaluate(data, checkpoint, report),
        Command::Gradcheck { seed } => cmd_gradcheck(*seed),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
