use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use siren_core::config::RunConfig;
use siren_core::pipeline::{self, INFER_HEADER};
use siren_core::Error;

/// Siren detection and localization pipeline.
///
/// Exit status: 0 on success, 1 for invalid input or configuration, 2 for
/// runtime failures (i/o, malformed files, training divergence).
#[derive(Parser, Debug)]
#[command(name = "siren", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize every configured session into <out>/sessions.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Added to the seed_start of every scene batch.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Window, balance and split the sessions into <out>/labels.
    Label {
        #[command(flatten)]
        common: Common,
        /// Overrides the split and balancing seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and write <out>/model/best.ckpt and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides the model init and shuffling seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the test split into <out>/eval.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/model/best.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Stream a recording through a checkpoint, one record per tick:
    /// `t p_siren theta_deg distance_m latency_ms`.
    Infer {
        /// Run configuration (TOML); supplies feature and window settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Seconds between ticks; defaults to the label stride.
        #[arg(long)]
        stride: Option<f64>,
        /// Decision threshold for the detection count on stderr.
        #[arg(long)]
        threshold: Option<f64>,
        /// Write records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// 8-channel 48 kHz WAV file.
        wav: PathBuf,
    },
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn threshold_arg(t: Option<f64>, default: f64) -> Result<f64, Error> {
    let t = t.unwrap_or(default);
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("threshold {t} outside [0, 1]")));
    }
    Ok(t)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { common, seed } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.simulate.batches.iter_mut().for_each(|b| b.seed_start += s);
            }
            println!("{}", pipeline::simulate(&cfg)?);
        }
        Command::Label { common, seed } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.label.split_seed = s;
                cfg.label.balance.seed = s;
            }
            println!("{}", pipeline::label(&cfg)?);
        }
        Command::Train { common, checkpoint, seed } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
                cfg.model.seed = s;
            }
            println!("{}", pipeline::train(&cfg, checkpoint.as_deref())?);
        }
        Command::Eval {
            common,
            checkpoint,
            threshold,
        } => {
            let cfg = load(&common)?;
            let threshold = threshold_arg(threshold, cfg.eval.threshold)?;
            let ckpt = checkpoint.unwrap_or_else(|| pipeline::model_dir(&cfg).join(pipeline::CHECKPOINT_FILE));
            println!("{}", pipeline::eval(&cfg, &ckpt, threshold)?);
        }
        Command::Infer {
            config,
            checkpoint,
            stride,
            threshold,
            out,
            wav,
        } => {
            let cfg = RunConfig::load(&config)?;
            let threshold = threshold_arg(threshold, cfg.eval.threshold)?;
            let mut window = cfg.label.window;
            if let Some(s) = stride {
                window.stride = s;
            }
            infer(&cfg, &checkpoint, &wav, &window, threshold, out.as_deref())?;
        }
    }
    Ok(())
}

fn infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    wav: &Path,
    window: &siren_core::autolabel::WindowParams,
    threshold: f64,
    out: Option<&Path>,
) -> Result<(), Error> {
    let (sink, sink_path): (Box<dyn Write>, PathBuf) = match out {
        Some(p) => (
            Box::new(File::create(p).map_err(|e| io_error(p, e))?),
            p.to_path_buf(),
        ),
        None => (Box::new(io::stdout().lock()), PathBuf::from("<stdout>")),
    };
    let mut sink = BufWriter::new(sink);
    writeln!(sink, "{INFER_HEADER}").map_err(|e| io_error(&sink_path, e))?;
    let mut detections = 0usize;
    let ticks = pipeline::infer_file(checkpoint, wav, cfg.features, window, |r| {
        detections += usize::from(r.p_siren >= threshold);
        writeln!(sink, "{r}").map_err(|e| io_error(&sink_path, e))
    })?;
    sink.flush().map_err(|e| io_error(&sink_path, e))?;
    eprintln!("{ticks} ticks, {detections} detections at threshold {threshold}");
    Ok(())
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
