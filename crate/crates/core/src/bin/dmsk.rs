use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use masked_motion::error::Error;
use masked_motion::pipeline::commands::{self, EditMode};
use masked_motion::pipeline::{Config, Stage};

#[derive(Parser)]
#[command(name = "dmsk", version, about = "Masked generative dance motion on a desk budget")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a procedural corpus directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "hiphop,popping,locking,house")]
        genres: Vec<String>,
        #[arg(long, default_value_t = 32)]
        clips: usize,
        #[arg(long, default_value_t = 8.0)]
        seconds: f32,
        #[arg(long)]
        force: bool,
    },
    /// Train one stage into a checkpoint.
    Train {
        /// tokenizer, t2m, music, pose or residual.
        stage: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Generate a motion from genre and/or music.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        beats: Option<PathBuf>,
        #[arg(long)]
        genre: Option<String>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        unconditional: bool,
    },
    /// Regenerate body parts (spatial) or time spans (temporal) of a motion.
    Edit {
        #[arg(long)]
        mode: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Frame ranges to keep, `a..b,c..d`, or `all`.
        #[arg(long)]
        keep_ranges: Option<String>,
        #[arg(long)]
        genre: Option<String>,
        #[arg(long)]
        beats: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a long dance from a segment file.
    Stitch {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long, default_value_t = 4)]
        overlap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the metric report for a directory of generated motions.
    Eval {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        beats: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn config(path: &Option<PathBuf>) -> masked_motion::error::Result<Config> {
    path.as_ref().map_or_else(|| Ok(Config::default()), Config::load)
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::GenData {
            out,
            seed,
            genres,
            clips,
            seconds,
            force,
        } => {
            let n = commands::gen_data(&commands::GenDataArgs {
                out: out.clone(),
                seed,
                genres,
                clips,
                seconds,
                force,
            })?;
            println!("wrote {n} clips to {}", out.display());
        }
        Cmd::Train {
            stage,
            config: cfg,
            data,
            out,
            resume,
            loss_csv,
        } => {
            let stage: Stage = stage.parse()?;
            let s = commands::train(&commands::TrainArgs {
                stage,
                config: config(&cfg)?,
                data,
                out: out.clone(),
                resume,
                loss_csv,
            })?;
            println!(
                "{stage}: {} steps, last loss {}, checkpoint {}",
                s.steps_run,
                s.last_loss.map_or("n/a".into(), |l| format!("{l:.4}")),
                out.display()
            );
        }
        Cmd::Generate {
            checkpoint,
            config: cfg,
            beats,
            genre,
            frames,
            seed,
            out,
            trace,
            unconditional,
        } => {
            let log = commands::generate(&commands::GenerateArgs {
                checkpoint,
                config: config(&cfg)?,
                beats,
                genre,
                frames,
                seed,
                out: out.clone(),
                trace,
                unconditional,
            })?;
            if let Some(w) = log.value("warning") {
                eprintln!("warning: {w}");
            }
            println!("wrote {} frames to {}", log.value("frames").unwrap_or("?"), out.display());
        }
        Cmd::Edit {
            mode,
            checkpoint,
            config: cfg,
            motion,
            constraints,
            keep_ranges,
            genre,
            beats,
            seed,
            out,
        } => {
            let mode: EditMode = mode.parse()?;
            let log = commands::edit(&commands::EditArgs {
                checkpoint,
                config: config(&cfg)?,
                mode,
                motion,
                constraints,
                keep_ranges,
                genre,
                beats,
                seed,
                out: out.clone(),
            })?;
            for l in &log.lines {
                println!("{l}");
            }
        }
        Cmd::Stitch {
            checkpoint,
            config: cfg,
            segments,
            overlap,
            seed,
            out,
        } => {
            let log = commands::stitch(&commands::StitchArgs {
                checkpoint,
                config: config(&cfg)?,
                segments,
                overlap,
                seed,
                out: out.clone(),
            })?;
            println!("wrote {} frames to {}", log.value("frames").unwrap_or("?"), out.display());
        }
        Cmd::Eval {
            gen,
            reference,
            beats,
            report,
            config: cfg,
        } => {
            let r = commands::eval(&commands::EvalArgs {
                gen,
                reference,
                beats,
                report: report.clone(),
                config: config(&cfg)?,
            })?;
            print!("{}", r.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("DMSK_THREADS") {
        let built = n
            .parse::<usize>()
            .context("DMSK_THREADS must be a positive integer")
            .and_then(|n| Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?));
        if let Err(e) = built {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
