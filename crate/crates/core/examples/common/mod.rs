//! Setup shared by the examples: a trained checkpoint, either the one given
//! as the first argument or a small one trained once and cached in the
//! system temp directory.

#![allow(dead_code)]

use std::path::PathBuf;

use masked_motion::error::Result;
use masked_motion::motion::{Corpus, Skeleton};
use masked_motion::pipeline::commands::{self, GenDataArgs, TrainArgs};
use masked_motion::pipeline::data::read_corpus;
use masked_motion::pipeline::sections::models_from;
use masked_motion::pipeline::{Checkpoint, Config, Stage};
use masked_motion::sampler::Models;

/// Short schedules on a narrower model; enough to see every capability work.
pub const QUICK: &str = "
seed=7
data.holdout=2
data.offsets=2
tokenizer.steps=600
model.width=64
model.layers=2
model.ffn=128
t2m.steps=600
music.steps=150
pose.steps=150
residual.steps=200
";

pub struct Setup {
    pub config: Config,
    pub corpus: Corpus,
    pub models: Models,
    pub checkpoint: PathBuf,
    pub data: PathBuf,
}

pub fn setup() -> Result<Setup> {
    let dir = std::env::temp_dir().join("dmsk-examples");
    let data = dir.join("data");
    let (checkpoint, config) = match std::env::args().nth(1) {
        Some(p) => (PathBuf::from(p), Config::default()),
        None => (dir.join("quick.dmsk"), Config::parse(QUICK)?),
    };
    if !data.join("manifest.csv").exists() {
        commands::gen_data(&GenDataArgs {
            out: data.clone(),
            seed: 7,
            genres: ["hiphop", "popping", "locking", "house"].map(String::from).to_vec(),
            clips: 8,
            seconds: 8.0,
            force: true,
        })?;
    }
    let ready = checkpoint.exists() && Checkpoint::load(&checkpoint)?.section(Stage::Residual.section()).is_some();
    if !ready {
        println!("training a quick checkpoint at {} (cached for later runs)", checkpoint.display());
        for stage in Stage::ALL {
            let s = commands::train(&TrainArgs {
                stage,
                config: config.clone(),
                data: data.clone(),
                out: checkpoint.clone(),
                resume: None,
                loss_csv: None,
            })?;
            println!("  {stage}: {} steps, last loss {:.4}", s.steps_run, s.last_loss.unwrap_or(f32::NAN));
        }
    }
    let models = models_from(&Checkpoint::load(&checkpoint)?, Skeleton::desk())?;
    Ok(Setup {
        config,
        corpus: read_corpus(&data)?,
        models,
        checkpoint,
        data,
    })
}
