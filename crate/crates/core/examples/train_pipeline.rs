//! Stage-wise training through the same commands the `dmsk` binary runs:
//! corpus directory, tokenizer, text-to-motion backbone, music and pose
//! adapters, residual head. Writes everything under the directory given as
//! the first argument (default: a fresh temp directory).

use std::path::PathBuf;

use anyhow::Result;
use masked_motion::pipeline::commands::{self, sidecar, GenDataArgs, TrainArgs};
use masked_motion::pipeline::{Config, Stage};

fn main() -> Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("dmsk-train-{}", std::process::id())));
    let data = dir.join("data");
    let n = commands::gen_data(&GenDataArgs {
        out: data.clone(),
        seed: 7,
        genres: ["hiphop", "popping", "locking", "house"].map(String::from).to_vec(),
        clips: 8,
        seconds: 8.0,
        force: true,
    })?;
    println!("{n} clips in {}", data.display());

    let config = Config::parse(
        "seed=7\ndata.holdout=2\ntokenizer.steps=400\nmodel.width=64\nmodel.layers=2\nmodel.ffn=128\nt2m.steps=400\nmusic.steps=100\npose.steps=100\nresidual.steps=100",
    )?;
    let ckpt = dir.join("model.dmsk");
    for stage in Stage::ALL {
        let s = commands::train(&TrainArgs {
            stage,
            config: config.clone(),
            data: data.clone(),
            out: ckpt.clone(),
            resume: None,
            loss_csv: None,
        })?;
        println!("{stage:>9}: {} steps, last loss {:.4}, curve in {}", s.steps_run, s.last_loss.unwrap_or(f32::NAN), s.loss_csv.display());
    }

    // interrupting and resuming a stage gives the same checkpoint bytes
    let resumed = dir.join("resumed.dmsk");
    std::fs::copy(&ckpt, &resumed)?;
    let mut longer = config.clone();
    longer.residual.steps += 50;
    for (out, resume) in [(&ckpt, None), (&resumed, Some(resumed.clone()))] {
        commands::train(&TrainArgs {
            stage: Stage::Residual,
            config: longer.clone(),
            data: data.clone(),
            out: out.clone(),
            resume,
            loss_csv: Some(sidecar(out, "extra.csv")),
        })?;
    }
    println!("resumed run matches a straight run: {}", std::fs::read(&ckpt)? == std::fs::read(&resumed)?);
    Ok(())
}
