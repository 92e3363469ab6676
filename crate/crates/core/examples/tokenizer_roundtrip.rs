//! Train the residual-quantized motion tokenizer on a small corpus and
//! measure the round trip on clips it has not seen.

use masked_motion::error::Result;
use masked_motion::motion::{synth_corpus, CorpusSpec, MotionSequence, Skeleton, FPS};
use masked_motion::tokenizer::{perplexity, round_trip_mpjpe, TokenizerConfig, TokenizerTrainConfig, TokenizerTrainer};

fn main() -> Result<()> {
    let skel = Skeleton::desk();
    let spec = CorpusSpec {
        seed: 3,
        genres: ["hiphop", "popping", "locking", "house"].map(String::from).to_vec(),
        clips_per_genre: 6,
        clip_seconds: 8.0,
        fps: FPS,
    };
    let corpus = synth_corpus(&spec, &skel)?;
    let (train, test) = corpus.split(1);
    let train: Vec<&MotionSequence> = train.iter().map(|c| &c.motion).collect();
    let test: Vec<&MotionSequence> = test.iter().map(|c| &c.motion).collect();

    let model = TokenizerConfig {
        feature_dim: skel.feature_dim(),
        ..TokenizerConfig::default()
    };
    let cfg = TokenizerTrainConfig {
        steps: 800,
        ..TokenizerTrainConfig::default()
    };
    let mut t = TokenizerTrainer::new(model, cfg, &train)?;
    while t.step < cfg.steps {
        // usage counters are cleared at every dead-code reset, so read them first
        let ppl: Vec<String> = t.usage.iter().map(|u| format!("{:.1}", perplexity(u))).collect();
        let loss = t.step()?;
        if t.step % 200 == 0 {
            println!("step {:>4} loss {loss:.4} codebook perplexity {}", t.step, ppl.join("/"));
        }
    }
    let tok = &t.model;
    println!("held-out MPJPE {:.4} m over {} clips", round_trip_mpjpe(tok, &test, &skel)?, test.len());

    let grid = tok.encode(test[0])?;
    println!(
        "{} frames -> {} tokens x {} layers; first layer-0 ids {:?}",
        test[0].frames(),
        grid.len(),
        grid.layers(),
        &grid.layer(0)[..8]
    );
    let back = tok.decode(&grid, FPS)?;
    println!("decoded back to {} frames of width {}", back.frames(), back.dim());
    Ok(())
}
