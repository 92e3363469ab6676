use rand::Rng;

use super::{
    attach_forward, kinematic_terms, music_condition, pose_condition, pose_discrepancy, sampled_positions, AdapterKind,
    AdapterTower, Attached, KinematicWeights,
};
use crate::backbone::{t2m_loss, training_mask, MaskedTransformer, TokenBatch, TokenExample};
use crate::error::{Error, Result};
use crate::motion::{PoseConstraint, Skeleton, MUSIC_DIM};
use crate::seed::{rng_for, tag};
use crate::tensor::{AdamW, AdamWConfig, Tape, WarmupSchedule};
use crate::tokenizer::Tokenizer;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdapterTrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f32,
    pub warmup: u64,
    /// Probability of replacing the genre with the null row.
    pub genre_drop: f64,
    pub lambda_unmask: f32,
    pub temperature: f32,
    pub weights: KinematicWeights,
    pub seed: u64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        Self {
            steps: 800,
            batch: 8,
            lr: 5e-4,
            warmup: 100,
            genre_drop: 0.5,
            lambda_unmask: 1.0,
            temperature: 1.0,
            weights: KinematicWeights::default(),
            seed: 0,
        }
    }
}

/// Trains one adapter tower against a frozen backbone and tokenizer.
pub struct AdapterTrainer<'m> {
    backbone: &'m MaskedTransformer,
    tokenizer: &'m Tokenizer,
    skel: Skeleton,
    pub adapter: AdapterTower,
    pub opt: AdamW,
    pub step: u64,
    pub config: AdapterTrainConfig,
    data: Vec<TokenExample>,
}

impl<'m> AdapterTrainer<'m> {
    pub fn new(
        adapter: AdapterTower,
        backbone: &'m MaskedTransformer,
        tokenizer: &'m Tokenizer,
        skel: Skeleton,
        config: AdapterTrainConfig,
        data: Vec<TokenExample>,
    ) -> Result<Self> {
        config.weights.validate()?;
        let first = data.first().ok_or(Error::EmptySequence)?;
        if data.iter().any(|e| e.len() != first.len()) {
            return Err(Error::Config("adapter training needs equal-length examples".into()));
        }
        if config.batch == 0 {
            return Err(Error::Config("adapter batch must be positive".into()));
        }
        if tokenizer.config.codebook_size != backbone.config.codebook_size {
            return Err(Error::Config("tokenizer and backbone disagree on codebook size".into()));
        }
        let opt = AdamW::new(
            AdamWConfig {
                schedule: WarmupSchedule {
                    peak_lr: config.lr,
                    warmup_steps: config.warmup,
                },
                ..Default::default()
            },
            &adapter.tower.params,
        );
        Ok(Self {
            backbone,
            tokenizer,
            skel,
            adapter,
            opt,
            step: 0,
            config,
            data,
        })
    }

    pub fn step(&mut self) -> Result<f32> {
        let c = self.config;
        let mc = self.backbone.config;
        let kind = self.adapter.kind;
        let mut rng = rng_for(c.seed, &[tag(kind.name()), self.step]);
        let n = self.data[0].len();
        let cd = self.adapter.cond_dim();
        let fps = self.data[0].motion.fps();
        let fk = self.skel.fk_spec(fps);
        let frames = self.data[0].motion.frames();
        let jn = self.skel.joints();

        let mut ids = Vec::with_capacity(c.batch * n);
        let mut targets = Vec::with_capacity(c.batch * n);
        let mut mask = Vec::with_capacity(c.batch * n);
        let mut genres = Vec::with_capacity(c.batch);
        let mut cond = Vec::with_capacity(c.batch * n * cd);
        let mut gt = Vec::with_capacity(c.batch * frames * jn * 3);
        let mut targets_p = Vec::new();
        let mut valid = Vec::new();
        let layers = self.tokenizer.config.layers;
        let mut residual = vec![Vec::new(); layers - 1];
        for _ in 0..c.batch {
            let ex = &self.data[rng.gen_range(0..self.data.len())];
            let t0 = ex.grid.layer(0);
            let (corrupt, m) = training_mask(t0, mc.mask_id(), &mut rng)?;
            ids.extend(corrupt);
            targets.extend_from_slice(t0);
            mask.extend(m);
            genres.push(if rng.gen_bool(c.genre_drop) { None } else { Some(ex.genre) });
            for (q, r) in residual.iter_mut().enumerate() {
                r.extend_from_slice(ex.grid.layer(q + 1));
            }
            match kind {
                AdapterKind::Music => {
                    debug_assert_eq!(ex.music.len(), frames * MUSIC_DIM);
                    cond.extend(music_condition(&ex.music, n));
                    let mut pos = vec![0.0; frames * jn * 3];
                    fk.apply(ex.motion.data(), frames, &mut pos);
                    gt.extend(pos);
                }
                AdapterKind::Pose => {
                    let pc = PoseConstraint::sample(&ex.motion, &self.skel, &mut rng)?;
                    cond.extend(pose_condition(&pc, self.skel.root_rest(), n));
                    targets_p.extend_from_slice(pc.positions());
                    valid.extend_from_slice(pc.valid());
                }
            }
        }
        let residual: Vec<usize> = residual.concat();
        let batch = TokenBatch {
            ids,
            batch: c.batch,
            len: n,
            genres,
        };
        let (loss, grads) = {
            let mut tape = Tape::new();
            let bp = tape.bind(&self.backbone.params, false);
            let ap = tape.bind(&self.adapter.tower.params, true);
            let tp = tape.bind(&self.tokenizer.params, false);
            let cv = tape.constant_from(&[c.batch, n, cd], cond)?;
            let logits = attach_forward(
                &mut tape,
                self.backbone,
                &bp,
                &[Attached {
                    tower: &self.adapter,
                    params: &ap,
                    cond: cv,
                }],
                &batch,
            )?;
            let mut loss = t2m_loss(&mut tape, logits, &targets, &mask, mc.pad_id(), c.lambda_unmask)?;
            let pred = sampled_positions(&mut tape, self.tokenizer, &tp, logits, &residual, c.temperature, fk, &mut rng)?;
            let w = c.weights;
            match kind {
                AdapterKind::Music => {
                    let terms = kinematic_terms(&mut tape, pred, &gt, fps as f32, self.skel.feet())?;
                    for (term, lam) in terms.into_iter().zip([w.pos, w.vel, w.acc, w.foot]) {
                        let t = tape.scale(term, lam);
                        loss = tape.add(loss, t)?;
                    }
                }
                AdapterKind::Pose => {
                    let d = pose_discrepancy(&mut tape, pred, &targets_p, &valid)?;
                    let d = tape.scale(d, w.pose);
                    loss = tape.add(loss, d)?;
                }
            }
            let lv = tape.scalar(loss);
            let mut g = tape.backward(loss)?;
            (lv, g.for_bound(&ap))
        };
        self.opt.step(&mut self.adapter.tower.params, &grads)?;
        self.step += 1;
        Ok(loss)
    }
}
