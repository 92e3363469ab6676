//! `key=value` run configuration. Every key has a default, unknown keys are
//! rejected, and the effective configuration is echoed as `# key=value`
//! lines at the top of every text artifact.

use std::path::Path;

use crate::adapters::{AdapterTrainConfig, KinematicWeights, ResidualTrainConfig};
use crate::backbone::{MaskedConfig, T2mTrainConfig};
use crate::error::{Error, Result};
use crate::sampler::{CfgMode, GuidanceWeights, IttoConfig, IttoRule};
use crate::tokenizer::{TokenizerConfig, TokenizerTrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Root seed of every training stage.
    pub seed: u64,
    /// Clips per genre held out from training.
    pub holdout: usize,
    /// Number of 1-frame offsets used to build token examples per clip.
    pub offsets: usize,
    pub tokenizer: TokenizerConfig,
    pub tokenizer_train: TokenizerTrainConfig,
    pub model: MaskedConfig,
    pub t2m: T2mTrainConfig,
    pub music: AdapterTrainConfig,
    pub pose: AdapterTrainConfig,
    pub loss: KinematicWeights,
    pub residual: ResidualTrainConfig,
    pub s_total: usize,
    pub temperature: f32,
    pub guidance: GuidanceWeights,
    pub cfg_mode: CfgMode,
    pub itto: IttoConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            holdout: 4,
            offsets: 4,
            tokenizer: TokenizerConfig::default(),
            tokenizer_train: TokenizerTrainConfig::default(),
            model: MaskedConfig::default(),
            t2m: T2mTrainConfig::default(),
            music: AdapterTrainConfig::default(),
            pose: AdapterTrainConfig::default(),
            loss: KinematicWeights::default(),
            residual: ResidualTrainConfig::default(),
            s_total: 18,
            temperature: 1.0,
            guidance: GuidanceWeights::default(),
            cfg_mode: CfgMode::Delta,
            itto: IttoConfig::default(),
        }
    }
}

enum Field<'a> {
    U64(&'a mut u64),
    Usize(&'a mut usize),
    F32(&'a mut f32),
    F64(&'a mut f64),
    Mode(&'a mut CfgMode),
    Rule(&'a mut IttoRule),
    Bool(&'a mut bool),
}

impl Field<'_> {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let bad = || Error::Config(format!("cannot parse `{v}` for {key}"));
        match self {
            Field::U64(x) => **x = v.parse().map_err(|_| bad())?,
            Field::Usize(x) => **x = v.parse().map_err(|_| bad())?,
            Field::F32(x) => **x = v.parse().map_err(|_| bad())?,
            Field::F64(x) => **x = v.parse().map_err(|_| bad())?,
            Field::Mode(x) => {
                **x = match v {
                    "delta" => CfgMode::Delta,
                    "linear" => CfgMode::Linear,
                    _ => return Err(bad()),
                }
            }
            Field::Rule(x) => {
                **x = match v {
                    "gradient" => IttoRule::Gradient,
                    "adam" => IttoRule::Adam,
                    _ => return Err(bad()),
                }
            }
            Field::Bool(x) => **x = v.parse().map_err(|_| bad())?,
        }
        Ok(())
    }

    fn render(&self) -> String {
        match self {
            Field::U64(x) => x.to_string(),
            Field::Usize(x) => x.to_string(),
            Field::F32(x) => x.to_string(),
            Field::F64(x) => x.to_string(),
            Field::Mode(CfgMode::Delta) => "delta".into(),
            Field::Mode(CfgMode::Linear) => "linear".into(),
            Field::Rule(IttoRule::Gradient) => "gradient".into(),
            Field::Rule(IttoRule::Adam) => "adam".into(),
            Field::Bool(x) => x.to_string(),
        }
    }
}

macro_rules! adapter_fields {
    ($v:ident, $a:expr, $p:literal) => {
        $v.extend([
            (concat!($p, ".steps"), Field::U64(&mut $a.steps)),
            (concat!($p, ".batch"), Field::Usize(&mut $a.batch)),
            (concat!($p, ".lr"), Field::F32(&mut $a.lr)),
            (concat!($p, ".warmup"), Field::U64(&mut $a.warmup)),
            (concat!($p, ".genre_drop"), Field::F64(&mut $a.genre_drop)),
            (concat!($p, ".lambda_unmask"), Field::F32(&mut $a.lambda_unmask)),
            (concat!($p, ".temperature"), Field::F32(&mut $a.temperature)),
        ])
    };
}

impl Config {
    fn fields(&mut self) -> Vec<(&'static str, Field<'_>)> {
        let mut v = vec![
            ("seed", Field::U64(&mut self.seed)),
            ("data.holdout", Field::Usize(&mut self.holdout)),
            ("data.offsets", Field::Usize(&mut self.offsets)),
            ("tokenizer.hidden", Field::Usize(&mut self.tokenizer.hidden)),
            ("tokenizer.code_dim", Field::Usize(&mut self.tokenizer.code_dim)),
            ("tokenizer.codebook_size", Field::Usize(&mut self.tokenizer.codebook_size)),
            ("tokenizer.layers", Field::Usize(&mut self.tokenizer.layers)),
            ("tokenizer.beta", Field::F32(&mut self.tokenizer.beta)),
            ("tokenizer.steps", Field::U64(&mut self.tokenizer_train.steps)),
            ("tokenizer.batch", Field::Usize(&mut self.tokenizer_train.batch)),
            ("tokenizer.window", Field::Usize(&mut self.tokenizer_train.window)),
            ("tokenizer.lr", Field::F32(&mut self.tokenizer_train.lr)),
            ("tokenizer.warmup", Field::U64(&mut self.tokenizer_train.warmup)),
            ("tokenizer.reset_every", Field::U64(&mut self.tokenizer_train.reset_every)),
            ("model.width", Field::Usize(&mut self.model.width)),
            ("model.layers", Field::Usize(&mut self.model.layers)),
            ("model.heads", Field::Usize(&mut self.model.heads)),
            ("model.ffn", Field::Usize(&mut self.model.ffn)),
            ("model.max_len", Field::Usize(&mut self.model.max_len)),
            ("t2m.steps", Field::U64(&mut self.t2m.steps)),
            ("t2m.batch", Field::Usize(&mut self.t2m.batch)),
            ("t2m.lr", Field::F32(&mut self.t2m.lr)),
            ("t2m.warmup", Field::U64(&mut self.t2m.warmup)),
            ("t2m.cond_drop", Field::F64(&mut self.t2m.cond_drop)),
            ("t2m.lambda_unmask", Field::F32(&mut self.t2m.lambda_unmask)),
        ];
        adapter_fields!(v, self.music, "music");
        adapter_fields!(v, self.pose, "pose");
        v.extend([
            ("loss.lambda_pos", Field::F32(&mut self.loss.pos)),
            ("loss.lambda_vel", Field::F32(&mut self.loss.vel)),
            ("loss.lambda_acc", Field::F32(&mut self.loss.acc)),
            ("loss.lambda_foot", Field::F32(&mut self.loss.foot)),
            ("loss.lambda_d", Field::F32(&mut self.loss.pose)),
            ("residual.steps", Field::U64(&mut self.residual.steps)),
            ("residual.batch", Field::Usize(&mut self.residual.batch)),
            ("residual.lr", Field::F32(&mut self.residual.lr)),
            ("residual.warmup", Field::U64(&mut self.residual.warmup)),
            ("residual.genre_drop", Field::F64(&mut self.residual.genre_drop)),
            ("residual.music_drop", Field::F64(&mut self.residual.music_drop)),
            ("sample.s_total", Field::Usize(&mut self.s_total)),
            ("sample.temperature", Field::F32(&mut self.temperature)),
            ("sample.cfg_mode", Field::Mode(&mut self.cfg_mode)),
            ("sample.w_uncond", Field::F32(&mut self.guidance.uncond)),
            ("sample.w_text", Field::F32(&mut self.guidance.text)),
            ("sample.w_music", Field::F32(&mut self.guidance.music)),
            ("sample.w_pose", Field::F32(&mut self.guidance.pose)),
            ("itto.lr", Field::F32(&mut self.itto.lr)),
            ("itto.iters", Field::Usize(&mut self.itto.iters)),
            ("itto.rule", Field::Rule(&mut self.itto.rule)),
            ("itto.quantized", Field::Bool(&mut self.itto.quantized)),
        ]);
        v
    }

    /// Every key in canonical order.
    pub fn keys() -> Vec<&'static str> {
        Self::default().fields().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut fields = self.fields();
        let (_, f) = fields
            .iter_mut()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        f.set(key, value)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let mut c = self.clone();
        let fields = c.fields();
        fields.iter().find(|(k, _)| *k == key).map(|(_, f)| f.render())
    }

    /// Parse `key=value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; a key may appear at most once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            c.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                e => e,
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `key=value` lines for every key.
    pub fn to_text(&self) -> String {
        let mut c = self.clone();
        c.fields().iter().map(|(k, f)| format!("{k}={}\n", f.render())).collect()
    }

    /// The configuration as `# key=value` header lines.
    pub fn header(&self) -> String {
        self.to_text().lines().map(|l| format!("# {l}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tokenizer.hidden", self.tokenizer.hidden),
            ("tokenizer.code_dim", self.tokenizer.code_dim),
            ("tokenizer.codebook_size", self.tokenizer.codebook_size),
            ("tokenizer.layers", self.tokenizer.layers),
            ("model.width", self.model.width),
            ("model.layers", self.model.layers),
            ("model.heads", self.model.heads),
            ("model.ffn", self.model.ffn),
            ("model.max_len", self.model.max_len),
            ("sample.s_total", self.s_total),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.tokenizer.layers > 2 {
            return Err(Error::Config("tokenizer.layers must be 1 or 2; the residual head predicts one extra layer".into()));
        }
        if self.model.width % self.model.heads != 0 {
            return Err(Error::Config("model.width must be divisible by model.heads".into()));
        }
        let probs = [
            ("t2m.cond_drop", self.t2m.cond_drop),
            ("music.genre_drop", self.music.genre_drop),
            ("pose.genre_drop", self.pose.genre_drop),
            ("residual.genre_drop", self.residual.genre_drop),
            ("residual.music_drop", self.residual.music_drop),
        ];
        if let Some((k, _)) = probs.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("{k} must lie in [0, 1]")));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("sample.temperature must be positive".into()));
        }
        if !(self.itto.lr > 0.0) {
            return Err(Error::Config("itto.lr must be positive".into()));
        }
        if self.offsets == 0 {
            return Err(Error::Config("data.offsets must be positive".into()));
        }
        self.loss.validate()
    }

    pub fn masked_config(&self) -> MaskedConfig {
        MaskedConfig {
            codebook_size: self.tokenizer.codebook_size,
            ..self.model
        }
    }

    pub fn tokenizer_train(&self) -> TokenizerTrainConfig {
        TokenizerTrainConfig {
            seed: self.seed,
            ..self.tokenizer_train
        }
    }

    pub fn t2m_train(&self) -> T2mTrainConfig {
        T2mTrainConfig { seed: self.seed, ..self.t2m }
    }

    pub fn music_train(&self) -> AdapterTrainConfig {
        AdapterTrainConfig {
            seed: self.seed,
            weights: self.loss,
            ..self.music
        }
    }

    pub fn pose_train(&self) -> AdapterTrainConfig {
        AdapterTrainConfig {
            seed: self.seed,
            weights: self.loss,
            ..self.pose
        }
    }

    pub fn residual_train(&self) -> ResidualTrainConfig {
        ResidualTrainConfig {
            seed: self.seed,
            ..self.residual
        }
    }
}
