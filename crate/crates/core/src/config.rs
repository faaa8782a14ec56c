//! Run configuration: flat `key = value` text with every key optional.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{DataConfig, ShiftSpec};
use crate::error::{Error, Result};
use crate::losses::{DrwMode, LossConfig, PullKind};
use crate::model::{ModelArch, OptimConfig};
use crate::pairing::{PairingConfig, PrototypeMode};
use crate::translate::{EngineKind, EngineSpec};

pub const SEED_ENV: &str = "T2S_SEED";

/// Keys that only schedule the run; they are left out of the config hash so
/// a checkpoint can be resumed with a longer horizon.
const SCHEDULE_KEYS: [&str; 3] = ["iters", "eval_every", "ckpt_every"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Uda,
    Dg,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uda" => Some(Self::Uda),
            "dg" => Some(Self::Dg),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uda => "uda",
            Self::Dg => "dg",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    /// Train on mixed pseudo-labelled target images. Off gives source-only.
    pub self_train: bool,
    pub engine: EngineSpec,
    pub loss: LossConfig,
    pub eta: f64,
    pub alpha: f64,
    pub delta_p: f64,
    pub n_queries: usize,
    pub m_negatives: usize,
    pub prototype_mode: PrototypeMode,
    pub arch: ModelArch,
    pub height: usize,
    pub width: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub n_eval: usize,
    pub shift: ShiftSpec,
    pub data_seed: u64,
    pub iters: u64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub optim: OptimConfig,
    pub seed: u64,
    pub eval_every: u64,
    pub ckpt_every: u64,
    /// Colour-jitter strength on mixed student inputs; 0 disables.
    pub aug_jitter: f64,
    /// Gaussian blur sigma on mixed student inputs; 0 disables.
    pub aug_blur: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let classes = 4;
        Self {
            mode: Mode::Uda,
            self_train: true,
            engine: EngineSpec::default(),
            loss: LossConfig::default(),
            eta: 0.999,
            alpha: 0.5,
            delta_p: 0.968,
            n_queries: 16,
            m_negatives: 64,
            prototype_mode: PrototypeMode::MeanThenNormalize,
            arch: ModelArch::new(classes),
            height: 64,
            width: 64,
            n_source: 200,
            n_target: 200,
            n_eval: 50,
            shift: ShiftSpec::default(),
            data_seed: 1234,
            iters: 2000,
            batch_source: 2,
            batch_target: 2,
            optim: OptimConfig::default(),
            seed: 0,
            eval_every: 500,
            ckpt_every: 500,
            aug_jitter: 0.2,
            aug_blur: 0.0,
        }
    }
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_floats<const N: usize>(key: &str, v: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = v
        .split_whitespace()
        .map(|p| p.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::ConfigInvalid(format!("{key}: expected {N} numbers")))?;
    parts
        .try_into()
        .map_err(|_| Error::ConfigInvalid(format!("{key}: expected {N} numbers")))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::ConfigInvalid(format!("{key}: expected true/false, got {v:?}"))),
    }
}

impl RunConfig {
    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    /// Full-scale query and negative counts (128, 1024).
    pub fn with_full_counts(mut self) -> Self {
        self.n_queries = 128;
        self.m_negatives = 1024;
        self
    }

    /// Source-only ablation: no self-training, no pulling.
    pub fn source_only(mut self) -> Self {
        self.self_train = false;
        self.loss.lambda_pull = 0.0;
        self
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let drw = match &self.loss.drw_mode {
            DrwMode::Dynamic => "dynamic".to_string(),
            DrwMode::None => "none".to_string(),
            DrwMode::Fixed(w) => format!("fixed {}", floats(w)),
        };
        vec![
            ("mode", self.mode.as_str().into()),
            ("self_train", self.self_train.to_string()),
            ("engine", self.engine.kind.as_str().into()),
            ("beta_fda", self.engine.beta_fda.to_string()),
            ("jitter_strength", self.engine.jitter_strength.to_string()),
            ("blur_sigma", self.engine.blur_sigma.to_string()),
            ("tau", self.loss.tau.to_string()),
            ("lambda", self.loss.lambda_pull.to_string()),
            ("pull", self.loss.pull_kind.as_str().into()),
            ("beta_drw", self.loss.beta_drw.to_string()),
            ("drw", drw),
            ("eta", self.eta.to_string()),
            ("alpha", self.alpha.to_string()),
            ("delta_p", self.delta_p.to_string()),
            ("n_queries", self.n_queries.to_string()),
            ("m_negatives", self.m_negatives.to_string()),
            ("prototype", self.prototype_mode.as_str().into()),
            ("classes", self.arch.classes.to_string()),
            ("enc1", self.arch.enc1.to_string()),
            ("enc2", self.arch.enc2.to_string()),
            ("feat_dim", self.arch.feat_dim.to_string()),
            ("proj_hidden", self.arch.proj_hidden.to_string()),
            ("embed_dim", self.arch.embed_dim.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("n_source", self.n_source.to_string()),
            ("n_target", self.n_target.to_string()),
            ("n_eval", self.n_eval.to_string()),
            ("shift_scale", floats(&self.shift.scale)),
            ("shift_offset", floats(&self.shift.offset)),
            ("shift_noise", self.shift.noise_sigma.to_string()),
            ("shift_vignette", self.shift.vignette.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("iters", self.iters.to_string()),
            ("batch_source", self.batch_source.to_string()),
            ("batch_target", self.batch_target.to_string()),
            ("lr_encoder", self.optim.lr_encoder.to_string()),
            ("lr_head", self.optim.lr_head.to_string()),
            ("weight_decay", self.optim.weight_decay.to_string()),
            ("warmup", self.optim.warmup.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("ckpt_every", self.ckpt_every.to_string()),
            ("aug_jitter", self.aug_jitter.to_string()),
            ("aug_blur", self.aug_blur.to_string()),
        ]
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Stable digest of everything except the schedule keys.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (k, v) in self.pairs() {
            if !SCHEDULE_KEYS.contains(&k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mode" => self.mode = Mode::parse(v).ok_or_else(|| Error::ConfigInvalid(format!("mode {v:?}")))?,
            "self_train" => self.self_train = flag(key, v)?,
            "engine" => {
                self.engine.kind = EngineKind::parse(v).ok_or_else(|| Error::ConfigInvalid(format!("engine {v:?}")))?
            }
            "beta_fda" => self.engine.beta_fda = num(key, v)?,
            "jitter_strength" => self.engine.jitter_strength = num(key, v)?,
            "blur_sigma" => self.engine.blur_sigma = num(key, v)?,
            "tau" => self.loss.tau = num(key, v)?,
            "lambda" => self.loss.lambda_pull = num(key, v)?,
            "pull" => {
                self.loss.pull_kind = PullKind::parse(v).ok_or_else(|| Error::ConfigInvalid(format!("pull {v:?}")))?
            }
            "beta_drw" => self.loss.beta_drw = num(key, v)?,
            "drw" => {
                self.loss.drw_mode = match v.split_once(' ') {
                    Some(("fixed", rest)) => DrwMode::Fixed(
                        rest.split_whitespace()
                            .map(|p| num::<f64>(key, p))
                            .collect::<Result<_>>()?,
                    ),
                    _ if v == "dynamic" => DrwMode::Dynamic,
                    _ if v == "none" => DrwMode::None,
                    _ => return Err(Error::ConfigInvalid(format!("drw {v:?}"))),
                }
            }
            "eta" => self.eta = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "delta_p" => self.delta_p = num(key, v)?,
            "n_queries" => self.n_queries = num(key, v)?,
            "m_negatives" => self.m_negatives = num(key, v)?,
            "prototype" => {
                self.prototype_mode =
                    PrototypeMode::parse(v).ok_or_else(|| Error::ConfigInvalid(format!("prototype {v:?}")))?
            }
            "classes" => self.arch.classes = num(key, v)?,
            "enc1" => self.arch.enc1 = num(key, v)?,
            "enc2" => self.arch.enc2 = num(key, v)?,
            "feat_dim" => self.arch.feat_dim = num(key, v)?,
            "proj_hidden" => self.arch.proj_hidden = num(key, v)?,
            "embed_dim" => self.arch.embed_dim = num(key, v)?,
            "height" => self.height = num(key, v)?,
            "width" => self.width = num(key, v)?,
            "n_source" => self.n_source = num(key, v)?,
            "n_target" => self.n_target = num(key, v)?,
            "n_eval" => self.n_eval = num(key, v)?,
            "shift_scale" => self.shift.scale = parse_floats(key, v)?,
            "shift_offset" => self.shift.offset = parse_floats(key, v)?,
            "shift_noise" => self.shift.noise_sigma = num(key, v)?,
            "shift_vignette" => self.shift.vignette = num(key, v)?,
            "data_seed" => self.data_seed = num(key, v)?,
            "iters" => self.iters = num(key, v)?,
            "batch_source" => self.batch_source = num(key, v)?,
            "batch_target" => self.batch_target = num(key, v)?,
            "lr_encoder" => self.optim.lr_encoder = num(key, v)?,
            "lr_head" => self.optim.lr_head = num(key, v)?,
            "weight_decay" => self.optim.weight_decay = num(key, v)?,
            "warmup" => self.optim.warmup = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "ckpt_every" => self.ckpt_every = num(key, v)?,
            "aug_jitter" => self.aug_jitter = num(key, v)?,
            "aug_blur" => self.aug_blur = num(key, v)?,
            _ => return Err(Error::ConfigInvalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parse config text over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply the `T2S_SEED` override if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = num(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        self.engine.validate()?;
        self.loss.validate(self.classes())?;
        self.data_config().validate()?;
        if self.mode == Mode::Dg && self.engine.kind == EngineKind::Fda {
            return bad("dg mode has no target images for the fda engine".into());
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta {} outside [0,1]", self.eta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0,1]", self.alpha));
        }
        if !(self.delta_p >= 0.0) {
            return bad("delta_p must be >= 0".into());
        }
        if self.n_queries == 0 || self.m_negatives == 0 || !self.m_negatives.is_multiple_of(2) {
            return bad("n_queries must be positive and m_negatives positive and even".into());
        }
        let stride = ModelArch::STRIDE;
        if !self.height.is_multiple_of(stride) || !self.width.is_multiple_of(stride) {
            return bad(format!("image sides must be multiples of {stride}"));
        }
        let a = &self.arch;
        if [a.enc1, a.enc2, a.feat_dim, a.proj_hidden, a.embed_dim].contains(&0) {
            return bad("network widths must be positive".into());
        }
        if self.batch_source == 0 || (self.mode == Mode::Uda && self.batch_target == 0) {
            return bad("batch sizes must be positive".into());
        }
        if self.n_eval == 0 {
            return bad("n_eval must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.aug_jitter) || !(self.aug_blur >= 0.0) {
            return bad("aug_jitter in [0,1] and aug_blur >= 0 required".into());
        }
        let o = &self.optim;
        if !(o.lr_encoder >= 0.0 && o.lr_head >= 0.0 && o.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be >= 0".into());
        }
        Ok(())
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            classes: self.classes(),
            height: self.height,
            width: self.width,
            n_source: self.n_source,
            n_target: self.n_target,
            shift: self.shift.clone(),
        }
    }

    pub fn pairing_config(&self) -> PairingConfig {
        PairingConfig {
            classes: self.classes(),
            n_queries: self.n_queries,
            m_negatives: self.m_negatives,
            alpha: self.alpha,
            prototype_mode: self.prototype_mode,
            need_negatives: self.loss.pull_kind == PullKind::InfoNce,
        }
    }
}
