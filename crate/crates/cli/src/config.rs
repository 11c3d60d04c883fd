//! Run configuration: a flat `key = value` file.
//!
//! Blank lines and `#` comments are ignored. Every key is listed in [`KEYS`]
//! together with its default, and unknown keys are rejected. Paths are
//! resolved against the directory holding the config file. The whole file is
//! validated when it is parsed, so a bad value fails before any data is read.

use std::fs;
use std::path::{Path, PathBuf};

use mocosa_core::loss::LossConfig;
use mocosa_core::text::TextEncoderConfig;
use mocosa_core::{AseKind, ModelConfig, ScoreMode, Split, SplitSet, TrainConfig, TrainMode};

use crate::error::{CliError, Result};

/// Defaults taken from the original large-scale setup.
pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_MARGIN: f64 = 0.02;
pub const DEFAULT_QUEUE: usize = 15360;
pub const DEFAULT_HARDEST: usize = 192;
pub const DEFAULT_IRNS: usize = 3;
pub const DEFAULT_BATCH: usize = 768;

/// Named learning rates: `high`, `mid` and `low`.
pub const LR_PRESETS: [(&str, f64); 3] = [("high", 5e-4), ("mid", 5e-5), ("low", 1e-5)];

/// Grid searched by `rerank-sweep` when `alpha_grid` is not set.
pub const DEFAULT_ALPHA_GRID: [f64; 6] = [0.0, 0.02, 0.05, 0.1, 0.2, 0.5];

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "seed",
        "0",
        "RNG seed for initialization and training (overridden by --seed)",
    ),
    ("dataset", "", "dataset directory, relative to the config file"),
    ("vocab", "", "vocabulary file; built from the training split when unset"),
    (
        "checkpoint",
        "model.ckpt",
        "checkpoint written by train and read by eval",
    ),
    ("metrics", "", "per-epoch metrics TSV written by train"),
    ("min_freq", "1", "minimum word count kept when building a vocabulary"),
    ("struct_dim", "64", "structural embedding width w"),
    ("ase", "additive", "structural encoder: additive, hadamard or rotation"),
    ("use_ase", "true", "feed structural prefixes into the text encoders"),
    (
        "shared_encoders",
        "false",
        "one text encoder for the query and tail sides",
    ),
    ("layers", "2", "transformer layers l"),
    ("hidden", "64", "transformer width d"),
    ("heads", "4", "attention heads"),
    ("ffn", "256", "feed-forward width"),
    ("max_len", "64", "token budget per encoder input"),
    ("tau", "0.05", "initial temperature, in [0.01, 1]"),
    ("margin", "0.02", "additive margin on the positive similarity"),
    ("beta", "0.5", "weight of the structural loss and of the combined score"),
    ("mode", "joint", "joint or struct-only"),
    ("use_mh", "true", "momentum hard negatives"),
    ("use_ir", "true", "intra-relation negatives"),
    ("queue_size", "15360", "momentum queue capacity M"),
    ("hardest_k", "192", "queue members considered for mixing"),
    ("mix_count", "64", "mixed negatives per query"),
    ("irns", "3", "intra-relation negatives per query"),
    ("momentum", "0.999", "EMA coefficient of the momentum encoder"),
    ("lr", "high", "learning rate: a number or one of high, mid, low"),
    ("weight_decay", "0.01", "AdamW weight decay"),
    ("adam_beta1", "0.9", "AdamW first-moment decay"),
    ("adam_beta2", "0.999", "AdamW second-moment decay"),
    ("adam_eps", "1e-8", "AdamW epsilon"),
    ("grad_clip", "1.0", "global gradient-norm clip"),
    ("batch_size", "768", "training batch size"),
    ("epochs", "10", "training epochs"),
    (
        "score_mode",
        "text",
        "inference ranking score: text, struct or combined",
    ),
    ("eval_split", "test", "split ranked by eval and export-predictions"),
    (
        "filter_splits",
        "train+valid+test",
        "splits removed from candidates as known facts",
    ),
    ("rerank_alpha", "0", "re-ranking penalty for candidates outside N_r"),
    (
        "rerank_splits",
        "train",
        "splits supplying N_r: none, train, train+valid, train+valid+test",
    ),
    ("alpha_grid", "0,0.02,0.05,0.1,0.2,0.5", "alphas tried by rerank-sweep"),
];

/// Renders [`KEYS`] for `--help`.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (key = value, '#' starts a comment):\n");
    for (k, d, doc) in KEYS {
        let d = if d.is_empty() { "unset" } else { d };
        s.push_str(&format!("  {k:<16} {doc} [default: {d}]\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub metrics: Option<PathBuf>,
    pub min_freq: usize,
    pub struct_dim: usize,
    pub ase: AseKind,
    pub use_ase: bool,
    pub shared_encoders: bool,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub train: TrainConfig,
    pub score_mode: ScoreMode,
    pub eval_split: Split,
    pub filter_splits: SplitSet,
    pub rerank_alpha: f64,
    pub rerank_splits: SplitSet,
    pub alpha_grid: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let base = Path::new(".");
        let mut cfg = Self::blank(base);
        for (k, d, _) in KEYS {
            if !d.is_empty() {
                cfg.set(k, d, base).expect("built-in defaults parse");
            }
        }
        cfg
    }
}

impl RunConfig {
    fn blank(base: &Path) -> Self {
        Self {
            seed: 0,
            dataset: None,
            vocab: None,
            checkpoint: base.join("model.ckpt"),
            metrics: None,
            min_freq: 1,
            struct_dim: 64,
            ase: AseKind::Additive,
            use_ase: true,
            shared_encoders: false,
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 256,
            max_len: 64,
            train: TrainConfig {
                loss: LossConfig {
                    tau_init: DEFAULT_TAU,
                    margin: DEFAULT_MARGIN,
                    beta: 0.5,
                },
                batch_size: DEFAULT_BATCH,
                queue_size: DEFAULT_QUEUE,
                hardest_k: DEFAULT_HARDEST,
                irns_per_query: DEFAULT_IRNS,
                ..TrainConfig::default()
            },
            score_mode: ScoreMode::Text,
            eval_split: Split::Test,
            filter_splits: SplitSet::ALL,
            rerank_alpha: 0.0,
            rerank_splits: SplitSet::TRAIN,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(CliError::Missing {
                artifact: "config file",
                path: path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|(line, message)| CliError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    /// Parses config text; errors carry the 1-based line (0 for whole-file
    /// checks).
    pub fn parse(text: &str, base: &Path) -> std::result::Result<Self, (usize, String)> {
        let mut cfg = Self {
            checkpoint: base.join("model.ckpt"),
            ..Self::default()
        };
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| (i + 1, format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err((i + 1, format!("key {k:?} set twice")));
            }
            cfg.set(k, v, base).map_err(|m| (i + 1, m))?;
        }
        cfg.validate().map_err(|m| (0, m))?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> std::result::Result<(), String> {
        let path = |v: &str| if v.is_empty() { None } else { Some(base.join(v)) };
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, value)?,
            "dataset" => self.dataset = path(value),
            "vocab" => self.vocab = path(value),
            "checkpoint" => {
                self.checkpoint = path(value).ok_or_else(|| "checkpoint path must not be empty".to_string())?
            }
            "metrics" => self.metrics = path(value),
            "min_freq" => self.min_freq = num(key, value)?,
            "struct_dim" => self.struct_dim = num(key, value)?,
            "ase" => {
                self.ase = match value {
                    "additive" => AseKind::Additive,
                    "hadamard" => AseKind::Hadamard,
                    "rotation" => AseKind::Rotation,
                    _ => return Err(format!("unknown ase {value:?}")),
                }
            }
            "use_ase" => self.use_ase = flag(key, value)?,
            "shared_encoders" => self.shared_encoders = flag(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "ffn" => self.ffn = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "tau" => t.loss.tau_init = num(key, value)?,
            "margin" => t.loss.margin = num(key, value)?,
            "beta" => t.loss.beta = num(key, value)?,
            "mode" => t.mode = value.parse::<TrainMode>().map_err(|e| e.to_string())?,
            "use_mh" => t.use_mh = flag(key, value)?,
            "use_ir" => t.use_ir = flag(key, value)?,
            "queue_size" => t.queue_size = num(key, value)?,
            "hardest_k" => t.hardest_k = num(key, value)?,
            "mix_count" => t.mix_count = num(key, value)?,
            "irns" => t.irns_per_query = num(key, value)?,
            "momentum" => t.momentum = num(key, value)?,
            "lr" => {
                t.optimizer.lr = match LR_PRESETS.iter().find(|(n, _)| *n == value) {
                    Some((_, lr)) => *lr,
                    None => num(key, value)?,
                }
            }
            "weight_decay" => t.optimizer.weight_decay = num(key, value)?,
            "adam_beta1" => t.optimizer.beta1 = num(key, value)?,
            "adam_beta2" => t.optimizer.beta2 = num(key, value)?,
            "adam_eps" => t.optimizer.eps = num(key, value)?,
            "grad_clip" => t.grad_clip = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "score_mode" => self.score_mode = value.parse::<ScoreMode>().map_err(|e| e.to_string())?,
            "eval_split" => {
                self.eval_split = match value {
                    "train" => Split::Train,
                    "valid" => Split::Valid,
                    "test" => Split::Test,
                    _ => return Err(format!("unknown split {value:?}")),
                }
            }
            "filter_splits" => self.filter_splits = parse_splits(value)?,
            "rerank_alpha" => self.rerank_alpha = num(key, value)?,
            "rerank_splits" => self.rerank_splits = parse_splits(value)?,
            "alpha_grid" => {
                self.alpha_grid = value
                    .split(',')
                    .map(|a| num::<f64>(key, a.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Model settings; `vocab_size` comes from the vocabulary actually used.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            struct_dim: self.struct_dim,
            ase: self.ase,
            text: TextEncoderConfig {
                layers: self.layers,
                hidden: self.hidden,
                heads: self.heads,
                max_len: self.max_len,
                vocab_size,
                ffn: self.ffn,
            },
            use_ase: self.use_ase,
            shared_encoders: self.shared_encoders,
            tau_init: self.train.loss.tau_init,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        // the smallest legal vocabulary stands in until the real one is known
        self.model_config(4).validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.train.epochs == 0 {
            return Err("epochs must be positive".into());
        }
        if self.min_freq == 0 {
            return Err("min_freq must be at least 1".into());
        }
        if !(self.rerank_alpha >= 0.0) {
            return Err(format!("rerank_alpha must be >= 0, got {}", self.rerank_alpha));
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a >= 0.0)) {
            return Err("alpha_grid needs at least one non-negative value".into());
        }
        if self.train.mode == TrainMode::StructOnly && self.score_mode == ScoreMode::Text {
            return Err("struct-only training leaves the text encoders untrained; use score_mode = struct".into());
        }
        Ok(())
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn flag(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

/// `none`, or split names joined by `+`.
pub fn parse_splits(value: &str) -> std::result::Result<SplitSet, String> {
    if value == "none" {
        return Ok(SplitSet::NONE);
    }
    let mut splits = Vec::new();
    for part in value.split('+') {
        splits.push(match part.trim() {
            "train" => Split::Train,
            "valid" => Split::Valid,
            "test" => Split::Test,
            other => return Err(format!("unknown split {other:?} in {value:?}")),
        });
    }
    Ok(SplitSet::of(&splits))
}
