//! Experiment configuration.
//!
//! Files are line-oriented `key = value`; `#` starts a comment. Keys:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `task` | `vae` | `vae`, `dae`, `ved_dattn`, `ved_vattn_0`, `ved_vattn_hbar`, `ded`, `ded_dattn` |
//! | `corpus` | `toy:svo` | `toy:<grammar>` or a path (directory with train/valid/test.txt, or one file) |
//! | `corpus_size` | `1000` | sentences generated for `toy:` corpora |
//! | `corpus_seed` | `1` | generator seed for `toy:` corpora |
//! | `vocab_size` | `200` | vocabulary limit including the 4 reserved tokens |
//! | `max_len` | `10` | encoded sequence length |
//! | `emb_dim` | `32` | word embedding size |
//! | `hidden_dim` | `100` | LSTM size |
//! | `latent_dim` | `100` | sentence-code size (variational tasks) |
//! | `attention_style` | `multiplicative` | or `additive` (attention tasks only) |
//! | `optimizer` | `adam` | or `sgd` |
//! | `lr`, `beta1`, `beta2`, `adam_eps` | `0.001`, `0.9`, `0.999`, `1e-8` | optimizer constants |
//! | `anneal` | `tanh` | `tanh`, `linear` or `constant` (variational tasks only) |
//! | `anneal_until` | `3000` / `10000` | iteration at which tanh / linear annealing freezes |
//! | `lambda` | `1.0` | KL weight for `anneal = constant` |
//! | `gamma_a` | `0.1` | attention KL strength (`ved_vattn_*` only) |
//! | `word_dropout` | `true` | epoch-scheduled word dropout |
//! | `bypass` | task-dependent | decoder hidden-state initialization (`vae` only; deterministic tasks force it on, VED tasks off) |
//! | `epochs` | `10` | training epochs |
//! | `batch_size` | `32` | examples per update |
//! | `seed` | `0` | model initialization and training randomness |
//! | `early_stopping` | `false` | stop when validation loss stalls for `patience` epochs |
//! | `patience` | `3` | |
//! | `eval_samples` | `10` | samples per input in sampling-mode evaluation |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::attention::{AttentionStyle, AttnPrior};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, OptimizerKind};
use crate::seq2seq::{AttentionSpec, ModelSpec};
use crate::variational::{AnnealKind, AnnealSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Vae,
    Dae,
    VedDattn,
    VedVattn0,
    VedVattnHbar,
    Ded,
    DedDattn,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Vae,
        Task::Dae,
        Task::VedDattn,
        Task::VedVattn0,
        Task::VedVattnHbar,
        Task::Ded,
        Task::DedDattn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Vae => "vae",
            Task::Dae => "dae",
            Task::VedDattn => "ved_dattn",
            Task::VedVattn0 => "ved_vattn_0",
            Task::VedVattnHbar => "ved_vattn_hbar",
            Task::Ded => "ded",
            Task::DedDattn => "ded_dattn",
        }
    }

    /// Has a Gaussian sentence code.
    pub fn has_latent(self) -> bool {
        matches!(self, Task::Vae | Task::VedDattn | Task::VedVattn0 | Task::VedVattnHbar)
    }

    /// `None`: no attention; `Some(None)`: deterministic; `Some(Some(p))`: variational.
    pub fn attention(self) -> Option<Option<AttnPrior>> {
        match self {
            Task::VedDattn | Task::DedDattn => Some(None),
            Task::VedVattn0 => Some(Some(AttnPrior::StandardNormal)),
            Task::VedVattnHbar => Some(Some(AttnPrior::MeanSource)),
            _ => None,
        }
    }

    pub fn is_variational_attention(self) -> bool {
        matches!(self, Task::VedVattn0 | Task::VedVattnHbar)
    }

    pub fn is_paired(self) -> bool {
        !matches!(self, Task::Vae | Task::Dae)
    }

    /// Whether any KL term is trained.
    pub fn has_kl(self) -> bool {
        self.has_latent() || self.is_variational_attention()
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// Every recognized key, in snapshot order.
pub const KEYS: &[&str] = &[
    "task",
    "corpus",
    "corpus_size",
    "corpus_seed",
    "vocab_size",
    "max_len",
    "emb_dim",
    "hidden_dim",
    "latent_dim",
    "attention_style",
    "optimizer",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "anneal",
    "anneal_until",
    "lambda",
    "gamma_a",
    "word_dropout",
    "bypass",
    "epochs",
    "batch_size",
    "seed",
    "early_stopping",
    "patience",
    "eval_samples",
];

/// Explicitly-set keys; every accessor falls back to the documented default.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects a boolean, got `{v}`"))),
    }
}

impl ExperimentConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Result<Self> {
        self.set(key, &value.to_string())?;
        Ok(self)
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Explicit keys as `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .filter_map(|k| self.values.get(*k).map(|v| format!("{k} = {v}\n")))
            .collect()
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        self.values.get(key).map_or(Ok(default), |v| parse_bool(key, v))
    }

    pub fn task(&self) -> Result<Task> {
        self.values.get("task").map_or(Ok(Task::Vae), |v| v.parse())
    }

    pub fn corpus(&self) -> String {
        self.values.get("corpus").cloned().unwrap_or_else(|| "toy:svo".into())
    }

    pub fn corpus_size(&self) -> Result<usize> {
        self.get("corpus_size", 1000)
    }

    pub fn corpus_seed(&self) -> Result<u64> {
        self.get("corpus_seed", 1)
    }

    pub fn vocab_size(&self) -> Result<usize> {
        self.get("vocab_size", 200)
    }

    pub fn max_len(&self) -> Result<usize> {
        self.get("max_len", 10)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed", 0)
    }

    pub fn epochs(&self) -> Result<u64> {
        self.get("epochs", 10)
    }

    pub fn batch_size(&self) -> Result<usize> {
        self.get("batch_size", 32)
    }

    pub fn gamma_a(&self) -> Result<f64> {
        self.get("gamma_a", 0.1)
    }

    pub fn word_dropout(&self) -> Result<bool> {
        self.get_bool("word_dropout", true)
    }

    pub fn early_stopping(&self) -> Result<bool> {
        self.get_bool("early_stopping", false)
    }

    pub fn patience(&self) -> Result<u64> {
        self.get("patience", 3)
    }

    pub fn eval_samples(&self) -> Result<usize> {
        self.get("eval_samples", 10)
    }

    pub fn bypass(&self) -> Result<bool> {
        let task = self.task()?;
        match task {
            Task::Vae => self.get_bool("bypass", false),
            Task::Dae | Task::Ded | Task::DedDattn => Ok(true),
            _ => Ok(false),
        }
    }

    pub fn optimizer(&self) -> Result<(OptimizerKind, AdamConfig)> {
        let kind = match self.values.get("optimizer").map(String::as_str) {
            None | Some("adam") => OptimizerKind::Adam,
            Some("sgd") => OptimizerKind::Sgd,
            Some(o) => return Err(Error::Config(format!("unknown optimizer `{o}`"))),
        };
        let d = AdamConfig::default();
        Ok((
            kind,
            AdamConfig {
                lr: self.get("lr", d.lr)?,
                beta1: self.get("beta1", d.beta1)?,
                beta2: self.get("beta2", d.beta2)?,
                eps: self.get("adam_eps", d.eps)?,
            },
        ))
    }

    pub fn anneal(&self) -> Result<AnnealSchedule> {
        let kind = match self.values.get("anneal").map(String::as_str) {
            None | Some("tanh") => AnnealKind::Tanh,
            Some("linear") => AnnealKind::Linear,
            Some("constant") => AnnealKind::Constant,
            Some(o) => return Err(Error::Config(format!("unknown anneal schedule `{o}`"))),
        };
        Ok(match kind {
            AnnealKind::Tanh => AnnealSchedule::tanh(self.get("anneal_until", 3000)?),
            AnnealKind::Linear => AnnealSchedule::linear(self.get("anneal_until", 10_000)?),
            AnnealKind::Constant => AnnealSchedule::constant(self.get("lambda", 1.0)?),
        })
    }

    pub fn attention_style(&self) -> Result<AttentionStyle> {
        match self.values.get("attention_style").map(String::as_str) {
            None | Some("multiplicative") => Ok(AttentionStyle::Multiplicative),
            Some("additive") => Ok(AttentionStyle::Additive),
            Some(o) => Err(Error::Config(format!("unknown attention style `{o}`"))),
        }
    }

    pub fn model_spec(&self, vocab_size: usize) -> Result<ModelSpec> {
        let task = self.task()?;
        let attention = match task.attention() {
            None => None,
            Some(prior) => Some(AttentionSpec {
                style: self.attention_style()?,
                prior,
            }),
        };
        Ok(ModelSpec {
            vocab_size,
            emb_dim: self.get("emb_dim", 32)?,
            hidden_dim: self.get("hidden_dim", 100)?,
            latent_dim: self.get("latent_dim", 100)?,
            latent: task.has_latent(),
            bypass: self.bypass()?,
            attention,
        })
    }

    /// Check types and variant/flag combinations.
    pub fn validate(&self) -> Result<()> {
        let task = self.task()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.is_set("gamma_a") && !task.is_variational_attention() {
            return bad(format!(
                "gamma_a only applies to ved_vattn_* tasks, not {}",
                task.name()
            ));
        }
        if self.is_set("bypass") && task != Task::Vae {
            return bad(format!("bypass is fixed for task {}", task.name()));
        }
        if self.is_set("attention_style") && task.attention().is_none() {
            return bad(format!("task {} has no attention", task.name()));
        }
        if !task.has_kl() {
            for key in ["anneal", "anneal_until", "lambda"] {
                if self.is_set(key) {
                    return bad(format!("`{key}` needs a variational task, not {}", task.name()));
                }
            }
        }
        if self.is_set("latent_dim") && !task.has_latent() {
            return bad(format!("task {} has no latent code", task.name()));
        }
        if self.is_set("lambda") && self.anneal()?.kind != AnnealKind::Constant {
            return bad("`lambda` needs anneal = constant".into());
        }
        let spec = self.model_spec(self.vocab_size()?)?;
        if spec.emb_dim == 0 || spec.hidden_dim == 0 || (spec.latent && spec.latent_dim == 0) {
            return bad("dimensions must be positive".into());
        }
        if self.vocab_size()? < 5 {
            return bad("vocab_size must be at least 5".into());
        }
        if self.max_len()? < 2 {
            return bad("max_len must be at least 2".into());
        }
        if self.batch_size()? == 0 || self.corpus_size()? == 0 {
            return bad("batch_size and corpus_size must be positive".into());
        }
        let (_, adam) = self.optimizer()?;
        if adam.lr.is_nan() || adam.lr <= 0.0 {
            return bad("lr must be positive".into());
        }
        let sched = self.anneal()?;
        if !(0.0..=1.0).contains(&sched.lambda_const) {
            return bad("lambda must lie in [0, 1]".into());
        }
        if self.gamma_a()? < 0.0 {
            return bad("gamma_a must be nonnegative".into());
        }
        if self.eval_samples()? == 0 {
            return bad("eval_samples must be positive".into());
        }
        self.word_dropout()?;
        self.early_stopping()?;
        self.patience()?;
        self.seed()?;
        self.epochs()?;
        self.corpus_seed()?;
        Ok(())
    }
}
