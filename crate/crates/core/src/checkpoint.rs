//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "SEQVAECK" | version u32
//! config text          (u64 length + UTF-8)
//! vocabulary           (u64 count, then strings)
//! parameters           (u64 count, then name, u64 rank, u64 dims.., f64 values..)
//! optimizer            (u8 kind; SGD: f64 lr; Adam: f64 lr, beta1, beta2, eps, u64 t,
//!                       then m and v as u64 count + per-parameter f64 arrays)
//! counters             (u64 iteration, u64 epoch, u8 has_best, f64 best, u64 stale)
//! rng                  (u64 seed, u128 word position)
//! ```
//!
//! Strings are a u64 byte length followed by UTF-8 bytes; f64 arrays are a
//! u64 length followed by the values.

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState, Optimizer};
use crate::params::ParamStore;
use crate::rng::{Rng, RngState};
use crate::seq2seq::Seq2SeqModel;
use crate::tensor::Tensor;
use crate::text::Vocabulary;
use crate::train::{Dataset, TrainSettings, Trainer};

pub const MAGIC: &[u8; 8] = b"SEQVAECK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub vocab: Vocabulary,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Optimizer,
    pub iteration: u64,
    pub epoch: u64,
    pub best_valid: Option<f64>,
    pub stale_epochs: u64,
    pub rng: RngState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // Every element takes at least one byte.
        if n as usize > self.buf.len() - self.pos {
            return Err(Error::Checkpoint(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            config: t.config.clone(),
            vocab: t.data.vocab.clone(),
            params: t
                .model
                .store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            optimizer: t.optimizer.clone(),
            iteration: t.iteration,
            epoch: t.epoch,
            best_valid: t.best_valid,
            stale_epochs: t.stale_epochs,
            rng: t.rng.state(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.config.to_text());
        w.u64(self.vocab.len() as u64);
        for t in self.vocab.tokens() {
            w.str(t);
        }
        w.u64(self.params.len() as u64);
        for (name, t) in &self.params {
            w.str(name);
            w.u64(t.shape().len() as u64);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            for &x in t.data() {
                w.f64(x);
            }
        }
        match &self.optimizer {
            Optimizer::Sgd { lr } => {
                w.u8(0);
                w.f64(*lr);
            }
            Optimizer::Adam { cfg, state } => {
                w.u8(1);
                for v in [cfg.lr, cfg.beta1, cfg.beta2, cfg.eps] {
                    w.f64(v);
                }
                w.u64(state.t);
                for moments in [&state.m, &state.v] {
                    w.u64(moments.len() as u64);
                    for m in moments {
                        w.f64s(m);
                    }
                }
            }
        }
        w.u64(self.iteration);
        w.u64(self.epoch);
        w.u8(self.best_valid.is_some() as u8);
        w.f64(self.best_valid.unwrap_or(0.0));
        w.u64(self.stale_epochs);
        w.u64(self.rng.seed);
        w.u128(self.rng.word_pos);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config = ExperimentConfig::parse(&r.str()?)?;
        let n = r.len()?;
        let tokens = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_token_list(tokens)?;
        let n = r.len()?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let rank = r.len()?;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            if count > buf.len() {
                return Err(Error::Checkpoint(format!("implausible shape for `{name}`")));
            }
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.push((name, Tensor::new(shape, data)?));
        }
        let optimizer = match r.u8()? {
            0 => Optimizer::Sgd { lr: r.f64()? },
            1 => {
                let cfg = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let t = r.u64()?;
                let mut moments = Vec::new();
                for _ in 0..2 {
                    let n = r.len()?;
                    moments.push((0..n).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?);
                }
                let v = moments.pop().expect("two moments");
                let m = moments.pop().expect("two moments");
                Optimizer::Adam {
                    cfg,
                    state: AdamState { m, v, t },
                }
            }
            k => return Err(Error::Checkpoint(format!("unknown optimizer tag {k}"))),
        };
        let iteration = r.u64()?;
        let epoch = r.u64()?;
        let has_best = r.u8()? != 0;
        let best = r.f64()?;
        let stale_epochs = r.u64()?;
        let rng = RngState {
            seed: r.u64()?,
            word_pos: r.u128()?,
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            config,
            vocab,
            params,
            optimizer,
            iteration,
            epoch,
            best_valid: has_best.then_some(best),
            stale_epochs,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Rebuild the model the checkpoint describes.
    pub fn model(&self) -> Result<Seq2SeqModel> {
        let spec = self.config.model_spec(self.vocab.len())?;
        let mut store = ParamStore::new();
        for (name, t) in &self.params {
            store.add(name, t.clone())?;
        }
        Seq2SeqModel::from_store(spec, store)
    }

    /// Resume training on `corpus` exactly where the checkpoint left off.
    pub fn into_trainer(self, corpus: &Corpus) -> Result<Trainer> {
        let settings = TrainSettings::from_config(&self.config)?;
        let model = self.model()?;
        if let Optimizer::Adam { state, .. } = &self.optimizer {
            let sizes: Vec<usize> = model.store.iter().map(|p| p.value.len()).collect();
            let ok = |m: &Vec<Vec<f64>>| m.iter().map(Vec::len).eq(sizes.iter().copied());
            if !ok(&state.m) || !ok(&state.v) {
                return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
            }
        }
        let data = Dataset::with_vocab(corpus, settings.task, self.vocab, self.config.max_len()?)?;
        Ok(Trainer {
            config: self.config,
            settings,
            data,
            model,
            optimizer: self.optimizer,
            rng: Rng::from_state(self.rng),
            iteration: self.iteration,
            epoch: self.epoch,
            best_valid: self.best_valid,
            stale_epochs: self.stale_epochs,
            log: Vec::new(),
            valid_log: Vec::new(),
        })
    }
}
