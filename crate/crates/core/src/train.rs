//! Training orchestration shared by every model variant.

use std::io::Write;

use crate::config::{ExperimentConfig, Task};
use crate::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::rng::Rng;
use crate::seq2seq::Seq2SeqModel;
use crate::tape::{Tape, Var};
use crate::text::{encode, normalize_and_tokenize, TokenSequence, Vocabulary};
use crate::variational::{self, kl_weight, AnnealSchedule};

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const VALID_STREAM: u64 = 1 << 32;

/// An encoded source/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub source: TokenSequence,
    pub target: TokenSequence,
}

/// Encoded partitions plus the vocabulary they were encoded with.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub max_len: usize,
    pub train: Vec<Pair>,
    pub valid: Vec<Pair>,
    pub test: Vec<Pair>,
    /// Raw test examples in the same order as `test`.
    pub test_examples: Vec<Example>,
}

type Parts = (Vec<Example>, Vec<Example>, Vec<Example>);

fn usable(corpus: &Corpus, task: Task) -> Result<Parts> {
    if task.is_paired() && !corpus.paired {
        return Err(Error::Config(format!("task {} needs a paired corpus", task.name())));
    }
    // Autoencoding tasks reconstruct the source side only.
    let pick = |part: &[Example]| -> Vec<Example> {
        part.iter()
            .map(|e| Example {
                source: e.source.clone(),
                target: if task.is_paired() {
                    e.target.clone()
                } else {
                    e.source.clone()
                },
            })
            .collect()
    };
    Ok((pick(&corpus.train), pick(&corpus.valid), pick(&corpus.test)))
}

impl Dataset {
    /// Build the vocabulary from the training partition and encode everything.
    pub fn build(corpus: &Corpus, task: Task, vocab_size: usize, max_len: usize) -> Result<Self> {
        let (train, ..) = usable(corpus, task)?;
        let mut sentences = Vec::new();
        for e in &train {
            sentences.push(normalize_and_tokenize(&e.source));
            if task.is_paired() {
                sentences.push(normalize_and_tokenize(&e.target));
            }
        }
        let vocab = Vocabulary::build(&sentences, vocab_size)?;
        Self::with_vocab(corpus, task, vocab, max_len)
    }

    pub fn with_vocab(corpus: &Corpus, task: Task, vocab: Vocabulary, max_len: usize) -> Result<Self> {
        let (train, valid, test) = usable(corpus, task)?;
        if train.is_empty() {
            return Err(Error::Empty("training partition"));
        }
        let enc = |part: &[Example]| -> Result<Vec<Pair>> {
            part.iter()
                .map(|e| {
                    Ok(Pair {
                        source: encode(&normalize_and_tokenize(&e.source), &vocab, max_len)?,
                        target: encode(&normalize_and_tokenize(&e.target), &vocab, max_len)?,
                    })
                })
                .collect()
        };
        Ok(Dataset {
            train: enc(&train)?,
            valid: enc(&valid)?,
            test: enc(&test)?,
            test_examples: test,
            vocab,
            max_len,
        })
    }
}

/// Resolve the `corpus` key: `toy:<grammar>` or a filesystem path.
pub fn load_corpus(config: &ExperimentConfig) -> Result<Corpus> {
    let spec = config.corpus();
    match spec.strip_prefix("toy:") {
        Some(grammar) => Corpus::generate(grammar, config.corpus_size()?, config.corpus_seed()?),
        None => Corpus::load(std::path::Path::new(&spec)),
    }
}

/// One row of the per-iteration log. KL fields are `None` for
/// deterministic variants.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iteration: u64,
    pub epoch: u64,
    pub rec: f64,
    pub kl_z: Option<f64>,
    pub kl_c: Option<f64>,
    pub lambda: f64,
    pub dropout_p: f64,
    pub gamma_a: f64,
}

impl IterRecord {
    /// The weighted KL penalty that entered the loss.
    pub fn lambda_times_kl(&self) -> f64 {
        self.lambda * (self.kl_z.unwrap_or(0.0) + self.gamma_a * self.kl_c.unwrap_or(0.0))
    }
}

/// Header of the per-iteration CSV for a task.
pub fn iter_header(task: Task) -> &'static str {
    if task.is_variational_attention() {
        "iteration,epoch,J_rec,kl_z,kl_c,lambda,lambda_times_kl,dropout_p"
    } else if task.has_kl() {
        "iteration,epoch,J_rec,kl_z,lambda,lambda_times_kl,dropout_p"
    } else {
        "iteration,epoch,J_rec,dropout_p"
    }
}

pub fn iter_row(task: Task, r: &IterRecord) -> String {
    if task.is_variational_attention() {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.2}",
            r.iteration,
            r.epoch,
            r.rec,
            r.kl_z.unwrap_or(0.0),
            r.kl_c.unwrap_or(0.0),
            r.lambda,
            r.lambda_times_kl(),
            r.dropout_p
        )
    } else if task.has_kl() {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.2}",
            r.iteration,
            r.epoch,
            r.rec,
            r.kl_z.unwrap_or(0.0),
            r.lambda,
            r.lambda_times_kl(),
            r.dropout_p
        )
    } else {
        format!("{},{},{:.6},{:.2}", r.iteration, r.epoch, r.rec, r.dropout_p)
    }
}

/// Mean validation terms after an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub rec: f64,
    pub kl_z: f64,
    pub kl_c: f64,
    pub total: f64,
}

pub const VALID_HEADER: &str = "epoch,val_rec,val_kl_z,val_kl_c,val_total";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.rec, self.kl_z, self.kl_c, self.total
        )
    }
}

/// Write `header` and `rows` to `out`.
pub fn write_csv<W: Write>(out: &mut W, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let io = |e| Error::io("<csv>", e);
    writeln!(out, "{header}").map_err(io)?;
    for r in rows {
        writeln!(out, "{r}").map_err(io)?;
    }
    Ok(())
}

/// Resolved hyperparameters used inside the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub task: Task,
    pub schedule: AnnealSchedule,
    pub gamma_a: f64,
    pub word_dropout: bool,
    pub batch_size: usize,
    pub epochs: u64,
    pub early_stopping: bool,
    pub patience: u64,
    pub seed: u64,
}

impl TrainSettings {
    pub fn from_config(c: &ExperimentConfig) -> Result<Self> {
        c.validate()?;
        let task = c.task()?;
        Ok(TrainSettings {
            task,
            schedule: c.anneal()?,
            gamma_a: if task.is_variational_attention() {
                c.gamma_a()?
            } else {
                0.0
            },
            word_dropout: c.word_dropout()?,
            batch_size: c.batch_size()?,
            epochs: c.epochs()?,
            early_stopping: c.early_stopping()?,
            patience: c.patience()?,
            seed: c.seed()?,
        })
    }

    pub fn dropout_at(&self, epoch: u64) -> f64 {
        if self.word_dropout {
            variational::dropout_schedule(epoch)
        } else {
            0.0
        }
    }

    pub fn lambda_at(&self, iteration: u64) -> f64 {
        if self.task.has_kl() {
            kl_weight(&self.schedule, iteration)
        } else {
            0.0
        }
    }
}

/// Mean loss terms over a set of examples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub rec: f64,
    pub kl_z: f64,
    pub kl_c: f64,
}

/// Record the batch objective `(1/B) Σ rec + λ(kl_z + γ kl_c)` on `tape`.
/// Returns the loss node and the mean terms.
pub fn batch_objective(
    model: &Seq2SeqModel,
    tape: &mut Tape,
    batch: &[&Pair],
    lambda: f64,
    gamma_a: f64,
    dropout_p: f64,
    rng: &mut Rng,
) -> Result<(Var, LossTerms)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let b = model.bind(tape);
    let mut totals = Vec::with_capacity(batch.len());
    let mut terms = LossTerms::default();
    for p in batch {
        let l = model.example_loss(tape, &b, &p.source, &p.target, dropout_p, rng)?;
        terms.rec += tape.scalar(l.rec);
        let mut kl = Vec::new();
        if let Some(k) = l.kl_z {
            terms.kl_z += tape.scalar(k);
            kl.push(k);
        }
        if let Some(k) = l.kl_c {
            terms.kl_c += tape.scalar(k);
            kl.push(tape.scale(k, gamma_a));
        }
        let total = if kl.is_empty() {
            l.rec
        } else {
            let s = tape.add_n(&kl);
            let w = tape.scale(s, lambda);
            tape.add(l.rec, w)
        };
        totals.push(total);
    }
    let sum = tape.add_n(&totals);
    let n = batch.len() as f64;
    let loss = tape.scale(sum, 1.0 / n);
    terms.rec /= n;
    terms.kl_z /= n;
    terms.kl_c /= n;
    Ok((loss, terms))
}

/// Backpropagate the batch objective into the model's gradients.
pub fn accumulate_batch_gradients(
    model: &mut Seq2SeqModel,
    batch: &[&Pair],
    lambda: f64,
    gamma_a: f64,
    dropout_p: f64,
    rng: &mut Rng,
) -> Result<LossTerms> {
    let mut tape = Tape::new();
    let (loss, terms) = batch_objective(model, &mut tape, batch, lambda, gamma_a, dropout_p, rng)?;
    tape.backward(loss, &mut model.store)?;
    Ok(terms)
}

/// Mean loss terms over `pairs` without word dropout or parameter updates.
pub fn evaluate_loss(model: &Seq2SeqModel, pairs: &[Pair], rng: &mut Rng) -> Result<LossTerms> {
    let mut terms = LossTerms::default();
    if pairs.is_empty() {
        return Ok(terms);
    }
    for p in pairs {
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let l = model.example_loss(&mut tape, &b, &p.source, &p.target, 0.0, rng)?;
        tape.check_finite()?;
        terms.rec += tape.scalar(l.rec);
        terms.kl_z += l.kl_z.map_or(0.0, |k| tape.scalar(k));
        terms.kl_c += l.kl_c.map_or(0.0, |k| tape.scalar(k));
    }
    let n = pairs.len() as f64;
    terms.rec /= n;
    terms.kl_z /= n;
    terms.kl_c /= n;
    Ok(terms)
}

/// Closed-form KL(q(z|x) ‖ N(0, I)) summed over `pairs`, divided by the
/// number of target tokens (EOS included).
pub fn kl_per_token(model: &Seq2SeqModel, pairs: &[Pair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    let mut kl = 0.0;
    let mut tokens = 0usize;
    for p in pairs {
        kl += variational::kl_standard_normal(&model.posterior(&p.source)?)?;
        tokens += p.target.true_length;
    }
    Ok(kl / tokens as f64)
}

/// Full mutable training state. Everything needed to continue training
/// bit-exactly is either here or in the config.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: ExperimentConfig,
    pub settings: TrainSettings,
    pub data: Dataset,
    pub model: Seq2SeqModel,
    pub optimizer: Optimizer,
    pub rng: Rng,
    /// Completed parameter updates.
    pub iteration: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub best_valid: Option<f64>,
    pub stale_epochs: u64,
    pub log: Vec<IterRecord>,
    pub valid_log: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(config: ExperimentConfig, corpus: &Corpus) -> Result<Self> {
        let settings = TrainSettings::from_config(&config)?;
        let data = Dataset::build(corpus, settings.task, config.vocab_size()?, config.max_len()?)?;
        let spec = config.model_spec(data.vocab.len())?;
        let root = Rng::new(settings.seed);
        let model = Seq2SeqModel::new(spec, &mut root.derive(INIT_STREAM))?;
        let (kind, adam) = config.optimizer()?;
        let optimizer = Optimizer::new(kind, adam, &model.store);
        Ok(Trainer {
            rng: root.derive(TRAIN_STREAM),
            config,
            settings,
            data,
            model,
            optimizer,
            iteration: 0,
            epoch: 0,
            best_valid: None,
            stale_epochs: 0,
            log: Vec::new(),
            valid_log: Vec::new(),
        })
    }

    pub fn task(&self) -> Task {
        self.settings.task
    }

    /// True once the epoch budget is spent or early stopping fired.
    pub fn finished(&self) -> bool {
        self.epoch >= self.settings.epochs
            || (self.settings.early_stopping && self.stale_epochs >= self.settings.patience)
    }

    /// One pass over the shuffled training set followed by validation.
    pub fn run_epoch(&mut self) -> Result<()> {
        let s = &self.settings;
        let dropout_p = s.dropout_at(self.epoch);
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        self.rng.shuffle(&mut order);
        for chunk in order.chunks(s.batch_size) {
            let lambda = s.lambda_at(self.iteration);
            let batch: Vec<&Pair> = chunk.iter().map(|&i| &self.data.train[i]).collect();
            let terms =
                accumulate_batch_gradients(&mut self.model, &batch, lambda, s.gamma_a, dropout_p, &mut self.rng)
                    .map_err(|e| diverged(self.iteration, e))?;
            self.optimizer
                .step(&mut self.model.store)
                .map_err(|e| diverged(self.iteration, e))?;
            self.log.push(IterRecord {
                iteration: self.iteration,
                epoch: self.epoch,
                rec: terms.rec,
                kl_z: self.model.spec.latent.then_some(terms.kl_z),
                kl_c: s.task.is_variational_attention().then_some(terms.kl_c),
                lambda,
                dropout_p,
                gamma_a: s.gamma_a,
            });
            self.iteration += 1;
        }
        self.epoch += 1;
        self.validate()
    }

    fn validate(&mut self) -> Result<()> {
        if self.data.valid.is_empty() {
            return Ok(());
        }
        let mut rng = Rng::new(self.settings.seed).derive(VALID_STREAM + self.epoch);
        let t = evaluate_loss(&self.model, &self.data.valid, &mut rng)?;
        let lambda = self.settings.lambda_at(self.iteration);
        let total = t.rec + lambda * (t.kl_z + self.settings.gamma_a * t.kl_c);
        self.valid_log.push(EpochRecord {
            epoch: self.epoch,
            rec: t.rec,
            kl_z: t.kl_z,
            kl_c: t.kl_c,
            total,
        });
        if self.best_valid.is_none_or(|b| total < b) {
            self.best_valid = Some(total);
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
        }
        Ok(())
    }

    /// Run epochs until `finished`.
    pub fn train(&mut self) -> Result<()> {
        while !self.finished() {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn write_logs<W: Write, V: Write>(&self, iter_out: &mut W, valid_out: &mut V) -> Result<()> {
        let task = self.task();
        write_csv(iter_out, iter_header(task), self.log.iter().map(|r| iter_row(task, r)))?;
        write_csv(valid_out, VALID_HEADER, self.valid_log.iter().map(EpochRecord::csv_row))
    }
}

fn diverged(iteration: u64, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{op} (training diverged at iteration {iteration})"),
        },
        other => other,
    }
}
