//! Latent-space probes: MAP reconstruction, prior sampling, interpolation,
//! neighborhood sampling, diversity measurement and the paired bypass run.

use std::io::Write;

use crate::config::ExperimentConfig;
use crate::corpus::{Corpus, Grammar};
use crate::error::{Error, Result};
use crate::metrics::{bleu_j, distinct_n, entropy, MetricsReport};
use crate::rng::Rng;
use crate::seq2seq::{LatentChoice, Noise, Seq2SeqModel};
use crate::tensor::Tensor;
use crate::text::{encode, normalize_and_tokenize, TokenSequence, Vocabulary, EOS};
use crate::train::{kl_per_token, write_csv, IterRecord, Pair, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Samples per input.
    pub k: usize,
    /// Neighborhood scale.
    pub scale: f64,
    pub alphas: Vec<f64>,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            k: 10,
            scale: 1.0,
            alphas: default_alphas(),
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::InvalidArgument(format!("scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }
}

/// `0, 1/5, ..., 1`.
pub fn default_alphas() -> Vec<f64> {
    (0..=5).map(|i| i as f64 / 5.0).collect()
}

/// A trained model with what it needs to turn text into text.
#[derive(Debug, Clone, Copy)]
pub struct Generator<'a> {
    pub model: &'a Seq2SeqModel,
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
}

impl<'a> Generator<'a> {
    pub fn new(model: &'a Seq2SeqModel, vocab: &'a Vocabulary, max_len: usize) -> Self {
        Generator { model, vocab, max_len }
    }

    pub fn encode_text(&self, text: &str) -> Result<TokenSequence> {
        encode(&normalize_and_tokenize(text), self.vocab, self.max_len)
    }

    pub fn words(&self, tokens: &[usize]) -> Vec<String> {
        tokens.iter().map(|&t| self.vocab.token(t).to_string()).collect()
    }

    fn decode(&self, src: Option<&TokenSequence>, latent: &LatentChoice, noise: &mut Noise<'_>) -> Result<Vec<usize>> {
        Ok(self.model.greedy_decode(src, latent, noise, self.max_len)?.tokens)
    }

    /// Greedy decode with `z = mu` and deterministic attention contexts.
    pub fn map_tokens(&self, src: &TokenSequence) -> Result<Vec<usize>> {
        self.decode(Some(src), &LatentChoice::Posterior { scale: 0.0 }, &mut Noise::Zero)
    }

    pub fn map_reconstruct(&self, text: &str) -> Result<Vec<String>> {
        Ok(self.words(&self.map_tokens(&self.encode_text(text)?)?))
    }

    fn require_free_latent(&self, what: &str) -> Result<()> {
        if !self.model.spec.latent {
            return Err(Error::InvalidArgument(format!(
                "{what} needs a model with a latent code"
            )));
        }
        if self.model.spec.attention.is_some() {
            return Err(Error::InvalidArgument(format!(
                "{what} is undefined for attention models"
            )));
        }
        Ok(())
    }

    /// Decode `z ~ N(0, I)`; the encoder is not used.
    pub fn random_sample_tokens(&self, rng: &mut Rng) -> Result<Vec<usize>> {
        self.require_free_latent("random sampling")?;
        let z = Tensor::vector(rng.normal_vec(self.model.spec.latent_dim));
        self.decode(None, &LatentChoice::Given(z), &mut Noise::Zero)
    }

    pub fn random_sample(&self, rng: &mut Rng) -> Result<Vec<String>> {
        Ok(self.words(&self.random_sample_tokens(rng)?))
    }

    /// Decode `alpha * mu_A + (1 - alpha) * mu_B` for each alpha.
    pub fn interpolate(&self, a: &str, b: &str, alphas: &[f64]) -> Result<Vec<Vec<String>>> {
        self.require_free_latent("interpolation")?;
        let mu_a = self.model.posterior(&self.encode_text(a)?)?.mu;
        let mu_b = self.model.posterior(&self.encode_text(b)?)?.mu;
        alphas
            .iter()
            .map(|&alpha| {
                let z: Vec<f64> = mu_a
                    .data()
                    .iter()
                    .zip(mu_b.data())
                    .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                    .collect();
                let toks = self.decode(None, &LatentChoice::Given(Tensor::vector(z)), &mut Noise::Zero)?;
                Ok(self.words(&toks))
            })
            .collect()
    }

    /// Decode `z = mu + s * sigma * eps`. Variational attention contexts are
    /// sampled at unit scale.
    pub fn neighborhood_tokens(&self, src: &TokenSequence, scale: f64, rng: &mut Rng) -> Result<Vec<usize>> {
        if !self.model.spec.is_stochastic() {
            return Err(Error::InvalidArgument("sampling needs a stochastic model".into()));
        }
        self.decode(Some(src), &LatentChoice::Posterior { scale }, &mut Noise::Rng(rng))
    }

    pub fn neighborhood_sample(&self, text: &str, scale: f64, rng: &mut Rng) -> Result<Vec<String>> {
        Ok(self.words(&self.neighborhood_tokens(&self.encode_text(text)?, scale, rng)?))
    }

    /// MAP-mode report: mean BLEU-1..4 of MAP outputs against references.
    pub fn map_report(&self, pairs: &[Pair], model_name: &str) -> Result<MetricsReport> {
        if pairs.is_empty() {
            return Err(Error::Empty("evaluation inputs"));
        }
        let mut bleu = [0.0; 4];
        for p in pairs {
            let out = self.map_tokens(&p.source)?;
            for (j, b) in bleu.iter_mut().enumerate() {
                *b += bleu_j(&out, reference_words(&p.target), j + 1)?;
            }
        }
        for b in &mut bleu {
            *b /= pairs.len() as f64;
        }
        Ok(MetricsReport {
            model: model_name.to_string(),
            inference: "map".into(),
            bleu,
            inputs: pairs.len(),
            samples_per_input: 1,
            ..Default::default()
        })
    }

    /// Sampling-mode report: per input, `k` neighborhood samples at scale 1;
    /// BLEU is averaged over the samples, diversity is measured over the `k`
    /// outputs, and everything is averaged over inputs.
    pub fn diversity_probe(&self, pairs: &[Pair], k: usize, rng: &mut Rng, model_name: &str) -> Result<MetricsReport> {
        if pairs.is_empty() {
            return Err(Error::Empty("evaluation inputs"));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let mut bleu = [0.0; 4];
        let (mut ent, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for p in pairs {
            let outs = (0..k)
                .map(|_| self.neighborhood_tokens(&p.source, 1.0, rng))
                .collect::<Result<Vec<_>>>()?;
            for (j, b) in bleu.iter_mut().enumerate() {
                let mut s = 0.0;
                for o in &outs {
                    s += bleu_j(o, reference_words(&p.target), j + 1)?;
                }
                *b += s / k as f64;
            }
            ent += set_diversity(&outs, entropy)?;
            d1 += set_diversity(&outs, |s| distinct_n(s, 1))?;
            d2 += set_diversity(&outs, |s| distinct_n(s, 2))?;
        }
        let n = pairs.len() as f64;
        for b in &mut bleu {
            *b /= n;
        }
        Ok(MetricsReport {
            model: model_name.to_string(),
            inference: "sampling".into(),
            bleu,
            entropy: Some(ent / n),
            distinct_1: Some(d1 / n),
            distinct_2: Some(d2 / n),
            inputs: pairs.len(),
            samples_per_input: k,
        })
    }

    /// Fraction of `n` prior samples the grammar accepts.
    pub fn grammar_acceptance(&self, grammar: Grammar, n: usize, rng: &mut Rng) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        let mut ok = 0usize;
        for _ in 0..n {
            if grammar.accepts(&self.random_sample(rng)?) {
                ok += 1;
            }
        }
        Ok(ok as f64 / n as f64)
    }
}

/// Metrics that are undefined on sample sets without enough tokens count as
/// zero diversity.
fn set_diversity(outs: &[Vec<usize>], f: impl Fn(&[Vec<usize>]) -> Result<f64>) -> Result<f64> {
    match f(outs) {
        Err(Error::Empty(_)) => Ok(0.0),
        r => r,
    }
}

/// Target tokens without the trailing EOS.
fn reference_words(seq: &TokenSequence) -> &[usize] {
    let r = seq.real();
    match r.last() {
        Some(&EOS) => &r[..r.len() - 1],
        _ => r,
    }
}

/// Token-level Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One model of one seed in the bypass experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct BypassRow {
    pub seed: u64,
    pub bypass: bool,
    pub entropy: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    /// Closed-form KL per target token over the training set after training.
    pub kl_per_token: f64,
}

#[derive(Debug, Clone)]
pub struct BypassReport {
    pub rows: Vec<BypassRow>,
    /// Per-iteration training logs, parallel to `rows`.
    pub curves: Vec<Vec<IterRecord>>,
}

pub const BYPASS_HEADER: &str = "seed,bypass,entropy,distinct_1,distinct_2,kl_per_token";
pub const KL_CURVE_HEADER: &str = "seed,bypass,iteration,kl_z,lambda,lambda_times_kl";

impl BypassReport {
    pub fn write_table<W: Write>(&self, out: &mut W) -> Result<()> {
        write_csv(
            out,
            BYPASS_HEADER,
            self.rows.iter().map(|r| {
                format!(
                    "{},{},{:.6},{:.6},{:.6},{:.6}",
                    r.seed, r.bypass, r.entropy, r.distinct_1, r.distinct_2, r.kl_per_token
                )
            }),
        )
    }

    pub fn write_curves<W: Write>(&self, out: &mut W) -> Result<()> {
        let rows = self.rows.iter().zip(&self.curves).flat_map(|(r, log)| {
            log.iter().map(move |it| {
                format!(
                    "{},{},{},{:.6},{:.6},{:.6}",
                    r.seed,
                    r.bypass,
                    it.iteration,
                    it.kl_z.unwrap_or(0.0),
                    it.lambda,
                    it.lambda_times_kl()
                )
            })
        });
        write_csv(out, KL_CURVE_HEADER, rows)
    }

    /// Median of `f` over the rows with the given bypass flag.
    pub fn median(&self, bypass: bool, f: impl Fn(&BypassRow) -> f64) -> f64 {
        median(self.rows.iter().filter(|r| r.bypass == bypass).map(f).collect())
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Train `vae` twins that differ only in the bypass flag for every seed and
/// probe their diversity on the test partition. Runs execute in parallel.
pub fn bypass_experiment(
    base: &ExperimentConfig,
    corpus: &Corpus,
    seeds: &[u64],
    probe: &ProbeConfig,
) -> Result<BypassReport> {
    if seeds.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    probe.validate()?;
    if base.task()? != crate::config::Task::Vae {
        return Err(Error::Config("the bypass experiment trains vae models".into()));
    }
    let jobs: Vec<(u64, bool)> = seeds.iter().flat_map(|&s| [(s, false), (s, true)]).collect();
    let results: Vec<Result<(BypassRow, Vec<IterRecord>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(seed, bypass)| {
                scope.spawn(move || -> Result<(BypassRow, Vec<IterRecord>)> {
                    let cfg = base.clone().with("seed", seed)?.with("bypass", bypass)?;
                    let mut t = Trainer::new(cfg, corpus)?;
                    t.train()?;
                    let gen = Generator::new(&t.model, &t.data.vocab, t.data.max_len);
                    let inputs = if t.data.test.is_empty() {
                        &t.data.train
                    } else {
                        &t.data.test
                    };
                    let mut rng = Rng::new(probe.seed).derive(seed);
                    let rep = gen.diversity_probe(inputs, probe.k, &mut rng, "vae")?;
                    let row = BypassRow {
                        seed,
                        bypass,
                        entropy: rep.entropy.unwrap_or(0.0),
                        distinct_1: rep.distinct_1.unwrap_or(0.0),
                        distinct_2: rep.distinct_2.unwrap_or(0.0),
                        kl_per_token: kl_per_token(&t.model, &t.data.train)?,
                    };
                    Ok((row, std::mem::take(&mut t.log)))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut report = BypassReport {
        rows: Vec::new(),
        curves: Vec::new(),
    };
    for r in results {
        let (row, curve) = r?;
        report.rows.push(row);
        report.curves.push(curve);
    }
    Ok(report)
}
