//! Encoder-decoder model shared by every variant: embeddings, LSTM encoder
//! and decoder, optional Gaussian sentence code, optional (variational)
//! attention, teacher-forced loss and greedy decoding.

use crate::attention::{self, AttentionParams, AttentionStep, AttentionStyle, AttentionVars, AttnPrior};
use crate::error::{Error, Result};
use crate::lstm::{self, LstmParams, LstmState, LstmVars, StateVars};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::text::{TokenSequence, EOS, PAD, SOS, UNK};
use crate::variational::{self, GaussianPosterior, GaussianVars, PosteriorHead, PosteriorHeadVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSpec {
    pub style: AttentionStyle,
    /// `None` for deterministic attention.
    pub prior: Option<AttnPrior>,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Gaussian sentence code concatenated to every decoder input.
    pub latent: bool,
    /// Decoder starts from the encoder's final state instead of zeros.
    pub bypass: bool,
    pub attention: Option<AttentionSpec>,
}

impl ModelSpec {
    pub fn decoder_input_dim(&self) -> usize {
        self.emb_dim + if self.latent { self.latent_dim } else { 0 }
    }

    pub fn variational_attention(&self) -> bool {
        self.attention.is_some_and(|a| a.prior.is_some())
    }

    /// Whether sampling-mode inference differs from MAP inference.
    pub fn is_stochastic(&self) -> bool {
        self.latent || self.variational_attention()
    }
}

/// Source of the standard-normal noise used by reparameterized draws.
/// `Zero` gives MAP behaviour (every epsilon is 0).
#[derive(Debug)]
pub enum Noise<'a> {
    Zero,
    Rng(&'a mut Rng),
}

impl Noise<'_> {
    pub fn draw(&mut self, n: usize) -> Vec<f64> {
        match self {
            Noise::Zero => vec![0.0; n],
            Noise::Rng(r) => r.normal_vec(n),
        }
    }
}

/// How the decoder obtains its sentence code.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentChoice {
    /// `z = mu + scale * sigma * eps` from the source posterior.
    Posterior { scale: f64 },
    /// An explicit code, e.g. drawn from the prior or interpolated.
    Given(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
    pub states: Vec<LstmState>,
    pub attention: Vec<AttentionStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    embedding: ParamId,
    encoder: LstmParams,
    decoder: LstmParams,
    w_out: ParamId,
    latent: Option<PosteriorHead>,
    attention: Option<AttentionParams>,
}

/// Every weight of the model recorded on one tape.
#[derive(Debug, Clone, Copy)]
pub struct Bound {
    emb: Var,
    enc: LstmVars,
    dec: LstmVars,
    w_out: Var,
    latent: Option<PosteriorHeadVars>,
    attn: Option<AttentionVars>,
}

/// Source-side quantities recorded on a tape.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub outputs: Vec<Var>,
    pub last: StateVars,
    pub keep: Vec<bool>,
    pub posterior: Option<GaussianVars>,
    /// Mean of the unpadded source states, for the mean-source prior.
    pub source_mean: Option<Var>,
}

/// Per-example loss terms on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ExampleLoss {
    pub rec: Var,
    pub kl_z: Option<Var>,
    /// Sum over decoder steps of the context-vector KLs.
    pub kl_c: Option<Var>,
    pub tokens: usize,
}

/// Initial decoder state: the encoder's final state with the bypass on,
/// zeros otherwise.
pub fn init_decoder_state(encoder_final: &LstmState, bypass: bool) -> LstmState {
    if bypass {
        encoder_final.clone()
    } else {
        LstmState::zeros(encoder_final.h.len())
    }
}

/// Replace each real decoder-input token by UNK with probability `p`.
/// PAD and SOS are never replaced.
pub fn word_dropout(tokens: &[usize], p: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1]")));
    }
    if p == 0.0 {
        return Ok(tokens.to_vec());
    }
    Ok(tokens
        .iter()
        .map(|&t| {
            if t != PAD && t != SOS && rng.bernoulli(p) {
                UNK
            } else {
                t
            }
        })
        .collect())
}

fn argmax_excluding_specials(logits: &[f64]) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if i == PAD || i == SOS {
            continue;
        }
        if best == usize::MAX || v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

impl Seq2SeqModel {
    /// Fresh model; parameters are created in a fixed order so that the
    /// bypass flag never changes the initial values.
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        if spec.vocab_size <= crate::text::NUM_SPECIAL || spec.emb_dim == 0 || spec.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!("bad model dimensions {spec:?}")));
        }
        if spec.latent && spec.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent dimension must be positive".into()));
        }
        let mut store = ParamStore::new();
        let embedding = store.add_glorot("embedding", spec.vocab_size, spec.emb_dim, rng)?;
        let encoder = LstmParams::new(&mut store, "encoder", spec.emb_dim, spec.hidden_dim, rng)?;
        let decoder = LstmParams::new(&mut store, "decoder", spec.decoder_input_dim(), spec.hidden_dim, rng)?;
        let w_out = store.add_glorot("W_out", spec.vocab_size, spec.hidden_dim, rng)?;
        let latent = if spec.latent {
            Some(PosteriorHead::new(
                &mut store,
                "latent",
                spec.hidden_dim,
                spec.latent_dim,
                rng,
            )?)
        } else {
            None
        };
        let attention = match spec.attention {
            Some(a) => Some(AttentionParams::new(
                &mut store,
                "attention",
                a.style,
                a.prior,
                spec.hidden_dim,
                rng,
            )?),
            None => None,
        };
        Ok(Self {
            spec,
            store,
            embedding,
            encoder,
            decoder,
            w_out,
            latent,
            attention,
        })
    }

    /// Rebuild around an existing parameter store (e.g. from a checkpoint).
    pub fn from_store(spec: ModelSpec, store: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(spec, &mut Rng::new(0))?;
        let names: Vec<String> = fresh.store.iter().map(|p| p.name.clone()).collect();
        if store.len() != names.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, found {}",
                names.len(),
                store.len()
            )));
        }
        for name in &names {
            let p = store
                .by_name(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
            fresh.store.set_value(name, p.value.clone())?;
        }
        Ok(fresh)
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let s = &self.store;
        Bound {
            emb: tape.param(s, self.embedding),
            enc: self.encoder.bind(tape, s),
            dec: self.decoder.bind(tape, s),
            w_out: tape.param(s, self.w_out),
            latent: self.latent.as_ref().map(|h| h.bind(tape, s)),
            attn: self.attention.as_ref().map(|a| a.bind(tape, s)),
        }
    }

    fn check_tokens(&self, seq: &TokenSequence) -> Result<()> {
        if seq.indices.is_empty() || seq.true_length == 0 {
            return Err(Error::Empty("token sequence"));
        }
        if let Some(&bad) = seq.indices.iter().find(|&&i| i >= self.spec.vocab_size) {
            return Err(Error::InvalidArgument(format!("token {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Run the encoder and, where present, the posterior head.
    pub fn encode_on_tape(&self, tape: &mut Tape, b: &Bound, src: &TokenSequence) -> Result<Encoded> {
        self.check_tokens(src)?;
        let embs: Vec<Var> = src.indices.iter().map(|&t| tape.row(b.emb, t)).collect();
        let (outputs, last) = lstm::run(tape, &b.enc, &embs)?;
        let keep = src.mask();
        let posterior = b
            .latent
            .as_ref()
            .map(|h| variational::posterior_from_hidden(tape, h, last.h));
        let source_mean = match self.spec.attention.and_then(|a| a.prior) {
            Some(AttnPrior::MeanSource) => Some(attention::mean_source(tape, &outputs, &keep)),
            _ => None,
        };
        Ok(Encoded {
            outputs,
            last,
            keep,
            posterior,
            source_mean,
        })
    }

    fn initial_state(&self, tape: &mut Tape, enc: Option<&Encoded>) -> StateVars {
        match enc {
            Some(e) if self.spec.bypass => e.last,
            _ => StateVars::zeros(tape, self.spec.hidden_dim),
        }
    }

    /// One decoder step: returns the new state, the logits, the context KL
    /// (variational attention only) and the attention record when requested.
    #[allow(clippy::too_many_arguments)]
    fn step_on_tape(
        &self,
        tape: &mut Tape,
        b: &Bound,
        enc: Option<&Encoded>,
        prev_token: usize,
        state: StateVars,
        z: Option<Var>,
        noise: &mut Noise<'_>,
        record: bool,
    ) -> Result<(StateVars, Var, Option<Var>, Option<AttentionStep>)> {
        let emb = tape.row(b.emb, prev_token);
        let input = match (self.spec.latent, z) {
            (true, Some(z)) => tape.concat(emb, z),
            (true, None) => return Err(Error::InvalidArgument("decoder requires a latent code".into())),
            (false, _) => emb,
        };
        let state = lstm::cell(tape, &b.dec, input, state)?;

        let Some(attn) = b.attn.as_ref() else {
            let logits = tape.matvec(b.w_out, state.h);
            return Ok((state, logits, None, None));
        };
        let enc = enc.ok_or_else(|| Error::InvalidArgument("attention needs an encoded source".into()))?;
        let scores = attention::score(tape, attn, state.h, &enc.outputs)?;
        let alpha = attention::weights(tape, scores, &enc.keep)?;
        let c_det = attention::context(tape, alpha, &enc.outputs);
        let (c, kl, post) = if attn.is_variational() {
            let post = attention::attn_posterior(tape, attn, c_det)?;
            let eps = noise.draw(self.spec.hidden_dim);
            let c = variational::reparameterize_on_tape(tape, &post, &eps, 1.0)?;
            let kl = attention::attn_kl(tape, &post, enc.source_mean);
            (c, Some(kl), Some(post))
        } else {
            (c_det, None, None)
        };
        let a = attention::attention_vector(tape, attn, c, state.h);
        let logits = tape.matvec(b.w_out, a);
        let rec = record.then(|| {
            let masked: Vec<f64> = tape
                .value(scores)
                .iter()
                .zip(&enc.keep)
                .map(|(&s, &k)| if k { s } else { f64::NEG_INFINITY })
                .collect();
            AttentionStep {
                scores: masked,
                weights: tape.value(alpha).to_vec(),
                c_det: tape.value(c_det).to_vec(),
                mu_c: post.map(|p| tape.value(p.mu).to_vec()),
                sigma_c: post.map(|p| tape.value(p.sigma).to_vec()),
                c: tape.value(c).to_vec(),
                a: tape.value(a).to_vec(),
            }
        });
        Ok((state, logits, kl, rec))
    }

    /// Teacher-forced loss for one example. The reconstruction term is the
    /// summed cross-entropy over real target positions; decoder inputs are
    /// SOS followed by the word-dropped target prefix.
    pub fn example_loss(
        &self,
        tape: &mut Tape,
        b: &Bound,
        src: &TokenSequence,
        tgt: &TokenSequence,
        dropout_p: f64,
        rng: &mut Rng,
    ) -> Result<ExampleLoss> {
        self.check_tokens(tgt)?;
        let len = tgt.true_length;
        let mut inputs = Vec::with_capacity(len);
        inputs.push(SOS);
        inputs.extend_from_slice(&tgt.indices[..len - 1]);
        let inputs = word_dropout(&inputs, dropout_p, rng)?;

        let enc = self.encode_on_tape(tape, b, src)?;
        let mut noise = Noise::Rng(rng);
        let (z, kl_z) = match enc.posterior {
            Some(post) => {
                let eps = noise.draw(self.spec.latent_dim);
                let z = variational::reparameterize_on_tape(tape, &post, &eps, 1.0)?;
                (
                    Some(z),
                    Some(variational::kl_on_tape(tape, post.mu, post.log_var, None)),
                )
            }
            None => (None, None),
        };

        let mut state = self.initial_state(tape, Some(&enc));
        let mut xents = Vec::with_capacity(len);
        let mut kls = Vec::new();
        for (j, &prev) in inputs.iter().enumerate() {
            let (next, logits, kl, _) = self.step_on_tape(tape, b, Some(&enc), prev, state, z, &mut noise, false)?;
            state = next;
            xents.push(tape.softmax_xent(logits, tgt.indices[j]));
            kls.extend(kl);
        }
        let rec = tape.add_n(&xents);
        let kl_c = (!kls.is_empty()).then(|| tape.add_n(&kls));
        Ok(ExampleLoss {
            rec,
            kl_z,
            kl_c,
            tokens: len,
        })
    }

    /// Reconstruction loss only (no KL terms) for one example.
    pub fn teacher_forced_loss(
        &self,
        src: &TokenSequence,
        tgt: &TokenSequence,
        dropout_p: f64,
        rng: &mut Rng,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let l = self.example_loss(&mut tape, &b, src, tgt, dropout_p, rng)?;
        tape.check_finite()?;
        Ok(tape.scalar(l.rec))
    }

    /// Posterior q(z|x) of a source sentence.
    pub fn posterior(&self, src: &TokenSequence) -> Result<GaussianPosterior> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let enc = self.encode_on_tape(&mut tape, &b, src)?;
        let post = enc
            .posterior
            .ok_or_else(|| Error::InvalidArgument("model has no latent code".into()))?;
        tape.check_finite()?;
        Ok(GaussianPosterior {
            mu: tape.tensor(post.mu),
            sigma: tape.tensor(post.sigma),
        })
    }

    /// Encoder outputs and final state on concrete tensors.
    pub fn encode(&self, src: &TokenSequence) -> Result<(Vec<Tensor>, LstmState)> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let enc = self.encode_on_tape(&mut tape, &b, src)?;
        tape.check_finite()?;
        Ok((
            enc.outputs.iter().map(|&h| tape.tensor(h)).collect(),
            LstmState {
                h: tape.tensor(enc.last.h),
                c: tape.tensor(enc.last.c),
            },
        ))
    }

    /// One decoder step for attention-free models on concrete tensors.
    pub fn decode_step(&self, prev_token: usize, state: &LstmState, z: Option<&Tensor>) -> Result<(LstmState, Tensor)> {
        if self.spec.attention.is_some() {
            return Err(Error::InvalidArgument("attention models decode with a source".into()));
        }
        if prev_token >= self.spec.vocab_size {
            return Err(Error::InvalidArgument(format!("token {prev_token} outside vocabulary")));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let st = StateVars {
            h: tape.input(state.h.data().to_vec()),
            c: tape.input(state.c.data().to_vec()),
        };
        let zv = z.map(|z| tape.input(z.data().to_vec()));
        let (next, logits, ..) = self.step_on_tape(&mut tape, &b, None, prev_token, st, zv, &mut Noise::Zero, false)?;
        tape.check_finite()?;
        Ok((
            LstmState {
                h: tape.tensor(next.h),
                c: tape.tensor(next.c),
            },
            tape.tensor(logits),
        ))
    }

    /// Greedy decoding: the argmax token (never PAD or SOS, ties to the
    /// lowest index) is fed back until EOS or `max_len` steps.
    pub fn greedy_decode(
        &self,
        src: Option<&TokenSequence>,
        latent: &LatentChoice,
        noise: &mut Noise<'_>,
        max_len: usize,
    ) -> Result<DecodeResult> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let enc = src.map(|s| self.encode_on_tape(&mut tape, &b, s)).transpose()?;
        if self.spec.attention.is_some() && enc.is_none() {
            return Err(Error::InvalidArgument("attention models decode with a source".into()));
        }
        let z = if self.spec.latent {
            Some(match latent {
                LatentChoice::Given(z) => {
                    if z.len() != self.spec.latent_dim {
                        return Err(Error::Shape(format!("latent code has {} dims", z.len())));
                    }
                    tape.input(z.data().to_vec())
                }
                LatentChoice::Posterior { scale } => {
                    let post = enc
                        .as_ref()
                        .and_then(|e| e.posterior)
                        .ok_or_else(|| Error::InvalidArgument("posterior sampling needs a source".into()))?;
                    let eps = noise.draw(self.spec.latent_dim);
                    variational::reparameterize_on_tape(&mut tape, &post, &eps, *scale)?
                }
            })
        } else {
            None
        };

        let mut state = self.initial_state(&mut tape, enc.as_ref());
        let mut out = DecodeResult {
            tokens: Vec::new(),
            logits: Vec::new(),
            states: Vec::new(),
            attention: Vec::new(),
        };
        let mut prev = SOS;
        for _ in 0..max_len {
            let (next, logits, _, rec) = self.step_on_tape(&mut tape, &b, enc.as_ref(), prev, state, z, noise, true)?;
            tape.check_finite()?;
            state = next;
            let lv = tape.value(logits).to_vec();
            let tok = argmax_excluding_specials(&lv);
            out.logits.push(lv);
            out.states.push(LstmState {
                h: tape.tensor(state.h),
                c: tape.tensor(state.c),
            });
            out.attention.extend(rec);
            if tok == EOS {
                break;
            }
            out.tokens.push(tok);
            prev = tok;
        }
        Ok(out)
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    pub fn output_id(&self) -> ParamId {
        self.w_out
    }
}
