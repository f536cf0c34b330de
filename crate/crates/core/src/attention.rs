//! Deterministic attention (multiplicative and additive scores) and
//! variational attention, where each context vector is a Gaussian sample
//! with its own KL penalty.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{softmax_into, Tensor};
use crate::variational::{kl_on_tape, kl_to_unit_gaussian, sigma_from_log_var, GaussianVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionStyle {
    /// `h_tar^T W^T h_src`
    Multiplicative,
    /// `v_a^T tanh(W_1 h_tar + W_2 h_src)`
    Additive,
}

/// Prior on a context vector; both have identity covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnPrior {
    StandardNormal,
    /// Centered on the mean of the (unpadded) source hidden states.
    MeanSource,
}

#[derive(Debug, Clone, PartialEq)]
enum ScoreParams {
    Multiplicative { w: ParamId },
    Additive { w1: ParamId, w2: ParamId, v_a: ParamId },
}

/// tanh layer followed by a linear head producing a log-variance.
#[derive(Debug, Clone, PartialEq)]
struct VarianceHead {
    hid_w: ParamId,
    hid_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub style: AttentionStyle,
    /// `Some` for variational attention.
    pub prior: Option<AttnPrior>,
    pub d_h: usize,
    score: ScoreParams,
    w_c: ParamId,
    variance: Option<VarianceHead>,
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        style: AttentionStyle,
        prior: Option<AttnPrior>,
        d_h: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let score = match style {
            AttentionStyle::Multiplicative => ScoreParams::Multiplicative {
                w: store.add_glorot(format!("{prefix}.W"), d_h, d_h, rng)?,
            },
            AttentionStyle::Additive => ScoreParams::Additive {
                w1: store.add_glorot(format!("{prefix}.W_1"), d_h, d_h, rng)?,
                w2: store.add_glorot(format!("{prefix}.W_2"), d_h, d_h, rng)?,
                v_a: store.add_glorot(format!("{prefix}.v_a"), d_h, 1, rng)?,
            },
        };
        let w_c = store.add_glorot(format!("{prefix}.W_c"), d_h, 2 * d_h, rng)?;
        let variance = match prior {
            None => None,
            Some(_) => Some(VarianceHead {
                hid_w: store.add_glorot(format!("{prefix}.var_hidden_w"), d_h, d_h, rng)?,
                hid_b: store.add_const(format!("{prefix}.var_hidden_b"), d_h, 0.0)?,
                out_w: store.add_glorot(format!("{prefix}.var_out_w"), d_h, d_h, rng)?,
                out_b: store.add_const(format!("{prefix}.var_out_b"), d_h, 0.0)?,
            }),
        };
        Ok(Self {
            style,
            prior,
            d_h,
            score,
            w_c,
            variance,
        })
    }

    pub fn find(store: &ParamStore, prefix: &str, style: AttentionStyle, prior: Option<AttnPrior>) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(&format!("{prefix}.{n}"))
                .ok_or_else(|| Error::InvalidArgument(format!("missing {prefix}.{n}")))
        };
        let score = match style {
            AttentionStyle::Multiplicative => ScoreParams::Multiplicative { w: get("W")? },
            AttentionStyle::Additive => ScoreParams::Additive {
                w1: get("W_1")?,
                w2: get("W_2")?,
                v_a: get("v_a")?,
            },
        };
        let w_c = get("W_c")?;
        let variance = match prior {
            None => None,
            Some(_) => Some(VarianceHead {
                hid_w: get("var_hidden_w")?,
                hid_b: get("var_hidden_b")?,
                out_w: get("var_out_w")?,
                out_b: get("var_out_b")?,
            }),
        };
        Ok(Self {
            style,
            prior,
            d_h: store.get(w_c).value.shape()[0],
            score,
            w_c,
            variance,
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> AttentionVars {
        let mut p = |id: ParamId| tape.param(store, id);
        let score = match &self.score {
            ScoreParams::Multiplicative { w } => ScoreVars::Multiplicative { w: p(*w) },
            ScoreParams::Additive { w1, w2, v_a } => ScoreVars::Additive {
                w1: p(*w1),
                w2: p(*w2),
                v_a: p(*v_a),
            },
        };
        let w_c = p(self.w_c);
        let variance = self
            .variance
            .as_ref()
            .map(|v| [p(v.hid_w), p(v.hid_b), p(v.out_w), p(v.out_b)]);
        AttentionVars {
            d_h: self.d_h,
            score,
            w_c,
            variance,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ScoreVars {
    Multiplicative { w: Var },
    Additive { w1: Var, w2: Var, v_a: Var },
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub d_h: usize,
    score: ScoreVars,
    w_c: Var,
    variance: Option<[Var; 4]>,
}

impl AttentionVars {
    pub fn is_variational(&self) -> bool {
        self.variance.is_some()
    }
}

/// Unnormalized score of every source position (masking happens in [`weights`]).
pub fn score(tape: &mut Tape, p: &AttentionVars, h_tar: Var, h_src: &[Var]) -> Result<Var> {
    if h_src.is_empty() {
        return Err(Error::Empty("attention source"));
    }
    if tape.len_of(h_tar) != p.d_h || h_src.iter().any(|&h| tape.len_of(h) != p.d_h) {
        return Err(Error::Shape(format!("attention states must have {} dims", p.d_h)));
    }
    let scores: Vec<Var> = match p.score {
        ScoreVars::Multiplicative { w } => {
            let projected = tape.matvec(w, h_tar);
            h_src.iter().map(|&h| tape.dot(projected, h)).collect()
        }
        ScoreVars::Additive { w1, w2, v_a } => {
            let tar = tape.matvec(w1, h_tar);
            h_src
                .iter()
                .map(|&h| {
                    let src = tape.matvec(w2, h);
                    let sum = tape.add(tar, src);
                    let act = tape.tanh(sum);
                    tape.dot(v_a, act)
                })
                .collect()
        }
    };
    Ok(tape.stack(&scores))
}

/// Softmax over unmasked positions; masked weights are exactly 0.
pub fn weights(tape: &mut Tape, scores: Var, keep: &[bool]) -> Result<Var> {
    if tape.len_of(scores) != keep.len() {
        return Err(Error::Shape("attention mask length".into()));
    }
    if !keep.iter().any(|&k| k) {
        return Err(Error::InvalidArgument("every source position is masked".into()));
    }
    Ok(tape.masked_softmax(scores, keep))
}

/// `sum_i alpha_i h_src_i`.
pub fn context(tape: &mut Tape, alpha: Var, h_src: &[Var]) -> Var {
    tape.weighted_sum(alpha, h_src)
}

/// Mean of the source states at unmasked positions.
pub fn mean_source(tape: &mut Tape, h_src: &[Var], keep: &[bool]) -> Var {
    let n = keep.iter().filter(|&&k| k).count().max(1) as f64;
    let uniform = tape.input(keep.iter().map(|&k| if k { 1.0 / n } else { 0.0 }).collect());
    tape.weighted_sum(uniform, h_src)
}

/// Posterior of the context vector: the mean is the deterministic context
/// itself, the log-variance comes from the tanh + linear head.
pub fn attn_posterior(tape: &mut Tape, p: &AttentionVars, c_det: Var) -> Result<GaussianVars> {
    let [hid_w, hid_b, out_w, out_b] = p
        .variance
        .ok_or_else(|| Error::InvalidArgument("deterministic attention has no posterior".into()))?;
    let hid = tape.matvec(hid_w, c_det);
    let hid = tape.add(hid, hid_b);
    let hid = tape.tanh(hid);
    let lv = tape.matvec(out_w, hid);
    let log_var = tape.add(lv, out_b);
    Ok(GaussianVars {
        mu: c_det,
        log_var,
        sigma: sigma_from_log_var(tape, log_var),
    })
}

/// KL of the context posterior against its prior (mean 0 or `prior_mean`).
pub fn attn_kl(tape: &mut Tape, post: &GaussianVars, prior_mean: Option<Var>) -> Var {
    kl_on_tape(tape, post.mu, post.log_var, prior_mean)
}

/// `a_j = tanh(W_c [c_j ; h_tar_j])`.
pub fn attention_vector(tape: &mut Tape, p: &AttentionVars, c: Var, h_tar: Var) -> Var {
    let joined = tape.concat(c, h_tar);
    let lin = tape.matvec(p.w_c, joined);
    tape.tanh(lin)
}

/// Per-decoder-step attention record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionStep {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub c_det: Vec<f64>,
    /// Posterior mean and standard deviation; absent for deterministic attention.
    pub mu_c: Option<Vec<f64>>,
    pub sigma_c: Option<Vec<f64>>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
}

/// `J_rec + lambda * (kl_z + gamma_a * sum_j kl_c_j)`.
pub fn ved_objective(rec: f64, kl_z: f64, kl_c: &[f64], lambda: f64, gamma_a: f64) -> Result<f64> {
    if kl_z < 0.0 || kl_c.iter().any(|&k| k < 0.0) {
        return Err(Error::InvalidArgument("KL terms must be nonnegative".into()));
    }
    Ok(rec + lambda * (kl_z + gamma_a * kl_c.iter().sum::<f64>()))
}

// Convenience wrappers on concrete tensors.

/// Scores with masked positions set to negative infinity.
pub fn score_values(
    store: &ParamStore,
    params: &AttentionParams,
    h_tar: &Tensor,
    h_src: &[Tensor],
    keep: &[bool],
) -> Result<Vec<f64>> {
    if keep.len() != h_src.len() {
        return Err(Error::Shape("attention mask length".into()));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, store);
    let ht = tape.input(h_tar.data().to_vec());
    let hs: Vec<Var> = h_src.iter().map(|h| tape.input(h.data().to_vec())).collect();
    let s = score(&mut tape, &vars, ht, &hs)?;
    tape.check_finite()?;
    Ok(tape
        .value(s)
        .iter()
        .zip(keep)
        .map(|(&v, &k)| if k { v } else { f64::NEG_INFINITY })
        .collect())
}

/// Softmax over the finite scores; non-finite (masked) entries get weight 0.
pub fn weights_from_scores(scores: &[f64]) -> Result<Vec<f64>> {
    let finite: Vec<f64> = scores.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::InvalidArgument("every source position is masked".into()));
    }
    let mut probs = vec![0.0; finite.len()];
    softmax_into(&finite, &mut probs);
    let mut it = probs.into_iter();
    Ok(scores
        .iter()
        .map(|v| if v.is_finite() { it.next().unwrap() } else { 0.0 })
        .collect())
}

pub fn context_values(alpha: &[f64], h_src: &[Tensor]) -> Result<Tensor> {
    if alpha.len() != h_src.len() || h_src.is_empty() {
        return Err(Error::Shape("context: weights and sources differ in length".into()));
    }
    let d = h_src[0].len();
    let mut out = vec![0.0; d];
    for (a, h) in alpha.iter().zip(h_src) {
        for (o, v) in out.iter_mut().zip(h.data()) {
            *o += a * v;
        }
    }
    Ok(Tensor::vector(out))
}

/// KL for a context posterior against the chosen prior.
pub fn attn_kl_values(mu: &[f64], sigma: &[f64], prior_mean: Option<&[f64]>) -> Result<f64> {
    kl_to_unit_gaussian(mu, sigma, prior_mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(style: AttentionStyle, prior: Option<AttnPrior>, d: usize) -> (ParamStore, AttentionParams) {
        let mut store = ParamStore::new();
        let p = AttentionParams::new(&mut store, "attn", style, prior, d, &mut Rng::new(3)).unwrap();
        (store, p)
    }

    #[test]
    fn identity_weight_orthogonal_states_score_zero() {
        let (mut store, p) = params(AttentionStyle::Multiplicative, None, 2);
        store
            .set_value("attn.W", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let s = score_values(
            &store,
            &p,
            &Tensor::vector(vec![1.0, 0.0]),
            &[Tensor::vector(vec![0.0, 2.0]), Tensor::vector(vec![0.0, -1.0])],
            &[true, true],
        )
        .unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn single_real_source_token() {
        let (store, p) = params(AttentionStyle::Additive, None, 2);
        let src = [Tensor::vector(vec![0.3, 0.1]), Tensor::vector(vec![0.0, 0.0])];
        let s = score_values(&store, &p, &Tensor::vector(vec![0.5, -0.5]), &src, &[true, false]).unwrap();
        assert!(s[0].is_finite());
        assert_eq!(s[1], f64::NEG_INFINITY);
        assert_eq!(weights_from_scores(&s).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn two_by_two_scores_match_scalar_evaluation() {
        let (mut store, p) = params(AttentionStyle::Multiplicative, None, 2);
        let w = [0.5, -1.0, 2.0, 0.25];
        store
            .set_value("attn.W", Tensor::new(vec![2, 2], w.to_vec()).unwrap())
            .unwrap();
        let (t, s0, s1) = ([1.0, 2.0], [0.5, -0.5], [3.0, 1.0]);
        let got = score_values(
            &store,
            &p,
            &Tensor::vector(t.to_vec()),
            &[Tensor::vector(s0.to_vec()), Tensor::vector(s1.to_vec())],
            &[true, true],
        )
        .unwrap();
        // h_tar^T W^T h_src = sum_{r,c} h_src[r] W[r][c] h_tar[c]
        let oracle = |s: [f64; 2]| {
            let mut acc = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    acc += s[r] * w[r * 2 + c] * t[c];
                }
            }
            acc
        };
        assert!((got[0] - oracle(s0)).abs() < 1e-15);
        assert!((got[1] - oracle(s1)).abs() < 1e-15);

        let (mut store, p) = params(AttentionStyle::Additive, None, 2);
        let (w1, w2, va) = ([0.1, 0.2, -0.3, 0.4], [1.0, -0.5, 0.25, 0.75], [0.6, -1.2]);
        store
            .set_value("attn.W_1", Tensor::new(vec![2, 2], w1.to_vec()).unwrap())
            .unwrap();
        store
            .set_value("attn.W_2", Tensor::new(vec![2, 2], w2.to_vec()).unwrap())
            .unwrap();
        store
            .set_value("attn.v_a", Tensor::new(vec![2, 1], va.to_vec()).unwrap())
            .unwrap();
        let got = score_values(
            &store,
            &p,
            &Tensor::vector(t.to_vec()),
            &[Tensor::vector(s0.to_vec())],
            &[true],
        )
        .unwrap();
        let mut oracle = 0.0;
        for r in 0..2 {
            let pre = w1[r * 2] * t[0] + w1[r * 2 + 1] * t[1] + w2[r * 2] * s0[0] + w2[r * 2 + 1] * s0[1];
            oracle += va[r] * pre.tanh();
        }
        assert!((got[0] - oracle).abs() < 1e-15);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weights_from_scores(&[0.7; 4]).unwrap(), vec![0.25; 4]);
        assert!(weights_from_scores(&[f64::NEG_INFINITY; 3]).is_err());
        let mut t = Tape::new();
        let s = t.input(vec![1.0, 2.0]);
        assert!(weights(&mut t, s, &[false, false]).is_err());
    }

    #[test]
    fn context_examples() {
        let h = [Tensor::vector(vec![1.0, 2.0]), Tensor::vector(vec![3.0, -2.0])];
        assert_eq!(context_values(&[0.0, 1.0], &h).unwrap(), h[1]);
        assert_eq!(context_values(&[0.5, 0.5], &h).unwrap().data(), &[2.0, 0.0]);
    }

    #[test]
    fn posterior_mean_is_the_context_and_zero_head_gives_unit_sigma() {
        let (mut store, p) = params(AttentionStyle::Multiplicative, Some(AttnPrior::StandardNormal), 3);
        for name in ["attn.var_out_w", "attn.var_out_b"] {
            let shape = store.by_name(name).unwrap().value.shape().to_vec();
            store.set_value(name, Tensor::zeros(&shape)).unwrap();
        }
        let mut t = Tape::new();
        let vars = p.bind(&mut t, &store);
        let c = t.input(vec![0.1, -0.7, 0.33]);
        let post = attn_posterior(&mut t, &vars, c).unwrap();
        assert_eq!(t.value(post.mu), t.value(c));
        assert_eq!(t.value(post.sigma), &[1.0; 3]);
    }

    #[test]
    fn posterior_sigma_positive() {
        let (store, p) = params(AttentionStyle::Multiplicative, Some(AttnPrior::MeanSource), 4);
        let mut rng = Rng::new(6);
        for _ in 0..20 {
            let mut t = Tape::new();
            let vars = p.bind(&mut t, &store);
            let c = t.input(rng.normal_vec(4));
            let post = attn_posterior(&mut t, &vars, c).unwrap();
            assert!(t.value(post.sigma).iter().all(|&s| s > 0.0));
        }
        let (store, p) = params(AttentionStyle::Multiplicative, None, 4);
        let mut t = Tape::new();
        let vars = p.bind(&mut t, &store);
        let c = t.input(vec![0.0; 4]);
        assert!(attn_posterior(&mut t, &vars, c).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(
            attn_kl_values(&[0.2, 0.4], &[1.0, 1.0], Some(&[0.2, 0.4])).unwrap(),
            0.0
        );
        let mut t = Tape::new();
        let h = t.input(vec![0.5, -0.25]);
        let pad = t.input(vec![9.0, 9.0]);
        let m = mean_source(&mut t, &[h, pad], &[true, false]);
        assert_eq!(t.value(m), &[0.5, -0.25]);
    }

    #[test]
    fn attention_vector_examples() {
        let (mut store, p) = params(AttentionStyle::Multiplicative, None, 2);
        let mut t = Tape::new();
        store.set_value("attn.W_c", Tensor::zeros(&[2, 4])).unwrap();
        let vars = p.bind(&mut t, &store);
        let (c, h) = (t.input(vec![1.0, 2.0]), t.input(vec![3.0, 4.0]));
        let a = attention_vector(&mut t, &vars, c, h);
        assert_eq!(t.value(a), &[0.0, 0.0]);

        let wc = [0.5, -0.25, 1.0, 0.0, 0.2, 0.3, -0.4, 0.9];
        store
            .set_value("attn.W_c", Tensor::new(vec![2, 4], wc.to_vec()).unwrap())
            .unwrap();
        let mut t = Tape::new();
        let vars = p.bind(&mut t, &store);
        let (cv, hv) = ([1.0, 2.0], [3.0, 4.0]);
        let (c, h) = (t.input(cv.to_vec()), t.input(hv.to_vec()));
        let a = attention_vector(&mut t, &vars, c, h);
        let joined = [cv[0], cv[1], hv[0], hv[1]];
        for r in 0..2 {
            let pre: f64 = (0..4).map(|k| wc[r * 4 + k] * joined[k]).sum();
            assert!((t.value(a)[r] - pre.tanh()).abs() < 1e-15);
            assert!(t.value(a)[r].abs() < 1.0);
        }
    }

    #[test]
    fn objective_examples() {
        assert_eq!(ved_objective(4.0, 1.0, &[2.0, 3.0], 0.0, 0.1).unwrap(), 4.0);
        assert_eq!(ved_objective(4.0, 1.0, &[2.0, 3.0], 0.5, 0.0).unwrap(), 4.5);
        assert!((ved_objective(4.0, 1.0, &[2.0, 3.0], 1.0, 0.1).unwrap() - 5.5).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn weights_normalize_and_context_is_convex(
            raw in proptest::collection::vec(-20.0f64..20.0, 1..8),
            src in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 8),
            mask_bits in proptest::collection::vec(proptest::bool::ANY, 8),
        ) {
            let n = raw.len();
            let mut keep: Vec<bool> = mask_bits[..n].to_vec();
            keep[0] = true;
            let scores: Vec<f64> = raw.iter().zip(&keep).map(|(&s, &k)| if k { s } else { f64::NEG_INFINITY }).collect();
            let w = weights_from_scores(&scores).unwrap();
            proptest::prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (wi, k) in w.iter().zip(&keep) {
                proptest::prop_assert!(*wi >= 0.0);
                if !k { proptest::prop_assert_eq!(*wi, 0.0); }
            }
            let hs: Vec<Tensor> = src[..n].iter().map(|v| Tensor::vector(v.clone())).collect();
            let c = context_values(&w, &hs).unwrap();
            for d in 0..3 {
                let lo = hs.iter().map(|h| h.data()[d]).fold(f64::INFINITY, f64::min);
                let hi = hs.iter().map(|h| h.data()[d]).fold(f64::NEG_INFINITY, f64::max);
                proptest::prop_assert!(c.data()[d] >= lo - 1e-12 && c.data()[d] <= hi + 1e-12);
            }
        }
    }
}
