//! Gaussian latent code: posterior head, reparameterized sampling, closed-form
//! KL against a unit-covariance prior, and the KL / word-dropout schedules.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Diagonal Gaussian `N(mu, sigma^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Tensor,
    pub sigma: Tensor,
}

/// Linear maps from the encoder's final hidden state to the mean and the
/// log-variance of q(z|x).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorHead {
    pub d_h: usize,
    pub d_z: usize,
    mu_w: ParamId,
    mu_b: ParamId,
    lv_w: ParamId,
    lv_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct PosteriorHeadVars {
    mu_w: Var,
    mu_b: Var,
    lv_w: Var,
    lv_b: Var,
}

/// Posterior parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mu: Var,
    pub log_var: Var,
    pub sigma: Var,
}

impl PosteriorHead {
    pub fn new(store: &mut ParamStore, prefix: &str, d_h: usize, d_z: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            d_h,
            d_z,
            mu_w: store.add_glorot(format!("{prefix}.mu_w"), d_z, d_h, rng)?,
            mu_b: store.add_const(format!("{prefix}.mu_b"), d_z, 0.0)?,
            lv_w: store.add_glorot(format!("{prefix}.logvar_w"), d_z, d_h, rng)?,
            lv_b: store.add_const(format!("{prefix}.logvar_b"), d_z, 0.0)?,
        })
    }

    pub fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(&format!("{prefix}.{n}"))
                .ok_or_else(|| Error::InvalidArgument(format!("missing {prefix}.{n}")))
        };
        let mu_w = get("mu_w")?;
        let shape = store.get(mu_w).value.shape();
        Ok(Self {
            d_z: shape[0],
            d_h: shape[1],
            mu_w,
            mu_b: get("mu_b")?,
            lv_w: get("logvar_w")?,
            lv_b: get("logvar_b")?,
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> PosteriorHeadVars {
        PosteriorHeadVars {
            mu_w: tape.param(store, self.mu_w),
            mu_b: tape.param(store, self.mu_b),
            lv_w: tape.param(store, self.lv_w),
            lv_b: tape.param(store, self.lv_b),
        }
    }
}

/// `mu = A_mu h + b_mu`, `log sigma^2 = A_s h + b_s`, `sigma = exp(log sigma^2 / 2)`.
pub fn posterior_from_hidden(tape: &mut Tape, head: &PosteriorHeadVars, h: Var) -> GaussianVars {
    let mu_lin = tape.matvec(head.mu_w, h);
    let mu = tape.add(mu_lin, head.mu_b);
    let lv_lin = tape.matvec(head.lv_w, h);
    let log_var = tape.add(lv_lin, head.lv_b);
    GaussianVars {
        mu,
        log_var,
        sigma: sigma_from_log_var(tape, log_var),
    }
}

pub(crate) fn sigma_from_log_var(tape: &mut Tape, log_var: Var) -> Var {
    let half = tape.scale(log_var, 0.5);
    tape.exp(half)
}

/// `mu + scale * sigma * eps`. The noise is a constant leaf, so no gradient
/// reaches it.
pub fn reparameterize_on_tape(tape: &mut Tape, post: &GaussianVars, eps: &[f64], scale: f64) -> Result<Var> {
    let d = tape.len_of(post.mu);
    if eps.len() != d {
        return Err(Error::Shape(format!("noise has {} dims, posterior {d}", eps.len())));
    }
    let e = tape.input(eps.iter().map(|x| x * scale).collect());
    let noise = tape.mul(post.sigma, e);
    Ok(tape.add(post.mu, noise))
}

/// `KL(N(mu, exp(log_var)) || N(prior_mean, I))`; a missing prior mean is 0.
pub fn kl_on_tape(tape: &mut Tape, mu: Var, log_var: Var, prior_mean: Option<Var>) -> Var {
    let d = tape.len_of(mu) as f64;
    let diff = match prior_mean {
        Some(m) => tape.sub(mu, m),
        None => mu,
    };
    let sq = tape.square(diff);
    let var = tape.exp(log_var);
    let var_minus_log = tape.sub(var, log_var);
    let terms = tape.add(sq, var_minus_log);
    let total = tape.sum(terms);
    let centered = tape.offset(total, -d);
    tape.scale(centered, 0.5)
}

/// `z = mu + sigma * eps`.
pub fn reparameterize(post: &GaussianPosterior, eps: &Tensor) -> Result<Tensor> {
    if eps.len() != post.mu.len() || post.sigma.len() != post.mu.len() {
        return Err(Error::Shape(format!(
            "mu {:?}, sigma {:?}, eps {:?}",
            post.mu.shape(),
            post.sigma.shape(),
            eps.shape()
        )));
    }
    let z = post
        .mu
        .data()
        .iter()
        .zip(post.sigma.data())
        .zip(eps.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    Ok(Tensor::vector(z))
}

/// KL divergence between two diagonal Gaussians where the second has unit
/// variance: `1/2 sum(sigma^2 + (mu - m)^2 - 1 - log sigma^2)`.
pub fn kl_to_unit_gaussian(mu: &[f64], sigma: &[f64], prior_mean: Option<&[f64]>) -> Result<f64> {
    if mu.len() != sigma.len() || prior_mean.is_some_and(|m| m.len() != mu.len()) {
        return Err(Error::Shape("kl: mismatched lengths".into()));
    }
    if sigma.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::InvalidArgument("kl: sigma must be positive".into()));
    }
    let mut kl = 0.0;
    for (d, (&m, &s)) in mu.iter().zip(sigma).enumerate() {
        let diff = m - prior_mean.map_or(0.0, |p| p[d]);
        let var = s * s;
        kl += var + diff * diff - 1.0 - var.ln();
    }
    Ok(0.5 * kl)
}

/// `KL(q || N(0, I))`, always >= 0.
pub fn kl_standard_normal(post: &GaussianPosterior) -> Result<f64> {
    kl_to_unit_gaussian(post.mu.data(), post.sigma.data(), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnealKind {
    Constant,
    Tanh,
    Linear,
}

/// KL weight as a function of the training iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub kind: AnnealKind,
    /// Used by `Constant` only.
    pub lambda_const: f64,
    /// Iteration after which the weight stays at its value at this point.
    pub freeze_at: u64,
}

impl AnnealSchedule {
    pub fn constant(lambda: f64) -> Self {
        Self {
            kind: AnnealKind::Constant,
            lambda_const: lambda,
            freeze_at: 0,
        }
    }

    pub fn tanh(freeze_at: u64) -> Self {
        Self {
            kind: AnnealKind::Tanh,
            lambda_const: 0.0,
            freeze_at,
        }
    }

    pub fn linear(freeze_at: u64) -> Self {
        Self {
            kind: AnnealKind::Linear,
            lambda_const: 0.0,
            freeze_at,
        }
    }

    fn raw(&self, i: u64) -> f64 {
        match self.kind {
            AnnealKind::Constant => self.lambda_const,
            AnnealKind::Tanh => ((((i as f64) - 4500.0) / 1000.0).tanh() + 1.0) / 2.0,
            AnnealKind::Linear => (i as f64 / 200_000.0).min(1.0),
        }
    }

    /// Weight held after the freeze point.
    pub fn frozen_value(&self) -> f64 {
        self.raw(self.freeze_at)
    }
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self::tanh(3000)
    }
}

/// KL weight at iteration `i`.
pub fn kl_weight(schedule: &AnnealSchedule, i: u64) -> f64 {
    match schedule.kind {
        AnnealKind::Constant => schedule.lambda_const,
        AnnealKind::Tanh | AnnealKind::Linear => schedule.raw(i.min(schedule.freeze_at)),
    }
}

/// Word-dropout rate: 0 at the start, +0.05 per completed epoch, capped at 0.5.
pub fn dropout_schedule(epoch: u64) -> f64 {
    epoch.min(10) as f64 / 20.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub rec: f64,
    pub kl_z: f64,
    pub lambda: f64,
    pub total: f64,
}

/// `total = rec + lambda * kl_z`.
pub fn vae_objective(rec: f64, kl_z: f64, lambda: f64) -> Result<VaeLoss> {
    if kl_z < 0.0 {
        return Err(Error::InvalidArgument(format!("negative KL {kl_z}")));
    }
    Ok(VaeLoss {
        rec,
        kl_z,
        lambda,
        total: rec + lambda * kl_z,
    })
}
