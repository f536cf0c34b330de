//! Central finite-difference check of a model's full training objective.

use crate::error::Result;
use crate::params::ParamId;
use crate::rng::Rng;
use crate::seq2seq::Seq2SeqModel;
use crate::tape::Tape;
use crate::train::{accumulate_batch_gradients, batch_objective, Pair};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    /// Analytic and numeric values at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSettings {
    pub lambda: f64,
    pub gamma_a: f64,
    pub dropout_p: f64,
    pub noise_seed: u64,
    pub step: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            lambda: 0.7,
            gamma_a: 0.5,
            dropout_p: 0.25,
            noise_seed: 11,
            step: 1e-5,
            floor: 1e-5,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn loss_value(model: &Seq2SeqModel, batch: &[&Pair], s: &GradCheckSettings) -> Result<f64> {
    let mut tape = Tape::new();
    let mut rng = Rng::new(s.noise_seed);
    let (loss, _) = batch_objective(model, &mut tape, batch, s.lambda, s.gamma_a, s.dropout_p, &mut rng)?;
    tape.check_finite()?;
    Ok(tape.scalar(loss))
}

/// Compare backpropagated gradients with central differences for every
/// parameter entry. Noise and word dropout are replayed from the same seed
/// for every evaluation, so the objective is a fixed function of the weights.
pub fn check_model(model: &Seq2SeqModel, batch: &[Pair], s: &GradCheckSettings) -> Result<GradCheck> {
    let refs: Vec<&Pair> = batch.iter().collect();
    let mut analytic = model.clone();
    analytic.store.zero_grad();
    accumulate_batch_gradients(
        &mut analytic,
        &refs,
        s.lambda,
        s.gamma_a,
        s.dropout_p,
        &mut Rng::new(s.noise_seed),
    )?;

    let mut probe = model.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for (pi, param) in analytic.store.iter().enumerate() {
        for k in 0..param.value.len() {
            let id = ParamId(pi);
            let orig = model.store.get(id).value.data()[k];
            let set = |probe: &mut Seq2SeqModel, v: f64| {
                probe.store.get_mut(id).value.data_mut()[k] = v;
            };
            set(&mut probe, orig + s.step);
            let up = loss_value(&probe, &refs, s)?;
            set(&mut probe, orig - s.step);
            let down = loss_value(&probe, &refs, s)?;
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * s.step);
            let err = relative_error(param.grad.data()[k], numeric, s.floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{}[{k}]", param.name);
                report.worst_values = (param.grad.data()[k], numeric);
            }
        }
    }
    Ok(report)
}
