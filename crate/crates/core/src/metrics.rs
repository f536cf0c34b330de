//! BLEU-j, unigram entropy and distinct-n.
//!
//! Inputs are token lists that already have special tokens stripped.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::io::Write;

use crate::error::{Error, Result};

fn ngrams<T>(tokens: &[T], n: usize) -> impl Iterator<Item = &[T]> {
    tokens.windows(n.max(1)).filter(move |_| n > 0)
}

/// `min(1, |gen| / |ref|) * p_j`, where `p_j` is the clipped j-gram precision
/// of `generated` against a single reference. No smoothing: a generated
/// sentence with no j-grams (or none matching) scores 0.
pub fn bleu_j<T: Eq + Hash>(generated: &[T], reference: &[T], j: usize) -> Result<f64> {
    if !(1..=4).contains(&j) {
        return Err(Error::InvalidArgument(format!("BLEU order {j} not in 1..=4")));
    }
    if generated.len() < j {
        return Ok(0.0);
    }
    let mut ref_counts: HashMap<&[T], usize> = HashMap::new();
    for g in ngrams(reference, j) {
        *ref_counts.entry(g).or_default() += 1;
    }
    let mut gen_counts: HashMap<&[T], usize> = HashMap::new();
    for g in ngrams(generated, j) {
        *gen_counts.entry(g).or_default() += 1;
    }
    let total = generated.len() + 1 - j;
    let clipped: usize = gen_counts
        .iter()
        .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    let precision = clipped as f64 / total as f64;
    let brevity = if reference.is_empty() {
        1.0
    } else {
        (generated.len() as f64 / reference.len() as f64).min(1.0)
    };
    Ok(brevity * precision)
}

/// Mean BLEU-j over (generated, reference) pairs.
pub fn corpus_bleu<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<T>)], j: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("BLEU pairs"));
    }
    let mut sum = 0.0;
    for (g, r) in pairs {
        sum += bleu_j(g, r, j)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Entropy in nats of the unigram distribution pooled over every sentence.
pub fn entropy<T: Eq + Hash>(set: &[Vec<T>]) -> Result<f64> {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    let mut total = 0usize;
    for tok in set.iter().flatten() {
        *counts.entry(tok).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Empty("sentence set"));
    }
    let n = total as f64;
    Ok(-counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}

/// Distinct n-grams over total n-grams across the set.
pub fn distinct_n<T: Eq + Hash>(set: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("distinct-n needs n >= 1".into()));
    }
    let mut seen: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for sent in set {
        for g in ngrams(sent, n) {
            seen.insert(g);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("n-grams (every sentence is shorter than n)"));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub model: String,
    pub inference: String,
    pub bleu: [f64; 4],
    /// Absent in MAP mode.
    pub entropy: Option<f64>,
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    pub inputs: usize,
    pub samples_per_input: usize,
}

pub const REPORT_HEADER: &str = "model,inference,bleu_1,bleu_2,bleu_3,bleu_4,entropy,distinct_1,distinct_2";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            self.model,
            self.inference,
            self.bleu[0],
            self.bleu[1],
            self.bleu[2],
            self.bleu[3],
            opt(self.entropy),
            opt(self.distinct_1),
            opt(self.distinct_2)
        )
    }
}

pub fn write_reports(out: &mut impl Write, reports: &[MetricsReport]) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
