//! Points on the probability simplex and the arithmetic the rest of the crate
//! builds on: tempered softmax, re-softening, entropy and KL divergence.
//!
//! All logarithms are natural; entropies and divergences are in nats.

use serde::{Deserialize, Serialize};

use crate::error::{CudError, Result};

/// Tolerance on `|sum - 1|` for a valid [`Distribution`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Entries are floored at this value (then renormalized) before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Unnormalized pre-softmax scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(CudError::Parameter(format!(
                "logits need at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CudError::Domain(format!("non-finite logit at index {i}")));
        }
        Ok(Logits(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Logits {
    type Error = CudError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Logits::new(v)
    }
}

impl From<Logits> for Vec<f64> {
    fn from(l: Logits) -> Self {
        l.0
    }
}

/// A validated point on the probability simplex: every entry is non-negative
/// and the entries sum to one within [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(CudError::Parameter(format!(
                "distribution needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(CudError::Domain(format!(
                "probability at index {i} is {} (must be finite and >= 0)",
                probs[i]
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CudError::Domain(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Distribution(probs))
    }

    /// Normalizes non-negative weights onto the simplex.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(CudError::Domain(format!(
                "cannot normalize weights with total {total}"
            )));
        }
        Distribution::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(CudError::Parameter("uniform needs >= 2 classes".into()));
        }
        Ok(Distribution(vec![1.0 / num_classes as f64; num_classes]))
    }

    pub fn one_hot(num_classes: usize, index: usize) -> Result<Self> {
        if num_classes < 2 || index >= num_classes {
            return Err(CudError::Parameter(format!(
                "one-hot index {index} invalid for {num_classes} classes"
            )));
        }
        let mut v = vec![0.0; num_classes];
        v[index] = 1.0;
        Ok(Distribution(v))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max_prob(&self) -> f64 {
        self.0[self.argmax()]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|p| *p > 0.0)
    }

    /// Floors every entry at [`PROB_FLOOR`] and renormalizes. Returns `self`
    /// unchanged (bitwise) when no entry is below the floor.
    pub fn floored(&self) -> Distribution {
        if self.0.iter().all(|p| *p >= PROB_FLOOR) {
            return self.clone();
        }
        let raised: Vec<f64> = self.0.iter().map(|p| p.max(PROB_FLOOR)).collect();
        let total: f64 = raised.iter().sum();
        Distribution(raised.into_iter().map(|p| p / total).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = CudError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Distribution::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(CudError::Parameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )))
    }
}

/// Max-subtracted softmax of `scores / temperature` on a raw slice.
pub(crate) fn softmax_slice(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `softmax(z / temperature)`.
pub fn softmax(logits: &Logits, temperature: f64) -> Result<Distribution> {
    check_temperature(temperature)?;
    Ok(Distribution(softmax_slice(logits.as_slice(), temperature)))
}

/// Re-tempers a distribution: `softmax(ln p / temperature)`, i.e. `p^(1/T)`
/// renormalized. Every entry must be strictly positive; apply
/// [`Distribution::floored`] first if the input may contain zeros.
pub fn resoften(dist: &Distribution, temperature: f64) -> Result<Distribution> {
    check_temperature(temperature)?;
    if !dist.is_strictly_positive() {
        return Err(CudError::Domain(
            "resoften requires strictly positive probabilities (floor first)".into(),
        ));
    }
    if temperature == 1.0 {
        return Ok(dist.clone());
    }
    let logs: Vec<f64> = dist.0.iter().map(|p| p.ln()).collect();
    Ok(Distribution(softmax_slice(&logs, temperature)))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &Distribution) -> f64 {
    entropy_slice(&dist.0)
}

pub(crate) fn entropy_slice(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|x| **x > 0.0)
        .map(|x| -x * x.ln())
        .sum();
    h.max(0.0)
}

/// `KL(p || q)` in nats. `q` must be positive wherever `p` is.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.num_classes() != q.num_classes() {
        return Err(CudError::Dimension {
            expected: p.num_classes(),
            actual: q.num_classes(),
        });
    }
    let mut kl = 0.0;
    for (k, (pk, qk)) in p.0.iter().zip(&q.0).enumerate() {
        if *pk == 0.0 {
            continue;
        }
        if *qk <= 0.0 {
            return Err(CudError::Domain(format!(
                "q has zero mass at class {k} where p = {pk}"
            )));
        }
        kl += pk * (pk / qk).ln();
    }
    Ok(kl.max(0.0))
}
