//! Per-example objectives with closed-form logit gradients.
//!
//! Teacher objective (difficulty-aware uncertainty shaping):
//!
//! ```text
//! L_T = l_ce * (-ln p_y) + l_f * (-a_y (1 - p_y)^g ln p_y) - l_h * w * H(p)
//! w   = [p_y < tau] + rho * (1 - p_y)^beta
//! ```
//!
//! Student objective (tempered distillation toward a calibrated target `t`):
//!
//! ```text
//! L_S = l_kd * T^2 * KL(t^(T) || softmax(z / T)) + l_ce * (-ln softmax(z)_y)
//! ```
//!
//! with `t^(T) = softmax(ln t / T)`. Batch reduction is the arithmetic mean and
//! is done by the caller.

use serde::{Deserialize, Serialize};

use crate::calibrate::CalibratedTarget;
use crate::error::{CudError, Result};
use crate::simplex::{self, Distribution, Logits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DusParams {
    pub lambda_ce: f64,
    pub lambda_f: f64,
    pub lambda_h: f64,
    pub alpha_y: f64,
    pub gamma: f64,
    /// Threshold of the gate indicator `[p_y < tau]`.
    pub gate_threshold_tau: f64,
    pub gate_rho: f64,
    pub gate_beta: f64,
    /// Differentiate through the smooth part of the gate instead of treating
    /// the whole gate as a per-example constant.
    pub grad_through_gate: bool,
}

impl Default for DusParams {
    fn default() -> Self {
        DusParams {
            lambda_ce: 1.0,
            lambda_f: 1.0,
            lambda_h: 0.1,
            alpha_y: 1.0,
            gamma: 10.0,
            gate_threshold_tau: 0.5,
            gate_rho: 1.0,
            gate_beta: 2.0,
            grad_through_gate: false,
        }
    }
}

impl DusParams {
    /// Plain cross-entropy: the focal and entropy terms switched off.
    pub fn cross_entropy_only() -> Self {
        DusParams {
            lambda_f: 0.0,
            lambda_h: 0.0,
            ..DusParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_ce", self.lambda_ce),
            ("lambda_f", self.lambda_f),
            ("lambda_h", self.lambda_h),
            ("gamma", self.gamma),
            ("gate_rho", self.gate_rho),
            ("gate_beta", self.gate_beta),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CudError::Parameter(format!(
                    "dus.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.lambda_ce == 0.0 && self.lambda_f == 0.0 {
            return Err(CudError::Parameter(
                "dus.lambda_ce and dus.lambda_f cannot both be zero".into(),
            ));
        }
        if !(self.alpha_y > 0.0 && self.alpha_y <= 1.0) {
            return Err(CudError::Parameter(format!(
                "dus.alpha_y must lie in (0, 1], got {}",
                self.alpha_y
            )));
        }
        if !(self.gate_threshold_tau > 0.0 && self.gate_threshold_tau < 1.0) {
            return Err(CudError::Parameter(format!(
                "dus.gate_threshold_tau must lie in (0, 1), got {}",
                self.gate_threshold_tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdParams {
    pub lambda_kd: f64,
    pub lambda_ce_student: f64,
    pub kd_temperature: f64,
}

impl Default for KdParams {
    fn default() -> Self {
        KdParams {
            lambda_kd: 0.8,
            lambda_ce_student: 0.2,
            kd_temperature: 2.0,
        }
    }
}

impl KdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_kd >= 0.0 && self.lambda_ce_student >= 0.0) {
            return Err(CudError::Parameter("kd weights must be >= 0".into()));
        }
        if self.lambda_kd + self.lambda_ce_student <= 0.0 {
            return Err(CudError::Parameter(
                "kd.lambda_kd + kd.lambda_ce_student must be positive".into(),
            ));
        }
        if !(self.kd_temperature.is_finite() && self.kd_temperature > 0.0) {
            return Err(CudError::Parameter(format!(
                "kd.kd_temperature must be positive, got {}",
                self.kd_temperature
            )));
        }
        Ok(())
    }
}

fn check_label(label: usize, num_classes: usize) -> Result<()> {
    if label < num_classes {
        Ok(())
    } else {
        Err(CudError::Parameter(format!(
            "label {label} out of range for {num_classes} classes"
        )))
    }
}

/// `-ln p_y` on the floored distribution.
pub fn cross_entropy(dist: &Distribution, label: usize) -> Result<f64> {
    check_label(label, dist.num_classes())?;
    Ok(-dist.floored().get(label).ln())
}

/// `-alpha_y (1 - p_y)^gamma ln p_y`.
pub fn focal_term(dist: &Distribution, label: usize, alpha_y: f64, gamma: f64) -> Result<f64> {
    let ce = cross_entropy(dist, label)?;
    let p_y = dist.get(label);
    Ok(alpha_y * focal_weight(p_y, gamma) * ce)
}

fn focal_weight(p_y: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        (1.0 - p_y).max(0.0).powf(gamma)
    }
}

/// `w = [p_y < tau] + rho (1 - p_y)^beta`.
pub fn difficulty_gate(p_y: f64, params: &DusParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_y) {
        return Err(CudError::Parameter(format!("p_y must lie in [0, 1], got {p_y}")));
    }
    let indicator = if p_y < params.gate_threshold_tau { 1.0 } else { 0.0 };
    Ok(indicator + params.gate_rho * (1.0 - p_y).powf(params.gate_beta))
}

/// The three additive pieces of the teacher objective, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherTerms {
    pub cross_entropy: f64,
    pub focal: f64,
    pub gate: f64,
    pub entropy: f64,
}

impl TeacherTerms {
    pub fn total(&self, params: &DusParams) -> f64 {
        params.lambda_ce * self.cross_entropy + params.lambda_f * self.focal
            - params.lambda_h * self.gate * self.entropy
    }
}

pub fn teacher_terms(logits: &Logits, label: usize, params: &DusParams) -> Result<TeacherTerms> {
    check_label(label, logits.len())?;
    let p = simplex::softmax(logits, 1.0)?;
    let p_y = p.get(label);
    Ok(TeacherTerms {
        cross_entropy: cross_entropy(&p, label)?,
        focal: focal_term(&p, label, params.alpha_y, params.gamma)?,
        gate: difficulty_gate(p_y, params)?,
        entropy: simplex::entropy(&p),
    })
}

pub fn teacher_loss(logits: &Logits, label: usize, params: &DusParams) -> Result<f64> {
    Ok(teacher_terms(logits, label, params)?.total(params))
}

/// `dL_T / dz`. The gate indicator has zero derivative; the smooth part of the
/// gate is differentiated only when `params.grad_through_gate` is set.
pub fn teacher_loss_grad(logits: &Logits, label: usize, params: &DusParams) -> Result<Vec<f64>> {
    check_label(label, logits.len())?;
    let p = simplex::softmax(logits, 1.0)?;
    let probs = p.probs();
    let p_y = probs[label];
    let c = probs.len();

    // dp_y/dz_j = p_y ([j = y] - p_j); collect scalar coefficients on it.
    let log_py = p.floored().get(label).ln();
    let mut coef_py = 0.0;

    if params.lambda_f != 0.0 {
        // d/dp_y of -a (1-p)^g ln p = a [g (1-p)^(g-1) ln p - (1-p)^g / p]
        let one_minus = (1.0 - p_y).max(0.0);
        let pow_term = if params.gamma == 0.0 || one_minus == 0.0 {
            0.0
        } else {
            params.gamma * one_minus.powf(params.gamma - 1.0) * log_py
        };
        let d_focal = params.alpha_y * (pow_term - focal_weight(p_y, params.gamma) / p_y.max(f64::MIN_POSITIVE));
        coef_py += params.lambda_f * d_focal;
    }

    let entropy = simplex::entropy(&p);
    let gate = difficulty_gate(p_y, params)?;
    if params.grad_through_gate && params.lambda_h != 0.0 {
        let one_minus = (1.0 - p_y).max(0.0);
        let d_gate = if params.gate_beta == 0.0 || one_minus == 0.0 {
            0.0
        } else {
            -params.gate_rho * params.gate_beta * one_minus.powf(params.gate_beta - 1.0)
        };
        coef_py -= params.lambda_h * entropy * d_gate;
    }

    let mut grad = vec![0.0; c];
    for j in 0..c {
        let onehot = if j == label { 1.0 } else { 0.0 };
        let dpy = p_y * (onehot - probs[j]);
        let d_ce = probs[j] - onehot;
        // dH/dz_j = -p_j (ln p_j + H)
        let d_h = if probs[j] > 0.0 {
            -probs[j] * (probs[j].ln() + entropy)
        } else {
            0.0
        };
        grad[j] = params.lambda_ce * d_ce + coef_py * dpy - params.lambda_h * gate * d_h;
    }
    Ok(grad)
}

fn tempered_pair(
    student_logits: &Logits,
    target: &CalibratedTarget,
    temperature: f64,
) -> Result<(Distribution, Distribution)> {
    if target.dist.num_classes() != student_logits.len() {
        return Err(CudError::Dimension {
            expected: student_logits.len(),
            actual: target.dist.num_classes(),
        });
    }
    let t = simplex::resoften(&target.dist.floored(), temperature)?;
    let s = simplex::softmax(student_logits, temperature)?;
    Ok((t, s))
}

pub fn student_loss(
    student_logits: &Logits,
    target: &CalibratedTarget,
    label: Option<usize>,
    params: &KdParams,
) -> Result<f64> {
    let tau = params.kd_temperature;
    let mut loss = 0.0;
    if params.lambda_kd != 0.0 {
        let (t, s) = tempered_pair(student_logits, target, tau)?;
        loss += params.lambda_kd * tau * tau * simplex::kl_divergence(&t, &s.floored())?;
    }
    if let (Some(y), true) = (label, params.lambda_ce_student != 0.0) {
        let p = simplex::softmax(student_logits, 1.0)?;
        loss += params.lambda_ce_student * cross_entropy(&p, y)?;
    }
    Ok(loss)
}

/// `dL_S / dz = l_kd * T * (softmax(z/T) - t^(T)) + l_ce * (softmax(z) - e_y)`.
pub fn student_loss_grad(
    student_logits: &Logits,
    target: &CalibratedTarget,
    label: Option<usize>,
    params: &KdParams,
) -> Result<Vec<f64>> {
    let tau = params.kd_temperature;
    let mut grad = vec![0.0; student_logits.len()];
    if params.lambda_kd != 0.0 {
        let (t, s) = tempered_pair(student_logits, target, tau)?;
        for (g, (sk, tk)) in grad.iter_mut().zip(s.probs().iter().zip(t.probs())) {
            *g += params.lambda_kd * tau * (sk - tk);
        }
    }
    if let (Some(y), true) = (label, params.lambda_ce_student != 0.0) {
        check_label(y, student_logits.len())?;
        let p = simplex::softmax(student_logits, 1.0)?;
        for (j, (g, pj)) in grad.iter_mut().zip(p.probs()).enumerate() {
            let onehot = if j == y { 1.0 } else { 0.0 };
            *g += params.lambda_ce_student * (pj - onehot);
        }
    }
    Ok(grad)
}
