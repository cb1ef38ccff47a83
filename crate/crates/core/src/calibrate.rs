//! Target-calibration operators.
//!
//! * [`w_clip`]: moves a budgeted, margin-limited mass from a wrong top-1
//!   class to the true class and leaves every other entry untouched.
//! * [`exact_tilt_projection`]: the KL-optimal distribution that caps the mass
//!   on one class. The solution is an exponential tilt of the input: the capped
//!   entry is scaled by `exp(-nu)` and the whole vector renormalized, so every
//!   other pair of classes keeps its ratio.
//! * [`temperature_scale`] and [`label_smooth`]: rule-based baselines.

use serde::{Deserialize, Serialize};

use crate::error::{CudError, Result};
use crate::simplex::{self, Distribution, Logits};

/// Upper end of the bracket searched for the tilt dual variable.
pub const TILT_NU_MAX: f64 = 50.0;
pub const TILT_MAX_ITERATIONS: usize = 200;
/// Required accuracy of the constraint residual at the returned dual variable.
pub const TILT_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WClipParams {
    /// Fraction of the wrong top-1 mass that may be removed, in (0, 1).
    pub eta: f64,
    /// Scale on the over-confidence margin `p[k*] - p[y]`, in (0, 1].
    pub margin_scale_m: f64,
}

impl Default for WClipParams {
    fn default() -> Self {
        WClipParams {
            eta: 0.5,
            margin_scale_m: 0.7,
        }
    }
}

impl WClipParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(CudError::Parameter(format!(
                "wclip.eta must lie in (0, 1), got {}",
                self.eta
            )));
        }
        if !(self.margin_scale_m > 0.0 && self.margin_scale_m <= 1.0) {
            return Err(CudError::Parameter(format!(
                "wclip.margin_scale_m must lie in (0, 1], got {}",
                self.margin_scale_m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOperator {
    Identity,
    WClip,
    ExactTilt,
    TempScale,
    LabelSmooth,
}

/// A teacher target after calibration, with a record of what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedTarget {
    pub dist: Distribution,
    pub operator: TargetOperator,
    /// Mass removed from the wrong top-1 class (zero for identity targets).
    pub delta_applied: f64,
    pub constraint_active: bool,
}

impl CalibratedTarget {
    pub fn identity(dist: Distribution) -> Self {
        CalibratedTarget {
            dist,
            operator: TargetOperator::Identity,
            delta_applied: 0.0,
            constraint_active: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltSolution {
    /// Dual variable of the wrong-mass cap; zero iff the cap is inactive.
    pub nu: f64,
    /// Normalizer of the tilted vector.
    pub partition_z: f64,
    pub iterations: usize,
}

fn check_label(label: usize, num_classes: usize) -> Result<()> {
    if label < num_classes {
        Ok(())
    } else {
        Err(CudError::Parameter(format!(
            "class index {label} out of range for {num_classes} classes"
        )))
    }
}

/// Mass W-Clip removes from the wrong top-1 class `k*`:
/// `min(eta * p[k*], m * (p[k*] - p[y]))`, or zero when `k* == y`.
pub fn w_clip_delta(dist: &Distribution, true_label: usize, params: &WClipParams) -> Result<f64> {
    check_label(true_label, dist.num_classes())?;
    params.validate()?;
    let top = dist.argmax();
    if top == true_label {
        return Ok(0.0);
    }
    let p_top = dist.get(top);
    let budget = params.eta * p_top;
    let margin = params.margin_scale_m * (p_top - dist.get(true_label));
    Ok(budget.min(margin).max(0.0))
}

/// Wrong-mass clipping. A correct top-1 prediction passes through unchanged;
/// otherwise exactly two entries move: `y` gains `delta` and `k*` loses it.
pub fn w_clip(
    dist: &Distribution,
    true_label: usize,
    params: &WClipParams,
) -> Result<CalibratedTarget> {
    let delta = w_clip_delta(dist, true_label, params)?;
    let top = dist.argmax();
    if top == true_label {
        return Ok(CalibratedTarget::identity(dist.clone()));
    }
    let mut probs = dist.probs().to_vec();
    probs[true_label] += delta;
    probs[top] -= delta;
    Ok(CalibratedTarget {
        dist: Distribution::new(probs)?,
        operator: TargetOperator::WClip,
        delta_applied: delta,
        constraint_active: delta > 0.0,
    })
}

/// KL projection of `dist` onto `{q : q[wrong_class] <= max_wrong_mass}`.
///
/// The minimizer of `KL(q || p)` under this cap is
/// `q_k = p_k exp(-nu [k = wrong_class]) / Z`. `nu` is found by bisection on
/// `g(nu) = p_w e^-nu / (p_w e^-nu + 1 - p_w) - max_wrong_mass`, which is
/// strictly decreasing.
pub fn exact_tilt_projection(
    dist: &Distribution,
    wrong_class: usize,
    max_wrong_mass: f64,
) -> Result<(CalibratedTarget, TiltSolution)> {
    check_label(wrong_class, dist.num_classes())?;
    if !(max_wrong_mass > 0.0 && max_wrong_mass < 1.0) {
        return Err(CudError::Parameter(format!(
            "max_wrong_mass must lie in (0, 1), got {max_wrong_mass}"
        )));
    }
    if dist.get(wrong_class) <= max_wrong_mass {
        return Ok((
            CalibratedTarget::identity(dist.clone()),
            TiltSolution {
                nu: 0.0,
                partition_z: 1.0,
                iterations: 0,
            },
        ));
    }

    let p = dist.floored();
    let p_w = p.get(wrong_class);
    let rest: f64 = p
        .probs()
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != wrong_class)
        .map(|(_, v)| v)
        .sum();
    let residual = |nu: f64| {
        let tilted = p_w * (-nu).exp();
        tilted / (tilted + rest) - max_wrong_mass
    };

    let (mut lo, mut hi) = (0.0, TILT_NU_MAX);
    if residual(hi) > 0.0 {
        return Err(CudError::Numerical(format!(
            "wrong-mass cap {max_wrong_mass} unreachable with nu <= {TILT_NU_MAX}"
        )));
    }
    let mut nu = 0.5 * (lo + hi);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let g = residual(nu);
        if g.abs() <= TILT_RESIDUAL_TOL {
            break;
        }
        if iterations >= TILT_MAX_ITERATIONS {
            return Err(CudError::Numerical(format!(
                "tilt bisection did not converge in {TILT_MAX_ITERATIONS} iterations (residual {g})"
            )));
        }
        if g > 0.0 {
            lo = nu;
        } else {
            hi = nu;
        }
        nu = 0.5 * (lo + hi);
    }

    let scale = (-nu).exp();
    let partition_z = p_w * scale + rest;
    let probs: Vec<f64> = p
        .probs()
        .iter()
        .enumerate()
        .map(|(k, v)| {
            if k == wrong_class {
                v * scale / partition_z
            } else {
                v / partition_z
            }
        })
        .collect();
    let removed = dist.get(wrong_class) - probs[wrong_class];
    Ok((
        CalibratedTarget {
            dist: Distribution::new(probs)?,
            operator: TargetOperator::ExactTilt,
            delta_applied: removed,
            constraint_active: true,
        },
        TiltSolution {
            nu,
            partition_z,
            iterations,
        },
    ))
}

pub fn temperature_scale(logits: &Logits, temperature: f64) -> Result<CalibratedTarget> {
    Ok(CalibratedTarget {
        dist: simplex::softmax(logits, temperature)?,
        operator: TargetOperator::TempScale,
        delta_applied: 0.0,
        constraint_active: false,
    })
}

/// `1 - eps` on the true label and `eps / (C - 1)` on every other class.
pub fn label_smooth(true_label: usize, num_classes: usize, eps_ls: f64) -> Result<CalibratedTarget> {
    if num_classes < 2 {
        return Err(CudError::Parameter("label smoothing needs >= 2 classes".into()));
    }
    check_label(true_label, num_classes)?;
    if !(0.0..1.0).contains(&eps_ls) {
        return Err(CudError::Parameter(format!(
            "label smoothing epsilon must lie in [0, 1), got {eps_ls}"
        )));
    }
    let off = eps_ls / (num_classes - 1) as f64;
    let mut probs = vec![off; num_classes];
    probs[true_label] = 1.0 - eps_ls;
    Ok(CalibratedTarget {
        dist: Distribution::new(probs)?,
        operator: TargetOperator::LabelSmooth,
        delta_applied: 0.0,
        constraint_active: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::kl_divergence;
    use rand::Rng;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    const DEFAULTS: WClipParams = WClipParams {
        eta: 0.5,
        margin_scale_m: 0.7,
    };

    #[test]
    fn w_clip_correct_top1_is_identity() {
        let p = d(&[0.2, 0.7, 0.1]);
        let t = w_clip(&p, 1, &DEFAULTS).unwrap();
        assert_eq!(t.operator, TargetOperator::Identity);
        assert_eq!(t.delta_applied, 0.0);
        assert_eq!(t.dist, p);
    }

    #[test]
    fn w_clip_margin_binds() {
        let t = w_clip(&d(&[0.6, 0.3, 0.1]), 1, &DEFAULTS).unwrap();
        assert!((t.delta_applied - 0.21).abs() < 1e-12);
        close(t.dist.probs(), &[0.39, 0.51, 0.10], 1e-9);
        assert_eq!(t.dist.get(2), 0.1);
    }

    #[test]
    fn w_clip_budget_binds() {
        let t = w_clip(&d(&[0.9, 0.05, 0.05]), 1, &DEFAULTS).unwrap();
        assert!((t.delta_applied - 0.45).abs() < 1e-12);
        close(t.dist.probs(), &[0.45, 0.50, 0.05], 1e-9);
    }

    #[test]
    fn w_clip_rejects_bad_label_and_params() {
        let p = d(&[0.6, 0.4]);
        assert!(matches!(w_clip(&p, 2, &DEFAULTS), Err(CudError::Parameter(_))));
        let bad = WClipParams { eta: 1.0, margin_scale_m: 0.7 };
        assert!(w_clip(&p, 1, &bad).is_err());
        let bad = WClipParams { eta: 0.5, margin_scale_m: 0.0 };
        assert!(w_clip(&p, 1, &bad).is_err());
    }

    fn random_dist(rng: &mut impl Rng, c: usize) -> Distribution {
        // cubing skews mass so wrong peaks are common
        Distribution::from_weights((0..c).map(|_| rng.random::<f64>().powi(3) + 1e-6).collect()).unwrap()
    }

    #[test]
    fn w_clip_properties_on_random_pairs() {
        let mut rng = crate::rng::stream(3, "wclip-props");
        for _ in 0..10_000 {
            let c = rng.random_range(2..12);
            let p = random_dist(&mut rng, c);
            let y = rng.random_range(0..c);
            let params = WClipParams {
                eta: rng.random_range(1e-4..0.999),
                margin_scale_m: rng.random_range(1e-4..1.0),
            };
            let t = w_clip(&p, y, &params).unwrap();
            let top = p.argmax();
            assert!(t.dist.get(y) >= p.get(y));
            assert!(t.dist.get(top) <= p.get(top));
            for k in 0..c {
                if k != y && k != top {
                    assert_eq!(t.dist.get(k).to_bits(), p.get(k).to_bits());
                }
                assert!((t.dist.get(k) - p.get(k)).abs() <= params.eta + params.margin_scale_m);
            }
            assert!(Distribution::new(t.dist.probs().to_vec()).is_ok());
        }
    }

    #[test]
    fn w_clip_vanishes_as_parameters_shrink() {
        let p = d(&[0.7, 0.2, 0.1]);
        for s in [1e-2, 1e-4, 1e-8] {
            let params = WClipParams { eta: s, margin_scale_m: s };
            let t = w_clip(&p, 2, &params).unwrap();
            let gap = t
                .dist
                .probs()
                .iter()
                .zip(p.probs())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap <= 2.0 * s);
        }
    }

    // Closed-form tilt factor for the tight constraint: e^-nu = b (1 - p) / (p (1 - b)).
    fn closed_form_scale(p_w: f64, b: f64) -> f64 {
        b * (1.0 - p_w) / (p_w * (1.0 - b))
    }

    #[test]
    fn tilt_inactive_constraint_is_identity() {
        let p = d(&[0.3, 0.6, 0.1]);
        let (t, sol) = exact_tilt_projection(&p, 0, 0.5).unwrap();
        assert_eq!(t.operator, TargetOperator::Identity);
        assert_eq!(t.dist, p);
        assert_eq!(sol.nu, 0.0);
    }

    #[test]
    fn tilt_worked_examples() {
        let (t, sol) = exact_tilt_projection(&d(&[0.6, 0.3, 0.1]), 0, 0.4).unwrap();
        assert!(((-sol.nu).exp() - 4.0 / 9.0).abs() < 1e-9);
        close(t.dist.probs(), &[0.40, 0.45, 0.15], 1e-9);
        assert!((t.dist.get(1) / t.dist.get(2) - 3.0).abs() < 1e-9);

        let (t, sol) = exact_tilt_projection(&d(&[0.5, 0.25, 0.25]), 0, 0.25).unwrap();
        assert!(((-sol.nu).exp() - 1.0 / 3.0).abs() < 1e-9);
        close(t.dist.probs(), &[0.25, 0.375, 0.375], 1e-9);
    }

    #[test]
    fn tilt_matches_closed_form_and_preserves_ratios() {
        let mut rng = crate::rng::stream(5, "tilt-ratio");
        for _ in 0..2000 {
            let c = rng.random_range(2..10);
            let p = random_dist(&mut rng, c);
            let w = rng.random_range(0..c);
            if p.get(w) < 1e-3 {
                continue;
            }
            let b = rng.random_range(1e-3..1.0) * p.get(w);
            let (t, sol) = exact_tilt_projection(&p, w, b).unwrap();
            assert!(t.dist.get(w) <= b + 1e-9);
            assert!((t.dist.get(w) - b).abs() <= 1e-9);
            assert!(sol.nu > 0.0 && sol.partition_z > 0.0);
            assert!(sol.iterations <= TILT_MAX_ITERATIONS);
            let expect = closed_form_scale(p.get(w), b);
            // |g| <= tol moves q[w] by at most tol, i.e. e^{-nu} by ~tol / (b (1 - b)) relative.
            let rel = TILT_RESIDUAL_TOL / (b * (1.0 - b)) * 2.0 + 1e-12;
            assert!(((-sol.nu).exp() - expect).abs() <= rel * expect);
            for i in 0..c {
                for j in 0..c {
                    if i == w || j == w || i == j {
                        continue;
                    }
                    let lhs = t.dist.get(i) / t.dist.get(j);
                    let rhs = p.get(i) / p.get(j);
                    assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0), "{lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn tilt_rejects_bad_budget() {
        let p = d(&[0.6, 0.4]);
        assert!(exact_tilt_projection(&p, 0, 0.0).is_err());
        assert!(exact_tilt_projection(&p, 0, 1.0).is_err());
        assert!(exact_tilt_projection(&p, 3, 0.5).is_err());
    }

    /// Exhaustive grid over the 3-simplex: the tilt solution must be no worse
    /// in KL than any feasible grid point.
    pub(crate) fn grid_optimality_gap(p: &Distribution, w: usize, b: f64, step: f64) -> f64 {
        let (t, _) = exact_tilt_projection(p, w, b).unwrap();
        let best = kl_divergence(&t.dist, p).unwrap();
        let n = (1.0 / step).round() as usize;
        let mut worst_gap = f64::NEG_INFINITY;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let q = [i as f64 * step, j as f64 * step, (n - i - j) as f64 * step];
                if q[w] > b {
                    continue;
                }
                let kl: f64 = q
                    .iter()
                    .zip(p.probs())
                    .filter(|(a, _)| **a > 0.0)
                    .map(|(a, pp)| a * (a / pp).ln())
                    .sum();
                worst_gap = worst_gap.max(best - kl);
            }
        }
        worst_gap
    }

    #[test]
    fn tilt_is_kl_optimal_on_grid() {
        let mut rng = crate::rng::stream(9, "tilt-grid");
        for _ in 0..20 {
            let p = random_dist(&mut rng, 3);
            let w = p.argmax();
            let b = rng.random_range(0.05..0.95) * p.get(w);
            assert!(grid_optimality_gap(&p, w, b, 0.005) <= 1e-6);
        }
    }

    /// When both operators remove the same mass `delta` from the top class,
    /// halving `delta` should shrink their max-norm gap by a factor in [3.5, 4.5].
    #[test]
    fn w_clip_and_tilt_agree_to_second_order() {
        let mut rng = crate::rng::stream(21, "taylor");
        for _ in 0..20 {
            let p = random_dist(&mut rng, 6);
            let top = p.argmax();
            let y = (top + 1) % 6;
            let gap_at = |delta: f64| {
                let mut clipped = p.probs().to_vec();
                clipped[y] += delta;
                clipped[top] -= delta;
                let (t, _) = exact_tilt_projection(&p, top, p.get(top) - delta).unwrap();
                clipped
                    .iter()
                    .zip(t.dist.probs())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            };
            let mut delta = 0.1 * p.get(top);
            for _ in 0..4 {
                let ratio = gap_at(delta) / gap_at(delta / 2.0);
                assert!(
                    (3.5..=4.5).contains(&ratio),
                    "halving delta changed the gap by a factor of {ratio:.4}"
                );
                delta /= 2.0;
            }
        }
    }

    #[test]
    fn temperature_scale_examples() {
        let z = Logits::new(vec![0.0, 0.0]).unwrap();
        for t in [0.5, 1.0, 7.0] {
            close(temperature_scale(&z, t).unwrap().dist.probs(), &[0.5, 0.5], 1e-15);
        }
        let z = Logits::new(vec![2.0, 0.0]).unwrap();
        let t = temperature_scale(&z, 2.0).unwrap();
        assert_eq!(t.operator, TargetOperator::TempScale);
        close(t.dist.probs(), &[0.7311, 0.2689], 1e-4);
        close(temperature_scale(&z, 1e9).unwrap().dist.probs(), &[0.5, 0.5], 1e-8);
    }

    #[test]
    fn label_smooth_examples() {
        assert_eq!(label_smooth(0, 2, 0.0).unwrap().dist.probs(), &[1.0, 0.0]);
        close(label_smooth(1, 4, 0.3).unwrap().dist.probs(), &[0.1, 0.7, 0.1, 0.1], 1e-12);
        close(label_smooth(0, 3, 0.1).unwrap().dist.probs(), &[0.9, 0.05, 0.05], 1e-12);
        assert!(label_smooth(0, 3, 1.0).is_err());
        assert!(label_smooth(3, 3, 0.1).is_err());
    }
}
