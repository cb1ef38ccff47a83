//! Calibration and uncertainty metrics: ECE (overall and on errors), Brier,
//! ROC/AUROC, FPR at a fixed TPR, and confidence/entropy histograms.
//!
//! Conventions: confidence is the top-1 probability; the OOD score is
//! `1 - confidence`, so a higher score means "more out-of-distribution".

use serde::{Deserialize, Serialize};

use crate::error::{CudError, Result};
use crate::simplex::{self, Distribution};

pub const DEFAULT_NUM_BINS: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub dist: Distribution,
    pub label: Option<usize>,
    pub top1: usize,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn new(dist: Distribution, label: Option<usize>) -> Result<Self> {
        if let Some(y) = label {
            if y >= dist.num_classes() {
                return Err(CudError::Parameter(format!(
                    "label {y} out of range for {} classes",
                    dist.num_classes()
                )));
            }
        }
        let top1 = dist.argmax();
        let confidence = dist.get(top1);
        Ok(PredictionRecord {
            dist,
            label,
            top1,
            confidence,
        })
    }

    /// `None` for unlabeled records.
    pub fn is_correct(&self) -> Option<bool> {
        self.label.map(|y| y == self.top1)
    }

    pub fn entropy(&self) -> f64 {
        simplex::entropy(&self.dist)
    }

    pub fn ood_score(&self) -> f64 {
        1.0 - self.confidence
    }

    fn require_label(&self) -> Result<usize> {
        self.label
            .ok_or_else(|| CudError::Parameter("metric requires labeled records".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Zero for empty bins.
    pub mean_confidence: Vec<f64>,
    pub mean_accuracy: Vec<f64>,
}

fn equal_width_edges(lo: f64, hi: f64, num_bins: usize) -> Vec<f64> {
    (0..=num_bins)
        .map(|i| {
            if i == num_bins {
                hi
            } else {
                lo + (hi - lo) * i as f64 / num_bins as f64
            }
        })
        .collect()
}

/// Bin of `value` in `[lo, hi]` split into `num_bins` equal bins; the top edge
/// belongs to the last bin and out-of-range values are clamped.
fn bin_index(value: f64, lo: f64, hi: f64, num_bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let pos = ((value - lo) / (hi - lo) * num_bins as f64).floor();
    if pos < 0.0 {
        0
    } else {
        (pos as usize).min(num_bins - 1)
    }
}

fn reliability(records: &[&PredictionRecord], num_bins: usize) -> Result<ReliabilityBins> {
    if num_bins == 0 {
        return Err(CudError::Parameter("num_bins must be at least 1".into()));
    }
    let mut counts = vec![0usize; num_bins];
    let mut conf = vec![0.0; num_bins];
    let mut acc = vec![0.0; num_bins];
    for r in records {
        let y = r.require_label()?;
        let b = bin_index(r.confidence, 0.0, 1.0, num_bins);
        counts[b] += 1;
        conf[b] += r.confidence;
        acc[b] += f64::from(u8::from(r.top1 == y));
    }
    for b in 0..num_bins {
        if counts[b] > 0 {
            conf[b] /= counts[b] as f64;
            acc[b] /= counts[b] as f64;
        }
    }
    Ok(ReliabilityBins {
        bin_edges: equal_width_edges(0.0, 1.0, num_bins),
        counts,
        mean_confidence: conf,
        mean_accuracy: acc,
    })
}

fn binned_gap(bins: &ReliabilityBins, n: usize) -> f64 {
    (0..bins.counts.len())
        .map(|b| bins.counts[b] as f64 / n as f64 * (bins.mean_accuracy[b] - bins.mean_confidence[b]).abs())
        .sum()
}

/// Equal-width binned expected calibration error, with the reliability table.
pub fn ece(records: &[PredictionRecord], num_bins: usize) -> Result<(f64, ReliabilityBins)> {
    if records.is_empty() {
        return Err(CudError::Parameter("ece needs at least one record".into()));
    }
    let refs: Vec<&PredictionRecord> = records.iter().collect();
    let bins = reliability(&refs, num_bins)?;
    Ok((binned_gap(&bins, records.len()), bins))
}

/// ECE over the misclassified subset only (per-record accuracy is zero there,
/// so this is the mean confidence on errors). `None` when nothing is wrong.
pub fn ece_wrong(records: &[PredictionRecord], num_bins: usize) -> Result<Option<f64>> {
    let mut wrong = Vec::new();
    for r in records {
        if r.top1 != r.require_label()? {
            wrong.push(r);
        }
    }
    if wrong.is_empty() {
        return Ok(None);
    }
    let bins = reliability(&wrong, num_bins)?;
    Ok(Some(binned_gap(&bins, wrong.len())))
}

/// Multi-class Brier score: mean of `sum_k (p_k - [k = y])^2`.
pub fn brier(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(CudError::Parameter("brier needs at least one record".into()));
    }
    let mut total = 0.0;
    for r in records {
        let y = r.require_label()?;
        total += r
            .dist
            .probs()
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let t = if k == y { 1.0 } else { 0.0 };
                (p - t) * (p - t)
            })
            .sum::<f64>();
    }
    Ok(total / records.len() as f64)
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(CudError::Parameter("accuracy needs at least one record".into()));
    }
    let mut correct = 0usize;
    for r in records {
        correct += usize::from(r.top1 == r.require_label()?);
    }
    Ok(correct as f64 / records.len() as f64)
}

pub fn mean_confidence(records: &[PredictionRecord]) -> f64 {
    records.iter().map(|r| r.confidence).sum::<f64>() / records.len().max(1) as f64
}

pub fn mean_entropy(records: &[PredictionRecord]) -> f64 {
    records.iter().map(PredictionRecord::entropy).sum::<f64>() / records.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, both coordinates non-decreasing.
    pub points: Vec<(f64, f64)>,
    pub auroc: f64,
}

/// ROC of `scores` for detecting `positive` items (higher score = more
/// positive). AUROC is the Mann–Whitney statistic with ties counted as one half.
pub fn roc_auroc(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(CudError::Dimension {
            expected: scores.len(),
            actual: positive.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CudError::Domain("non-finite score".into()));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CudError::Parameter(
            "ROC needs at least one positive and one negative".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    // Rank sum of positives, ranks ascending in score, ties averaged. Ranks
    // are kept doubled so every quantity is an exact integer.
    let mut twice_rank_sum: u128 = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let n = scores.len();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..j].iter().filter(|&&k| positive[k]).count();
        // descending positions i..j map to ascending ranks n-j+1 ..= n-i
        let twice_avg_rank = ((n - j + 1) + (n - i)) as u128;
        twice_rank_sum += twice_avg_rank * group_pos as u128;
        tp += group_pos;
        fp += (j - i) - group_pos;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    let auroc = twice_u as f64 / (2 * n_pos * n_neg) as f64;
    Ok(RocCurve { points, auroc })
}

/// FPR at the first curve point reaching `tpr_level`, linearly interpolated
/// from the previous point.
pub fn fpr_at_tpr(curve: &RocCurve, tpr_level: f64) -> Result<f64> {
    if !(tpr_level > 0.0 && tpr_level <= 1.0) {
        return Err(CudError::Parameter(format!("tpr_level {tpr_level} not in (0, 1]")));
    }
    let pts = &curve.points;
    let i = pts
        .iter()
        .position(|&(_, t)| t >= tpr_level)
        .ok_or_else(|| CudError::Parameter("curve never reaches the TPR level".into()))?;
    if i == 0 || pts[i].1 == tpr_level {
        return Ok(pts[i].0);
    }
    let (f0, t0) = pts[i - 1];
    let (f1, t1) = pts[i];
    Ok(f0 + (tpr_level - t0) / (t1 - t0) * (f1 - f0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64, num_bins: usize) -> Result<Histogram> {
    if num_bins == 0 {
        return Err(CudError::Parameter("num_bins must be at least 1".into()));
    }
    let mut counts = vec![0usize; num_bins];
    for v in values {
        counts[bin_index(v, lo, hi, num_bins)] += 1;
    }
    Ok(Histogram {
        bin_edges: equal_width_edges(lo, hi, num_bins),
        counts,
    })
}

/// Top-1 confidence counts over `[0, 1]`.
pub fn confidence_histogram(records: &[PredictionRecord], num_bins: usize) -> Result<Histogram> {
    histogram(records.iter().map(|r| r.confidence), 0.0, 1.0, num_bins)
}

/// Predictive entropy counts over `[0, ln C]`.
pub fn entropy_histogram(records: &[PredictionRecord], num_bins: usize) -> Result<Histogram> {
    let c = records.first().map_or(2, |r| r.dist.num_classes());
    histogram(records.iter().map(PredictionRecord::entropy), 0.0, (c as f64).ln(), num_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rec(probs: &[f64], label: usize) -> PredictionRecord {
        PredictionRecord::new(Distribution::new(probs.to_vec()).unwrap(), Some(label)).unwrap()
    }

    /// A record with the given top-1 confidence over 2 classes, correct or not.
    fn conf_rec(conf: f64, correct: bool) -> PredictionRecord {
        rec(&[conf, 1.0 - conf], if correct { 0 } else { 1 })
    }

    fn brute_force_auroc(scores: &[f64], positive: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if positive[i] && !positive[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn ece_examples() {
        let perfect: Vec<_> = (0..5).map(|_| rec(&[1.0, 0.0], 0)).collect();
        assert_eq!(ece(&perfect, 15).unwrap().0, 0.0);

        let two = vec![conf_rec(0.8, true), conf_rec(0.8, false)];
        assert!((ece(&two, 1).unwrap().0 - 0.3).abs() < 1e-12);

        // 10 records at confidence 0.9, nine correct: exactly calibrated.
        let cal: Vec<_> = (0..10).map(|i| conf_rec(0.9, i < 9)).collect();
        assert!(ece(&cal, 15).unwrap().0.abs() < 1e-12);
        assert!(ece(&[], 15).is_err());
    }

    #[test]
    fn ece_is_zero_on_calibrated_bins_and_bounded() {
        // 0.6 and 0.8 land in distinct bins of 10; accuracy matches confidence.
        let mut recs: Vec<_> = (0..5).map(|i| conf_rec(0.6, i < 3)).collect();
        recs.extend((0..5).map(|i| conf_rec(0.8, i < 4)));
        let (e, bins) = ece(&recs, 10).unwrap();
        assert!(e.abs() < 1e-12);
        assert_eq!(bins.counts.iter().sum::<usize>(), 10);
        assert!(bins.bin_edges.windows(2).all(|w| w[0] < w[1]));

        let mut rng = crate::rng::stream(1, "ece-bounds");
        for _ in 0..200 {
            let recs: Vec<_> = (0..20)
                .map(|_| conf_rec(rng.random_range(0.5..=1.0), rng.random_bool(0.5)))
                .collect();
            let e = ece(&recs, 15).unwrap().0;
            assert!((0.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn ece_wrong_examples() {
        let recs = vec![conf_rec(0.9, false), conf_rec(0.9, false), conf_rec(0.7, true)];
        assert!((ece_wrong(&recs, 15).unwrap().unwrap() - 0.9).abs() < 1e-12);
        let none = vec![conf_rec(0.9, true)];
        assert_eq!(ece_wrong(&none, 15).unwrap(), None);
        let pair = vec![conf_rec(0.6, false), conf_rec(0.8, false)];
        assert!((ece_wrong(&pair, 1).unwrap().unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[rec(&[0.0, 1.0, 0.0], 1)]).unwrap(), 0.0);
        assert!((brier(&[rec(&[0.5, 0.5], 1)]).unwrap() - 0.5).abs() < 1e-15);
        assert!((brier(&[rec(&[0.7, 0.2, 0.1], 0)]).unwrap() - 0.14).abs() < 1e-12);
        for c in 2..12 {
            let u = vec![1.0 / c as f64; c];
            let cf = c as f64;
            let closed = (cf - 1.0) / (cf * cf) + (1.0 - 1.0 / cf).powi(2);
            assert!((brier(&[rec(&u, 0)]).unwrap() - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn roc_examples() {
        let c = roc_auroc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(c.auroc, 1.0);
        let c = roc_auroc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert_eq!(c.auroc, 0.5);
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        let c = roc_auroc(&[0.9, 0.8, 0.7, 0.85], &[true, true, false, false]).unwrap();
        assert_eq!(c.auroc, 0.75);
        assert!(roc_auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auroc_matches_pair_counting_exactly() {
        let mut rng = crate::rng::stream(2, "auroc-oracle");
        for _ in 0..500 {
            let n = rng.random_range(2..=200);
            // Coarse grid forces plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 20.0).collect();
            let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            flags[0] = true;
            flags[1] = false;
            let curve = roc_auroc(&scores, &flags).unwrap();
            assert_eq!(curve.auroc, brute_force_auroc(&scores, &flags));
            assert_eq!(*curve.points.first().unwrap(), (0.0, 0.0));
            assert_eq!(*curve.points.last().unwrap(), (1.0, 1.0));
            assert!(curve.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn fpr_at_tpr_examples() {
        let perfect = roc_auroc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(fpr_at_tpr(&perfect, 0.95).unwrap(), 0.0);
        let tied = roc_auroc(&[0.5; 4], &[true, false, true, false]).unwrap();
        assert!((fpr_at_tpr(&tied, 0.95).unwrap() - 0.95).abs() < 1e-12);

        let curve = RocCurve {
            points: vec![(0.0, 0.0), (0.1, 0.5), (0.3, 0.8), (1.0, 1.0)],
            auroc: 0.0,
        };
        // Between (0.3, 0.8) and (1, 1): 0.3 + (0.9 - 0.8) / 0.2 * 0.7 = 0.65
        assert!((fpr_at_tpr(&curve, 0.9).unwrap() - 0.65).abs() < 1e-12);
        assert!((fpr_at_tpr(&curve, 0.8).unwrap() - 0.3).abs() < 1e-12);
        assert!((fpr_at_tpr(&curve, 0.25).unwrap() - 0.05).abs() < 1e-12);
        assert!(fpr_at_tpr(&curve, 0.0).is_err());
    }

    #[test]
    fn adding_correctly_ranked_points_never_hurts_fpr() {
        let mut rng = crate::rng::stream(3, "fpr-nested");
        for _ in 0..300 {
            let n = rng.random_range(4..60);
            let mut scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            flags[0] = true;
            flags[1] = false;
            let level = rng.random_range(0.05..=1.0);
            let before = fpr_at_tpr(&roc_auroc(&scores, &flags).unwrap(), level).unwrap();
            // a negative below every score, or a positive above every score
            if rng.random_bool(0.5) {
                scores.push(-1.0);
                flags.push(false);
            } else {
                scores.push(2.0);
                flags.push(true);
            }
            let after = fpr_at_tpr(&roc_auroc(&scores, &flags).unwrap(), level).unwrap();
            assert!(after <= before + 1e-12, "{after} > {before}");
        }
    }

    #[test]
    fn histogram_examples() {
        let ones: Vec<_> = (0..4).map(|_| rec(&[1.0, 0.0], 0)).collect();
        let h = confidence_histogram(&ones, 10).unwrap();
        assert_eq!(h.counts[9], 4);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);

        let confs = [0.5, 0.55, 0.65, 0.85, 0.99];
        let recs: Vec<_> = confs.iter().map(|&c| conf_rec(c, true)).collect();
        let h = confidence_histogram(&recs, 5).unwrap();
        // bins [0,.2) [.2,.4) [.4,.6) [.6,.8) [.8,1]
        assert_eq!(h.counts, vec![0, 0, 2, 1, 2]);

        let u = rec(&[0.25; 4], 0);
        let h = entropy_histogram(&[u, rec(&[1.0, 0.0, 0.0, 0.0], 0)], 4).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0, 1]);
    }
}
