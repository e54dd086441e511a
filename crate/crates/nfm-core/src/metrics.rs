//! Ranking and threshold metrics for binary anomaly benchmarks.
//!
//! Abnormal is always the positive class, and a sample is predicted abnormal
//! when its score is `>=` the threshold. AUROC uses the rank (Mann-Whitney)
//! formulation with tied scores credited half, which equals the trapezoidal
//! area under the ROC curve exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_classes(labels: &[bool], scores: &[f64]) -> Result<(usize, usize)> {
    if labels.len() != scores.len() {
        return Err(Error::invalid(format!(
            "{} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score at index {pos}")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid(
            "metrics need at least one positive and one negative sample",
        ));
    }
    Ok((positives, negatives))
}

/// Area under the ROC curve via average ranks. Ties between opposite classes
/// count half.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let (positives, negatives) = check_classes(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Positive-rank sum with tied scores sharing their average rank.
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j average to (i + j + 1) / 2.
        let avg_rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC curve points. The first point is `(0, 0)` at threshold `+inf`; each
/// further point lowers the threshold to the next distinct score
/// (descending), ending at `(1, 1)` once every sample is predicted abnormal.
pub fn roc_points(labels: &[bool], scores: &[f64]) -> Result<Vec<RocPoint>> {
    let (positives, negatives) = check_classes(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold: t,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC point sequence.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Percentile bootstrap confidence interval for AUROC at 95%.
///
/// Resampling is stratified: each resample draws the original number of
/// negatives from the negatives and positives from the positives, with
/// replacement. Resample `i` uses an RNG seeded by `seed` on stream `i`, so
/// the interval does not depend on how the resamples are scheduled.
pub fn bootstrap_auroc_ci(
    labels: &[bool],
    scores: &[f64],
    n_resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_classes(labels, scores)?;
    if n_resamples < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 resamples"));
    }
    let pos: Vec<f64> = labels
        .iter()
        .zip(scores)
        .filter(|(&l, _)| l)
        .map(|(_, &s)| s)
        .collect();
    let neg: Vec<f64> = labels
        .iter()
        .zip(scores)
        .filter(|(&l, _)| !l)
        .map(|(_, &s)| s)
        .collect();

    let mut aucs: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut rl = Vec::with_capacity(labels.len());
            let mut rs = Vec::with_capacity(labels.len());
            for _ in 0..neg.len() {
                rl.push(false);
                rs.push(neg[rng.gen_range(0..neg.len())]);
            }
            for _ in 0..pos.len() {
                rl.push(true);
                rs.push(pos[rng.gen_range(0..pos.len())]);
            }
            auroc(&rl, &rs).expect("resample keeps both classes")
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    Ok((percentile(&aucs, 0.025), percentile(&aucs, 0.975)))
}

/// Linear-interpolation percentile (the common "type 7" definition) over a
/// sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Maximize F1 of the abnormal class.
    MaxF1,
    /// Maximize Youden's J (sensitivity + specificity - 1).
    Youden,
}

/// Counts at a fixed threshold, abnormal positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion counts predicting abnormal where `score >= threshold`.
pub fn confusion_at(labels: &[bool], scores: &[f64], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&label, &score) in labels.iter().zip(scores) {
        match (label, score >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Picks the threshold optimizing `policy` over the candidate set: `-inf`
/// (everything abnormal), midpoints between adjacent distinct scores, and
/// `+inf` (nothing abnormal). Metric ties resolve to the lowest threshold.
pub fn select_threshold(labels: &[bool], scores: &[f64], policy: ThresholdPolicy) -> Result<f64> {
    check_classes(labels, scores)?;
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    for pair in distinct.windows(2) {
        let mid = (pair[0] + pair[1]) / 2.0;
        // Adjacent floats can midpoint onto the lower score, which would
        // shift the >= cut; fall back to the upper score in that case.
        candidates.push(if mid > pair[0] { mid } else { pair[1] });
    }
    candidates.push(f64::INFINITY);

    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for &t in &candidates {
        let c = confusion_at(labels, scores, t);
        let metric = match policy {
            ThresholdPolicy::MaxF1 => c.f1(),
            ThresholdPolicy::Youden => c.sensitivity() + c.specificity() - 1.0,
        };
        if metric > best.0 || (metric == best.0 && t < best.1) {
            best = (metric, t);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_perfect_and_inverted() {
        let labels = [false, false, true, true];
        assert_eq!(auroc(&labels, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&labels, &[0.9, 0.8, 0.2, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn auroc_ties_count_half() {
        // A single tied pair contributes exactly one half.
        assert_eq!(auroc(&[false, true], &[0.5, 0.5]).unwrap(), 0.5);
        // Four pairs: three clean wins plus one tie -> 3.5 / 4.
        let labels = [false, true, false, true];
        let scores = [0.1, 0.9, 0.5, 0.5];
        assert_eq!(auroc(&labels, &scores).unwrap(), 0.875);
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.gen_range(5..60);
            let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            // Coarse grid forces plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
            let fast = auroc(&labels, &scores).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, &li) in labels.iter().enumerate() {
                for (j, &lj) in labels.iter().enumerate() {
                    if li && !lj {
                        den += 1.0;
                        num += match scores[i].total_cmp(&scores[j]) {
                            std::cmp::Ordering::Greater => 1.0,
                            std::cmp::Ordering::Equal => 0.5,
                            std::cmp::Ordering::Less => 0.0,
                        };
                    }
                }
            }
            assert!((fast - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn auroc_rejects_single_class() {
        assert!(auroc(&[true, true], &[0.1, 0.2]).is_err());
        assert!(auroc(&[false, false], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn roc_points_start_at_origin_end_at_unit() {
        let labels = [false, true, false, true, true];
        let scores = [0.1, 0.9, 0.4, 0.4, 0.7];
        let pts = roc_points(&labels, &scores).unwrap();
        assert_eq!(pts[0].fpr, 0.0);
        assert_eq!(pts[0].tpr, 0.0);
        assert!(pts[0].threshold.is_infinite());
        let last = pts.last().unwrap();
        assert_eq!(last.fpr, 1.0);
        assert_eq!(last.tpr, 1.0);
        // 4 distinct scores -> 5 points.
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn trapezoid_area_equals_rank_auroc() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(4..80);
            let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
            let a = auroc(&labels, &scores).unwrap();
            let area = trapezoid_area(&roc_points(&labels, &scores).unwrap());
            assert!((a - area).abs() < 1e-12, "{a} vs {area}");
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_ordered() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let labels: Vec<bool> = (0..80).map(|i| i % 2 == 0).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| if l { 1.0 } else { 0.0 } + rng.gen_range(-1.0..1.0))
            .collect();
        let a = bootstrap_auroc_ci(&labels, &scores, 200, 42).unwrap();
        let b = bootstrap_auroc_ci(&labels, &scores, 200, 42).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_auroc_ci(&labels, &scores, 200, 43).unwrap();
        assert_ne!(a, c);
        assert!(a.0 <= a.1);
        let point = auroc(&labels, &scores).unwrap();
        assert!(a.0 <= point && point <= a.1);
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&v, 0.5), 2.5);
    }

    #[test]
    fn threshold_max_f1_finds_separating_cut() {
        let labels = [false, false, false, true, true];
        let scores = [0.1, 0.2, 0.3, 0.8, 0.9];
        let t = select_threshold(&labels, &scores, ThresholdPolicy::MaxF1).unwrap();
        assert!(t > 0.3 && t <= 0.8, "{t}");
        let c = confusion_at(&labels, &scores, t);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 0, 3, 0));
    }

    #[test]
    fn threshold_all_equal_scores_predicts_all_abnormal() {
        let labels = [false, true, false, true];
        let scores = [0.5; 4];
        for policy in [ThresholdPolicy::MaxF1, ThresholdPolicy::Youden] {
            let t = select_threshold(&labels, &scores, policy).unwrap();
            assert_eq!(t, f64::NEG_INFINITY);
            let c = confusion_at(&labels, &scores, t);
            assert_eq!(c.tp + c.fp, 4);
        }
    }

    #[test]
    fn youden_picks_balanced_cut() {
        let labels = [false, false, false, false, true, true];
        let scores = [0.0, 0.1, 0.2, 0.9, 0.8, 1.0];
        let t = select_threshold(&labels, &scores, ThresholdPolicy::Youden).unwrap();
        let c = confusion_at(&labels, &scores, t);
        let j = c.sensitivity() + c.specificity() - 1.0;
        // Best achievable J on this data: catch both positives, one FP.
        assert!((j - 0.75).abs() < 1e-12, "J = {j} at t = {t}");
    }

    #[test]
    fn confusion_at_infinities() {
        let labels = [false, true];
        let scores = [0.2, 0.8];
        let all = confusion_at(&labels, &scores, f64::NEG_INFINITY);
        assert_eq!((all.tp, all.fp), (1, 1));
        let none = confusion_at(&labels, &scores, f64::INFINITY);
        assert_eq!((none.tn, none.fn_), (1, 1));
    }
}
