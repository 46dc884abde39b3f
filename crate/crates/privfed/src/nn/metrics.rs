//! Evaluation metrics: confusion matrix, per-class sensitivity/specificity,
//! multiclass Matthews correlation, Cohen's kappa, the McNemar paired test,
//! and one-vs-rest ROC-AUC with midpoint tie ranks.
//!
//! Degenerate-input conventions: a zero MCC denominator yields 0; kappa at
//! `p_e = 1` is 1 when observed agreement is perfect, else 0; McNemar with
//! no discordant pairs is `(0, p=1)`; a class with no positives or no
//! negatives is excluded from the weighted AUC.

use super::model::{class_scores, predict, Batch};
use super::ModelParams;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_pairs(truth: &[usize], preds: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != preds.len() {
            return Err(Error::Parameter(format!(
                "{} truth labels vs {} predictions",
                truth.len(),
                preds.len()
            )));
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(preds) {
            if t >= classes || p >= classes {
                return Err(Error::Data(format!("label pair ({t}, {p}) outside {classes} classes")));
            }
            m.counts[t * classes + p] += 1;
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let classes = rows.len();
        let counts = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ConfusionMatrix { classes, counts }
    }

    pub fn at(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|j| self.at(k, j)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|i| self.at(i, k)).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|k| self.at(k, k)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let s = self.total();
        if s == 0 {
            return 0.0;
        }
        self.correct() as f64 / s as f64
    }

    /// True-positive rate for class `k` (0 when the class never occurs).
    pub fn sensitivity(&self, k: usize) -> f64 {
        ratio(self.at(k, k), self.row_sum(k))
    }

    /// True-negative rate for class `k` (0 when every sample is class `k`).
    pub fn specificity(&self, k: usize) -> f64 {
        let fp = self.col_sum(k) - self.at(k, k);
        let tn = self.total() - self.row_sum(k) - fp;
        ratio(tn, tn + fp)
    }

    /// Multiclass Matthews correlation over the confusion matrix
    /// (covariance form over class marginals); zero denominator gives 0.
    pub fn mcc(&self) -> f64 {
        let s = self.total() as f64;
        let c = self.correct() as f64;
        let mut tp_dot = 0.0;
        let mut p_sq = 0.0;
        let mut t_sq = 0.0;
        for k in 0..self.classes {
            let t_k = self.row_sum(k) as f64;
            let p_k = self.col_sum(k) as f64;
            tp_dot += t_k * p_k;
            p_sq += p_k * p_k;
            t_sq += t_k * t_k;
        }
        let num = c * s - tp_dot;
        let den = ((s * s - p_sq) * (s * s - t_sq)).sqrt();
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.classes)
            .map(|i| self.counts[i * self.classes..(i + 1) * self.classes].to_vec())
            .collect()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Chance-corrected agreement between two raters over the same items.
pub fn cohens_kappa(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!("{} vs {} ratings", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Degenerate("kappa of zero ratings".into()));
    }
    let classes = a.iter().chain(b).max().unwrap() + 1;
    let m = ConfusionMatrix::from_pairs(a, b, classes)?;
    let s = m.total() as f64;
    let p_o = m.correct() as f64 / s;
    let p_e: f64 =
        (0..classes).map(|k| (m.row_sum(k) as f64 / s) * (m.col_sum(k) as f64 / s)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(if (1.0 - p_o).abs() < 1e-15 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Paired test on discordant predictions of two classifiers against truth.
/// Returns `(statistic, p_value)` with the continuity-corrected statistic
/// `(|b - c| - 1)^2 / (b + c)`; no discordant pairs gives `(0, 1)`.
pub fn mcnemar_test(preds_a: &[usize], preds_b: &[usize], truth: &[usize]) -> Result<(f64, f64)> {
    if preds_a.len() != preds_b.len() || preds_a.len() != truth.len() {
        return Err(Error::Parameter(format!(
            "prediction/truth lengths differ: {} / {} / {}",
            preds_a.len(),
            preds_b.len(),
            truth.len()
        )));
    }
    let mut only_a = 0u64;
    let mut only_b = 0u64;
    for ((&pa, &pb), &t) in preds_a.iter().zip(preds_b).zip(truth) {
        match (pa == t, pb == t) {
            (true, false) => only_a += 1,
            (false, true) => only_b += 1,
            _ => {}
        }
    }
    if only_a + only_b == 0 {
        return Ok((0.0, 1.0));
    }
    let diff = only_a.abs_diff(only_b) as f64;
    let stat = (diff - 1.0).powi(2) / (only_a + only_b) as f64;
    let chi = ChiSquared::new(1.0).expect("df 1");
    Ok((stat, 1.0 - chi.cdf(stat)))
}

/// Binary AUC by the rank method with midpoint ties; `None` when either
/// class is absent.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    if scores.len() != positive.len() {
        return Err(Error::Parameter(format!(
            "{} scores vs {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("non-finite score in AUC input".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share the midpoint rank.
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if positive[idx] {
                rank_sum_pos += rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// One-vs-rest AUC per class plus the class-frequency-weighted average
/// over classes where the AUC is defined.
pub fn roc_auc_weighted(
    scores: &[f64],
    labels: &[usize],
    classes: usize,
) -> Result<(Vec<Option<f64>>, f64)> {
    if labels.is_empty() || scores.len() != labels.len() * classes {
        return Err(Error::Parameter(format!(
            "score matrix {} does not match {} labels x {classes} classes",
            scores.len(),
            labels.len()
        )));
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut weighted = 0.0;
    let mut weight_total = 0.0;
    for k in 0..classes {
        let col: Vec<f64> = labels.iter().enumerate().map(|(i, _)| scores[i * classes + k]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        let auc = auc_binary(&col, &pos)?;
        if let Some(a) = auc {
            let w = pos.iter().filter(|&&p| p).count() as f64;
            weighted += w * a;
            weight_total += w;
        }
        per_class.push(auc);
    }
    let avg = if weight_total == 0.0 { 0.0 } else { weighted / weight_total };
    Ok((per_class, avg))
}

/// Full evaluation summary for one model on one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    pub mcc: f64,
    pub roc_auc_weighted: f64,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
    pub macro_sensitivity: f64,
    pub macro_specificity: f64,
    pub roc_auc_per_class: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

/// Evaluate a model: predictions feed the confusion-matrix metrics, softmax
/// scores feed the AUC.
pub fn evaluate(params: &ModelParams, batch: &Batch) -> Result<MetricsReport> {
    let classes = params.arch.classes();
    let preds = predict(params, batch)?;
    let scores = class_scores(params, batch)?;
    let m = ConfusionMatrix::from_pairs(&batch.labels, &preds, classes)?;
    let (per_class_auc, auc_weighted) = roc_auc_weighted(&scores.data, &batch.labels, classes)?;
    let sensitivity: Vec<f64> = (0..classes).map(|k| m.sensitivity(k)).collect();
    let specificity: Vec<f64> = (0..classes).map(|k| m.specificity(k)).collect();
    Ok(MetricsReport {
        samples: batch.len(),
        accuracy: m.accuracy(),
        mcc: m.mcc(),
        roc_auc_weighted: auc_weighted,
        macro_sensitivity: sensitivity.iter().sum::<f64>() / classes as f64,
        macro_specificity: specificity.iter().sum::<f64>() / classes as f64,
        sensitivity,
        specificity,
        roc_auc_per_class: per_class_auc,
        confusion: m.rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    /// Independent MCC oracle: Pearson correlation of stacked one-hot
    /// indicator vectors, computed straight from the label pairs.
    fn mcc_indicator_oracle(truth: &[usize], preds: &[usize], classes: usize) -> f64 {
        let n = truth.len() as f64;
        let mut cov_xy = 0.0;
        let mut cov_xx = 0.0;
        let mut cov_yy = 0.0;
        for k in 0..classes {
            let mean_t = truth.iter().filter(|&&t| t == k).count() as f64 / n;
            let mean_p = preds.iter().filter(|&&p| p == k).count() as f64 / n;
            for (&t, &p) in truth.iter().zip(preds) {
                let xt = (t == k) as u8 as f64 - mean_t;
                let xp = (p == k) as u8 as f64 - mean_p;
                cov_xy += xt * xp;
                cov_xx += xt * xt;
                cov_yy += xp * xp;
            }
        }
        let den = (cov_xx * cov_yy).sqrt();
        if den == 0.0 {
            0.0
        } else {
            cov_xy / den
        }
    }

    /// Brute-force AUC oracle: count concordant pairs, half for ties.
    fn auc_pair_oracle(scores: &[f64], positive: &[bool]) -> Option<f64> {
        let pos: Vec<f64> =
            scores.iter().zip(positive).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
        let neg: Vec<f64> =
            scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for &p in &pos {
            for &n in &neg {
                total += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(total / (pos.len() * neg.len()) as f64)
    }

    #[test]
    fn mcc_matches_indicator_oracle_on_random_data() {
        let mut rng = seed::rng_from(1, "metrics.mcc");
        for _ in 0..120 {
            let classes = rng.gen_range(2..=5);
            let n = rng.gen_range(3..60);
            let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let preds: Vec<usize> = (0..n)
                .map(|i| if rng.gen_bool(0.6) { truth[i] } else { rng.gen_range(0..classes) })
                .collect();
            let m = ConfusionMatrix::from_pairs(&truth, &preds, classes).unwrap();
            let want = mcc_indicator_oracle(&truth, &preds, classes);
            assert!((m.mcc() - want).abs() < 1e-9, "{} vs {want}", m.mcc());
            assert!(m.mcc() >= -1.0 - 1e-12 && m.mcc() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn mcc_fixed_matrix_value() {
        let m = ConfusionMatrix::from_rows(&[vec![5, 1, 0], vec![2, 6, 1], vec![0, 2, 4]]);
        // Direct formula evaluated independently: s=21, c=15,
        // t=(6,9,6), p=(7,9,5), sum t*p = 42+81+30 = 153,
        // num = 15*21-153 = 162, den = sqrt((441-155)(441-153)).
        let want = 162.0 / ((441.0_f64 - 155.0) * (441.0 - 153.0)).sqrt();
        assert!((m.mcc() - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_constant_classifiers() {
        let truth = vec![0, 1, 2, 0, 1, 2];
        let perfect = ConfusionMatrix::from_pairs(&truth, &truth, 3).unwrap();
        assert_eq!(perfect.accuracy(), 1.0);
        assert!((perfect.mcc() - 1.0).abs() < 1e-12);
        for k in 0..3 {
            assert_eq!(perfect.sensitivity(k), 1.0);
            assert_eq!(perfect.specificity(k), 1.0);
        }
        let constant = vec![0; 6];
        let m = ConfusionMatrix::from_pairs(&truth, &constant, 3).unwrap();
        assert!((m.accuracy() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.mcc(), 0.0, "zero-denominator rule");
        assert_eq!(m.specificity(0), 0.0);
        assert_eq!(m.sensitivity(1), 0.0);
    }

    #[test]
    fn kappa_examples_and_symmetry() {
        let a = vec![0, 0, 1, 1];
        let b = vec![0, 1, 1, 1];
        let k = cohens_kappa(&a, &b).unwrap();
        assert!((k - 0.5).abs() < 1e-12, "p_o=0.75, p_e=0.5 -> 0.5, got {k}");
        assert_eq!(cohens_kappa(&a, &b).unwrap(), cohens_kappa(&b, &a).unwrap());
        assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
        // Both raters constant on the same class: p_e = 1, perfect agreement.
        assert_eq!(cohens_kappa(&[2, 2, 2], &[2, 2, 2]).unwrap(), 1.0);
        assert!(cohens_kappa(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn kappa_matches_direct_formula_on_random_data() {
        let mut rng = seed::rng_from(2, "metrics.kappa");
        for _ in 0..120 {
            let classes = rng.gen_range(2..=4);
            let n = rng.gen_range(2..50);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let got = cohens_kappa(&a, &b).unwrap();
            // Oracle: recompute from scratch with explicit counts.
            let nf = n as f64;
            let p_o = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / nf;
            let p_e: f64 = (0..classes)
                .map(|k| {
                    (a.iter().filter(|&&x| x == k).count() as f64 / nf)
                        * (b.iter().filter(|&&y| y == k).count() as f64 / nf)
                })
                .sum();
            let want = if (1.0 - p_e).abs() < 1e-15 {
                if (1.0 - p_o).abs() < 1e-15 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (p_o - p_e) / (1.0 - p_e)
            };
            assert!((got - want).abs() < 1e-9);
            assert!((-1.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn mcnemar_examples() {
        // b=10, c=2 -> (|10-2|-1)^2/12 = 49/12.
        let truth: Vec<usize> = vec![0; 12];
        let mut a = vec![0; 12];
        let mut b = vec![0; 12];
        for item in b.iter_mut().take(10) {
            *item = 1; // a correct, b wrong on 10
        }
        for item in a.iter_mut().skip(10) {
            *item = 1; // b correct, a wrong on 2
        }
        let (stat, p) = mcnemar_test(&a, &b, &truth).unwrap();
        assert!((stat - 49.0 / 12.0).abs() < 1e-12);
        assert!(p > 0.0 && p < 0.05, "chi-square(1) tail at 4.083 is ~0.043, got {p}");
        let (stat_swapped, _) = mcnemar_test(&b, &a, &truth).unwrap();
        assert_eq!(stat, stat_swapped);
        let (s0, p0) = mcnemar_test(&a, &a, &truth).unwrap();
        assert_eq!((s0, p0), (0.0, 1.0));
        assert!(mcnemar_test(&a, &b, &truth[..3]).is_err());
    }

    #[test]
    fn mcnemar_p_value_against_chi_square_cdf() {
        let chi = ChiSquared::new(1.0).unwrap();
        let (stat, p) = {
            let truth = vec![0; 9];
            let a = vec![0, 0, 0, 0, 0, 0, 1, 1, 1];
            let b = vec![1, 1, 1, 1, 1, 1, 0, 0, 0];
            mcnemar_test(&a, &b, &truth).unwrap()
        };
        assert!((p - (1.0 - chi.cdf(stat))).abs() < 1e-15);
    }

    #[test]
    fn auc_matches_pair_counting_oracle() {
        let mut rng = seed::rng_from(3, "metrics.auc");
        for _ in 0..120 {
            let n = rng.gen_range(2..40);
            // Coarse scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
            let positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let got = auc_binary(&scores, &positive).unwrap();
            let want = auc_pair_oracle(&scores, &positive);
            match (got, want) {
                (Some(g), Some(w)) => {
                    assert!((g - w).abs() < 1e-9, "{g} vs {w}");
                    assert!((0.0..=1.0).contains(&g));
                }
                (None, None) => {}
                other => panic!("defined-ness mismatch: {other:?}"),
            }
        }
    }

    #[test]
    fn auc_edges() {
        assert_eq!(
            auc_binary(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(),
            Some(1.0)
        );
        assert_eq!(
            auc_binary(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap(),
            Some(0.0)
        );
        assert_eq!(auc_binary(&[0.5, 0.5], &[true, false]).unwrap(), Some(0.5));
        assert_eq!(auc_binary(&[0.5, 0.5], &[true, true]).unwrap(), None);
        assert!(auc_binary(&[f64::NAN], &[true]).is_err());
    }

    #[test]
    fn weighted_auc_excludes_absent_classes() {
        // Classes 0 and 1 present, class 2 absent: weight only 0/1.
        let labels = vec![0, 0, 1];
        let scores = vec![
            0.8, 0.1, 0.1, //
            0.7, 0.2, 0.1, //
            0.2, 0.7, 0.1,
        ];
        let (per_class, avg) = roc_auc_weighted(&scores, &labels, 3).unwrap();
        assert_eq!(per_class[0], Some(1.0));
        assert_eq!(per_class[1], Some(1.0));
        assert_eq!(per_class[2], None);
        assert_eq!(avg, 1.0);
    }

    #[test]
    fn evaluate_on_a_perfect_toy_model() {
        use crate::nn::model::Batch;
        use crate::nn::Architecture;
        use crate::tensor::PlainTensor;
        // Identity-ish linear model on 2 features, 2 classes.
        let arch = Architecture::mlp(2, vec![], 2);
        let mut params = crate::nn::ModelParams::zeros(&arch).unwrap();
        params.named[0].1.data = vec![1.0, 0.0, 0.0, 1.0];
        let inputs =
            PlainTensor::from_vec(&[4, 2], vec![3.0, 0.0, 0.0, 3.0, 2.0, 0.0, 0.0, 2.0]).unwrap();
        let batch = Batch::new(inputs, vec![0, 1, 0, 1]).unwrap();
        let report = evaluate(&params, &batch).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert!((report.mcc - 1.0).abs() < 1e-12);
        assert_eq!(report.roc_auc_weighted, 1.0);
        assert_eq!(report.confusion, vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(report.macro_sensitivity, 1.0);
    }
}
