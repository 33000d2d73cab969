//! Classification metrics (accuracy, sensitivity, specificity, rank-based
//! AUC), stratified k-fold splitting, and per-fold aggregation in the
//! `mean(std)` percent style used for reporting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Metrics of one evaluation; sensitivity/specificity are absent when their
/// denominator class is empty, AUC until a score-based pass fills it in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub confusion: Confusion,
    pub n: usize,
}

/// Count the confusion table; the positive class is label 1.
pub fn confusion_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Config("no predictions".into()));
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &l) in predictions.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(Error::Schema(format!("class index out of range: ({p},{l})")));
        }
        match (p, l) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => unreachable!(),
        }
    }
    let n = predictions.len();
    let acc = (c.tp + c.tn) as f64 / n as f64;
    let sen = (c.tp + c.fn_ > 0).then(|| c.tp as f64 / (c.tp + c.fn_) as f64);
    let spe = (c.tn + c.fp > 0).then(|| c.tn as f64 / (c.tn + c.fp) as f64);
    Ok(MetricsReport {
        acc,
        sen,
        spe,
        auc: None,
        confusion: c,
        n,
    })
}

/// Rank-based (Mann-Whitney) AUC; a positive/negative score tie counts 0.5.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Config("score/label length mismatch".into()));
    }
    let positives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let negatives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }
    let mut concordant = 0.0;
    for &p in &positives {
        for &q in &negatives {
            if p > q {
                concordant += 1.0;
            } else if p == q {
                concordant += 0.5;
            }
        }
    }
    Ok(concordant / (positives.len() * negatives.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded stratified k-fold: per class, a shuffled round-robin deal, so
/// per-class counts across folds differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config("fold count must be >= 2".into()));
    }
    let classes: Vec<u8> = {
        let mut c: Vec<u8> = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_sets: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in classes {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < k {
            return Err(Error::Config(format!(
                "class {class} has {} members, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (pos, idx) in members.into_iter().enumerate() {
            test_sets[pos % k].push(idx);
        }
    }
    Ok(test_sets
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train: Vec<usize> = (0..labels.len()).filter(|i| !test.contains(i)).collect();
            FoldSplit { train, test }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
    /// `mean(std)` in percent with one decimal, e.g. `86.0(1.4)`.
    pub formatted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub acc: MetricStat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sen: Option<MetricStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spe: Option<MetricStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<MetricStat>,
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.1}({:.1})", mean * 100.0, std * 100.0)
}

fn stat(values: &[f64]) -> MetricStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    MetricStat {
        mean,
        std,
        formatted: format_mean_std(mean, std),
    }
}

fn optional_stat(values: Vec<Option<f64>>) -> Option<MetricStat> {
    let collected: Option<Vec<f64>> = values.into_iter().collect();
    collected.map(|v| stat(&v))
}

/// Arithmetic mean and population standard deviation per metric.
pub fn aggregate(folds: &[MetricsReport]) -> AggregateReport {
    assert!(!folds.is_empty(), "no folds to aggregate");
    AggregateReport {
        acc: stat(&folds.iter().map(|f| f.acc).collect::<Vec<_>>()),
        sen: optional_stat(folds.iter().map(|f| f.sen).collect()),
        spe: optional_stat(folds.iter().map(|f| f.spe).collect()),
        auc: optional_stat(folds.iter().map(|f| f.auc).collect()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub metrics: MetricsReport,
}

/// The results file written after cross-validated fine-tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsFile {
    pub dataset: String,
    pub config: TrainConfig,
    pub folds: Vec<FoldMetrics>,
    pub aggregate: AggregateReport,
    pub checkpoint_sha256: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let m = confusion_metrics(&[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.sen, Some(1.0));
        assert_eq!(m.spe, Some(1.0));
        assert_eq!(m.confusion, Confusion { tp: 2, fp: 0, tn: 2, fn_: 0 });
    }

    #[test]
    fn degenerate_always_positive() {
        let m = confusion_metrics(&[1, 1], &[1, 0]).unwrap();
        assert_eq!(m.acc, 0.5);
        assert_eq!(m.sen, Some(1.0));
        assert_eq!(m.spe, Some(0.0));
    }

    #[test]
    fn half_right_hand_count() {
        let m = confusion_metrics(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.confusion, Confusion { tp: 1, fp: 1, tn: 1, fn_: 1 });
        assert_eq!(m.acc, 0.5);
        assert_eq!(m.sen, Some(0.5));
        assert_eq!(m.spe, Some(0.5));
    }

    #[test]
    fn single_class_sen_absent() {
        let m = confusion_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(m.sen, None);
        assert_eq!(m.spe, Some(1.0));
    }

    #[test]
    fn confusion_permutation_invariant() {
        let a = confusion_metrics(&[1, 0, 1, 0, 1], &[1, 1, 0, 0, 1]).unwrap();
        let b = confusion_metrics(&[1, 1, 0, 1, 0], &[1, 1, 1, 0, 0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn auc_perfect_separation() {
        let v = auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let v = auc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn auc_brute_force_hand_case() {
        // positives {0.8, 0.3}, negatives {0.5, 0.1}: 3 concordant of 4.
        let v = auc(&[0.8, 0.3, 0.5, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(v, 0.75);
    }

    #[test]
    fn auc_single_class_undefined() {
        assert!(matches!(
            auc(&[0.5, 0.6], &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auc_monotone_transform_invariant() {
        let scores = [0.2, 0.9, 0.4, 0.7, 0.1, 0.6];
        let labels = [0, 1, 0, 1, 0, 1];
        let base = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| (5.0 * s).tanh()).collect();
        assert_eq!(base, auc(&squashed, &labels).unwrap());
    }

    #[test]
    fn kfold_balanced_two_class() {
        let labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let folds = stratified_kfold(&labels, 5, 3).unwrap();
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            let classes: Vec<u8> = f.test.iter().map(|&i| labels[i]).collect();
            assert!(classes.contains(&0) && classes.contains(&1));
        }
    }

    #[test]
    fn kfold_partitions_cover_disjointly() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let folds = stratified_kfold(&labels, 3, 11).unwrap();
        let mut seen = vec![false; labels.len()];
        for f in &folds {
            for &i in &f.test {
                assert!(!seen[i], "index {i} in two test folds");
                seen[i] = true;
                assert!(!f.train.contains(&i));
            }
            assert_eq!(f.train.len() + f.test.len(), labels.len());
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn kfold_deterministic_per_seed() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1];
        assert_eq!(
            stratified_kfold(&labels, 4, 9).unwrap(),
            stratified_kfold(&labels, 4, 9).unwrap()
        );
        assert_ne!(
            stratified_kfold(&labels, 4, 9).unwrap(),
            stratified_kfold(&labels, 4, 10).unwrap()
        );
    }

    #[test]
    fn kfold_small_class_rejected() {
        let labels = [0, 0, 0, 0, 1];
        assert!(stratified_kfold(&labels, 2, 1).is_err());
    }

    #[test]
    fn aggregate_formats_like_the_tables() {
        let mk = |acc: f64| MetricsReport {
            acc,
            sen: None,
            spe: None,
            auc: None,
            confusion: Confusion { tp: 0, fp: 0, tn: 0, fn_: 0 },
            n: 0,
        };
        let constant = aggregate(&[mk(0.8), mk(0.8), mk(0.8)]);
        assert_eq!(constant.acc.formatted, "80.0(0.0)");

        let two_point = aggregate(&[mk(1.0), mk(0.0)]);
        assert_eq!(two_point.acc.mean, 0.5);
        assert_eq!(two_point.acc.std, 0.5);

        let five = aggregate(&[mk(0.86), mk(0.84), mk(0.88), mk(0.85), mk(0.87)]);
        assert_eq!(five.acc.formatted, "86.0(1.4)");
    }

    proptest! {
        #[test]
        fn kfold_properties_hold(
            ones in 4usize..12,
            zeros in 4usize..12,
            k in 2usize..4,
            seed in 0u64..500,
        ) {
            let mut labels = vec![1u8; ones];
            labels.extend(vec![0u8; zeros]);
            let folds = stratified_kfold(&labels, k, seed).unwrap();
            // Coverage + disjointness.
            let mut seen = vec![0usize; labels.len()];
            for f in &folds {
                for &i in &f.test {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            // Per-class balance within 1.
            for class in [0u8, 1] {
                let counts: Vec<usize> = folds
                    .iter()
                    .map(|f| f.test.iter().filter(|&&i| labels[i] == class).count())
                    .collect();
                let min = counts.iter().min().unwrap();
                let max = counts.iter().max().unwrap();
                prop_assert!(max - min <= 1);
            }
        }

        #[test]
        fn auc_is_probability(scores in proptest::collection::vec(0.0f64..1.0, 4..20)) {
            let labels: Vec<u8> = scores.iter().enumerate().map(|(i, _)| (i % 2) as u8).collect();
            let v = auc(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
