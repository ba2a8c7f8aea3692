//! Pseudo-label assignment and class-wise selection of the most confident
//! target samples.
//!
//! Two quota schedules decide how many class-`c` samples enter the training
//! set at iteration `k` of `T`:
//!
//! * balanced: `min(floor(k n_t / (T C)), n̂(c, k))`, where `n̂(c, k)` is the
//!   number of targets currently predicted as `c`. A positive quota that
//!   floors to zero is raised to one so that every predicted class takes part
//!   from the first iteration.
//! * proportional: `floor(k n̂(c, k) / T)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{predict_with_confidence, ClassifierParams};
use crate::dataio::TargetSample;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub sample_id: u64,
    pub class: usize,
    pub confidence: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionQuota {
    pub class: usize,
    pub iteration: usize,
    pub quota: usize,
}

/// How per-class quotas grow over the iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuotaRule {
    /// Equal per-class budget `k n_t / (T C)`, clamped by the predicted count.
    Balanced,
    /// Budget proportional to the predicted count, `k n̂ / T`.
    Proportional,
    /// No selection: every pseudo-labelled sample is used.
    All,
}

pub fn assign_pseudo_labels(
    classifier: &ClassifierParams,
    target_set: &[TargetSample],
    iteration: usize,
) -> Result<Vec<PseudoLabelRecord>> {
    if target_set.is_empty() {
        return Err(Error::Empty("target set"));
    }
    let x = Matrix::from_rows(
        classifier.feature_dim(),
        target_set.iter().map(|t| t.features.as_slice()),
    )?;
    let preds = predict_with_confidence(classifier, &x)?;
    Ok(target_set
        .iter()
        .zip(preds)
        .map(|(t, p)| PseudoLabelRecord {
            sample_id: t.id,
            class: p.class,
            confidence: p.confidence,
            iteration,
        })
        .collect())
}

fn check_iteration(k: usize, t: usize) -> Result<()> {
    if t == 0 || k == 0 || k > t {
        return Err(Error::Usage(format!("iteration {k} outside 1..={t}")));
    }
    Ok(())
}

/// Balanced quota `N(c, k)` for a class with `n_hat` predicted samples.
pub fn quota_naive(k: usize, t: usize, n_t: usize, classes: usize, n_hat: usize) -> Result<usize> {
    check_iteration(k, t)?;
    if n_t == 0 || classes == 0 {
        return Err(Error::Usage("n_t and C must be positive".into()));
    }
    let mut budget = (k * n_t) / (t * classes);
    if budget == 0 && n_hat >= 1 {
        budget = 1;
    }
    Ok(budget.min(n_hat))
}

/// Proportional quota `floor(k n_hat / T)`.
pub fn quota_star(k: usize, t: usize, n_hat: usize) -> Result<usize> {
    check_iteration(k, t)?;
    Ok((k * n_hat) / t)
}

/// Number of records predicted as each class.
pub fn predicted_counts(records: &[PseudoLabelRecord], classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; classes];
    for r in records {
        *counts.get_mut(r.class).ok_or(Error::LabelOutOfRange {
            label: r.class,
            classes,
        })? += 1;
    }
    Ok(counts)
}

/// Per-class quotas for iteration `k` of `t` under `rule`.
pub fn class_quotas(
    rule: QuotaRule,
    records: &[PseudoLabelRecord],
    classes: usize,
    k: usize,
    t: usize,
) -> Result<Vec<SelectionQuota>> {
    check_iteration(k, t)?;
    let n_hat = predicted_counts(records, classes)?;
    let n_t = records.len();
    n_hat
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let quota = match rule {
                QuotaRule::Balanced => quota_naive(k, t, n_t, classes, n)?,
                QuotaRule::Proportional => quota_star(k, t, n)?,
                QuotaRule::All => n,
            };
            Ok(SelectionQuota {
                class: c,
                iteration: k,
                quota,
            })
        })
        .collect()
}

/// For each class, the `min(quota, n̂)` records with the highest confidence;
/// equal confidences go to the lower sample id. The result is sorted by
/// `(class, sample_id)` and does not depend on the order of `records`.
pub fn select_subset(records: &[PseudoLabelRecord], quotas: &[SelectionQuota]) -> Result<Vec<PseudoLabelRecord>> {
    let classes = quotas.iter().map(|q| q.class + 1).max().unwrap_or(0);
    let mut per_class = vec![None; classes];
    for q in quotas {
        per_class[q.class] = Some(q.quota);
    }
    let mut buckets: Vec<Vec<PseudoLabelRecord>> = vec![Vec::new(); classes];
    for r in records {
        match per_class.get(r.class).copied().flatten() {
            Some(_) => buckets[r.class].push(*r),
            None => return Err(Error::Usage(format!("no quota for class {}", r.class))),
        }
    }
    let mut selected = Vec::new();
    for (c, mut bucket) in buckets.into_iter().enumerate() {
        let quota = per_class[c].unwrap_or(0);
        bucket.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then(a.sample_id.cmp(&b.sample_id))
        });
        bucket.truncate(quota);
        bucket.sort_by_key(|r| r.sample_id);
        selected.extend(bucket);
    }
    Ok(selected)
}

/// Selected-set audit dump: `sample_id,pseudo_class,confidence,iteration`.
pub fn format_selection(records: &[PseudoLabelRecord]) -> String {
    let mut out = String::from("sample_id,pseudo_class,confidence,iteration\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.sample_id, r.class, r.confidence, r.iteration);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, DenseNet, Layer};
    use proptest::prelude::*;

    fn rec(id: u64, class: usize, confidence: f64) -> PseudoLabelRecord {
        PseudoLabelRecord {
            sample_id: id,
            class,
            confidence,
            iteration: 1,
        }
    }

    fn quotas(q: &[usize]) -> Vec<SelectionQuota> {
        q.iter()
            .enumerate()
            .map(|(class, &quota)| SelectionQuota { class, iteration: 1, quota })
            .collect()
    }

    fn constant_classifier(bias: Vec<f64>) -> ClassifierParams {
        let c = bias.len();
        let layer = Layer {
            weight: Matrix::zeros(2, c),
            bias,
            activation: Activation::Identity,
        };
        ClassifierParams::from_net(DenseNet::new(vec![layer], 0.0).unwrap()).unwrap()
    }

    fn targets(n: u64) -> Vec<TargetSample> {
        (0..n)
            .map(|i| TargetSample { id: i, features: vec![i as f64, -(i as f64)] })
            .collect()
    }

    #[test]
    fn margin_classifier_labels_everything_one() {
        let records = assign_pseudo_labels(&constant_classifier(vec![0.0, 10.0, 0.0]), &targets(5), 0).unwrap();
        assert!(records.iter().all(|r| r.class == 1 && r.confidence > 0.99));
    }

    #[test]
    fn uniform_classifier_ties_to_zero() {
        let records = assign_pseudo_labels(&constant_classifier(vec![0.0; 4]), &targets(3), 2).unwrap();
        for r in records {
            assert_eq!((r.class, r.iteration), (0, 2));
            assert!((r.confidence - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_target_set_rejected() {
        assert!(assign_pseudo_labels(&constant_classifier(vec![0.0; 2]), &[], 0).is_err());
    }

    #[test]
    fn naive_quota_examples() {
        assert_eq!(quota_naive(1, 10, 100, 10, 50).unwrap(), 1);
        assert_eq!(quota_naive(10, 10, 100, 10, 3).unwrap(), 3);
        assert_eq!(quota_naive(5, 10, 200, 10, 100).unwrap(), 10);
        // floor(1*10/(10*10)) = 0 is rescued to 1, and n̂ = 0 stays 0.
        assert_eq!(quota_naive(1, 10, 10, 10, 4).unwrap(), 1);
        assert_eq!(quota_naive(1, 10, 10, 10, 0).unwrap(), 0);
        assert!(quota_naive(0, 10, 10, 10, 1).is_err());
        assert!(quota_naive(11, 10, 10, 10, 1).is_err());
    }

    #[test]
    fn star_quota_examples() {
        assert_eq!(quota_star(5, 10, 40).unwrap(), 20);
        assert_eq!(quota_star(10, 10, 37).unwrap(), 37);
        assert_eq!(quota_star(3, 10, 0).unwrap(), 0);
        assert!(quota_star(0, 10, 5).is_err());
    }

    #[test]
    fn selection_examples() {
        let records = [rec(1, 0, 0.9), rec(2, 0, 0.8), rec(3, 0, 0.7)];
        let chosen: Vec<u64> = select_subset(&records, &quotas(&[2])).unwrap().iter().map(|r| r.sample_id).collect();
        assert_eq!(chosen, vec![1, 2]);

        assert!(select_subset(&records, &quotas(&[0])).unwrap().is_empty());

        let ties = [rec(7, 0, 0.5), rec(3, 0, 0.5), rec(9, 0, 0.5)];
        let chosen: Vec<u64> = select_subset(&ties, &quotas(&[2])).unwrap().iter().map(|r| r.sample_id).collect();
        assert_eq!(chosen, vec![3, 7]);
    }

    #[test]
    fn selection_needs_a_quota_per_class() {
        assert!(select_subset(&[rec(0, 3, 0.5)], &quotas(&[1, 1])).is_err());
    }

    #[test]
    fn proportional_keeps_imbalance_balanced_equalises() {
        let mut records = Vec::new();
        for i in 0..900 {
            records.push(rec(i, 0, 0.9));
        }
        for i in 900..1000 {
            records.push(rec(i, 1, 0.9));
        }
        for k in 1..=10 {
            let star = class_quotas(QuotaRule::Proportional, &records, 2, k, 10).unwrap();
            assert_eq!(star[0].quota, 9 * star[1].quota);
        }
        // Per-class cap at k = 1 is 1000/(10*2) = 50, below both n̂.
        let naive = class_quotas(QuotaRule::Balanced, &records, 2, 1, 10).unwrap();
        assert_eq!((naive[0].quota, naive[1].quota), (50, 50));
    }

    #[test]
    fn dump_format() {
        let text = format_selection(&[rec(4, 2, 0.5)]);
        assert_eq!(text, "sample_id,pseudo_class,confidence,iteration\n4,2,0.5,1\n");
    }

    fn records_strategy() -> impl Strategy<Value = (Vec<PseudoLabelRecord>, usize)> {
        (2usize..6).prop_flat_map(|classes| {
            (
                proptest::collection::vec((0..classes, 1u32..20), 1..120).prop_map(|v| {
                    v.into_iter()
                        .enumerate()
                        .map(|(i, (c, conf))| rec(i as u64 * 7 % 1000, c, conf as f64 / 20.0))
                        .collect::<Vec<_>>()
                }),
                Just(classes),
            )
        })
    }

    proptest! {
        #[test]
        fn selection_ignores_input_order((records, classes) in records_strategy(), k in 1usize..=10, seed in any::<u64>()) {
            let mut dedup = records.clone();
            dedup.sort_by_key(|r| r.sample_id);
            dedup.dedup_by_key(|r| r.sample_id);
            let q = class_quotas(QuotaRule::Balanced, &dedup, classes, k, 10).unwrap();
            let a = select_subset(&dedup, &q).unwrap();
            let mut shuffled = dedup.clone();
            crate::tensor::RngStream::new(seed, "perm").shuffle(&mut shuffled);
            prop_assert_eq!(a.clone(), select_subset(&shuffled, &q).unwrap());
            prop_assert!(a.len() <= dedup.len());
        }

        #[test]
        fn balanced_counts_differ_by_at_most_one(classes in 2usize..8, per_class in 1usize..50, extra in proptest::collection::vec(0usize..2, 8), k in 1usize..=10) {
            // Every class has at least floor(n_t / C) predictions.
            let t = 10;
            let mut records = Vec::new();
            let mut id = 0;
            for c in 0..classes {
                for _ in 0..per_class + extra[c] {
                    records.push(rec(id, c, 0.5));
                    id += 1;
                }
            }
            let n_t = records.len();
            let cap = n_t / classes;
            let counts = predicted_counts(&records, classes).unwrap();
            prop_assume!(counts.iter().all(|&n| n >= cap));
            let q = class_quotas(QuotaRule::Balanced, &records, classes, k, t).unwrap();
            let selected = select_subset(&records, &q).unwrap();
            let got = predicted_counts(&selected, classes).unwrap();
            let (lo, hi) = (got.iter().min().unwrap(), got.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            prop_assert!(got.iter().sum::<usize>() <= n_t);
        }
    }
}
