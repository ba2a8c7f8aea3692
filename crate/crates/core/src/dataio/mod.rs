//! Feature samples, the dataset CSV format, the synthetic two-domain
//! benchmark, and seeded splitting.
//!
//! Target ground truth is kept in [`GroundTruth`] and never travels with
//! [`TargetSample`]; the adaptation code only ever sees the latter.

mod benchmark;
mod csv;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngStream};

pub use benchmark::{generate_benchmark, Benchmark, BenchmarkSpec, ClassCounts};
pub use csv::{format_dataset, load_feature_dataset, parse_dataset, save_feature_dataset, DatasetMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Source => "S",
            Domain::Target => "T",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Source => Domain::Target,
            Domain::Target => Domain::Source,
        }
    }

    /// One-hot condition vector `[source, target]`.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Domain::Source => [1.0, 0.0],
            Domain::Target => [0.0, 1.0],
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One row of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub id: u64,
    pub domain: Domain,
    pub label: Option<usize>,
    pub features: Vec<f64>,
}

/// Where a training example came from. Synthetic examples remember the
/// domain of the real sample they were generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Origin {
    Real,
    Synthetic { from: Domain },
}

/// A labelled training example: a source sample, a pseudo-labelled target
/// sample, or a synthetic feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledSample {
    pub id: u64,
    pub domain: Domain,
    pub origin: Origin,
    pub label: usize,
    pub features: Vec<f64>,
}

impl LabelledSample {
    pub fn source(id: u64, label: usize, features: Vec<f64>) -> Self {
        LabelledSample {
            id,
            domain: Domain::Source,
            origin: Origin::Real,
            label,
            features,
        }
    }

    /// Total order used to canonicalise training sets before shuffling.
    pub fn sort_key(&self) -> (Origin, Domain, u64) {
        (self.origin, self.domain, self.id)
    }
}

/// An unlabelled target sample as seen by the adaptation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSample {
    pub id: u64,
    pub features: Vec<f64>,
}

/// Held-out target labels, keyed by sample id. Only used for scoring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth(BTreeMap<u64, usize>);

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u64, label: usize) {
        self.0.insert(id, label);
    }

    pub fn get(&self, id: u64) -> Option<usize> {
        self.0.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fraction of `(id, class)` predictions matching the truth. Ids without
    /// a recorded label are skipped; `None` when nothing could be scored.
    pub fn accuracy<I>(&self, predictions: I) -> Option<f64>
    where
        I: IntoIterator<Item = (u64, usize)>,
    {
        let (mut hit, mut total) = (0usize, 0usize);
        for (id, class) in predictions {
            if let Some(truth) = self.get(id) {
                total += 1;
                hit += usize::from(truth == class);
            }
        }
        (total > 0).then(|| hit as f64 / total as f64)
    }
}

/// Splits dataset rows into the three roles used by the adaptation loop.
///
/// Source rows must be labelled. Target labels, when present, are moved into
/// the returned [`GroundTruth`].
pub fn split_roles(samples: &[FeatureSample]) -> Result<(Vec<LabelledSample>, Vec<TargetSample>, GroundTruth)> {
    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut truth = GroundTruth::new();
    for s in samples {
        match s.domain {
            Domain::Source => {
                let label = s
                    .label
                    .ok_or_else(|| Error::Usage(format!("source sample {} has no label", s.id)))?;
                source.push(LabelledSample::source(s.id, label, s.features.clone()));
            }
            Domain::Target => {
                if let Some(label) = s.label {
                    truth.insert(s.id, label);
                }
                target.push(TargetSample {
                    id: s.id,
                    features: s.features.clone(),
                });
            }
        }
    }
    Ok((source, target, truth))
}

/// Inverse of [`split_roles`] for the source half.
pub fn source_rows(source: &[LabelledSample]) -> Vec<FeatureSample> {
    source
        .iter()
        .map(|s| FeatureSample {
            id: s.id,
            domain: s.domain,
            label: Some(s.label),
            features: s.features.clone(),
        })
        .collect()
}

/// Target rows with labels re-attached from `truth` where known.
pub fn target_rows(target: &[TargetSample], truth: Option<&GroundTruth>) -> Vec<FeatureSample> {
    target
        .iter()
        .map(|t| FeatureSample {
            id: t.id,
            domain: Domain::Target,
            label: truth.and_then(|g| g.get(t.id)),
            features: t.features.clone(),
        })
        .collect()
}

/// Stacks feature vectors into a matrix; all must have length `dim`.
pub fn feature_matrix<'a, I>(dim: usize, rows: I) -> Result<Matrix>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    Matrix::from_rows(dim, rows)
}

/// Scales each vector to unit L2 norm; zero vectors are left unchanged.
pub fn l2_normalize_rows(samples: &mut [FeatureSample]) {
    for s in samples {
        let norm = s.features.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            s.features.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// Seeded random split into `(part_a, part_b)` with
/// `|part_a| = round(fraction * n)` clamped to `[1, n-1]` when `n >= 2`.
pub fn split<T: Clone>(samples: &[T], fraction: f64, rng: &mut RngStream) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut take = (fraction * n as f64).round() as usize;
    if n >= 2 {
        take = take.clamp(1, n - 1);
    }
    let a = order[..take].iter().map(|&i| samples[i].clone()).collect();
    let b = order[take..].iter().map(|&i| samples[i].clone()).collect();
    Ok((a, b))
}
