use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FeatureSample, GroundTruth, LabelledSample, TargetSample};
use crate::dataio::csv::DatasetMeta;
use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Samples per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub Vec<usize>);

impl ClassCounts {
    pub fn uniform(classes: usize, per_class: usize) -> Self {
        ClassCounts(vec![per_class; classes])
    }

    /// The first `ceil(C/2)` classes get `per_class` samples and the rest
    /// `per_class / ratio` (rounded, at least 1).
    pub fn imbalanced(classes: usize, per_class: usize, ratio: f64) -> Self {
        let minority = ((per_class as f64 / ratio).round() as usize).max(1);
        let split = classes.div_ceil(2);
        ClassCounts((0..classes).map(|c| if c < split { per_class } else { minority }).collect())
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// A Gaussian-blob source domain and a shifted copy of it as the target
/// domain.
///
/// Class centroids `m_c` are drawn from `N(0, centroid_scale² I)`. Source
/// samples are `m_c + spread · n`. Target samples are
/// `R m_c + t + spread · s_c · n` where `R` rotates by `rotation` radians in
/// `floor(dim/2)` random orthogonal planes, `t` is a random direction of
/// length `translation`, and `s_c = exp(covariance_scale · g_c)` with
/// `g_c ~ N(0, 1)` per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub classes: usize,
    pub dim: usize,
    pub source_counts: ClassCounts,
    pub target_counts: ClassCounts,
    pub centroid_scale: f64,
    pub spread: f64,
    pub translation: f64,
    pub rotation: f64,
    pub covariance_scale: f64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    /// Ten classes in 64 dimensions, 100 samples per class and domain.
    fn default() -> Self {
        BenchmarkSpec {
            classes: 10,
            dim: 64,
            source_counts: ClassCounts::uniform(10, 100),
            target_counts: ClassCounts::uniform(10, 100),
            centroid_scale: 1.0,
            spread: 2.0,
            translation: 4.0,
            rotation: 0.9,
            covariance_scale: 0.0,
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        for (name, counts) in [("source", &self.source_counts), ("target", &self.target_counts)] {
            if counts.0.len() != self.classes {
                return bad(format!(
                    "{name} counts list {} classes, expected {}",
                    counts.0.len(),
                    self.classes
                ));
            }
            if counts.total() == 0 {
                return bad(format!("{name} domain has no samples"));
            }
        }
        if !(self.centroid_scale > 0.0 && self.centroid_scale.is_finite()) {
            return bad(format!("centroid scale must be positive, got {}", self.centroid_scale));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return bad(format!("spread must be positive, got {}", self.spread));
        }
        for (name, v) in [
            ("translation", self.translation),
            ("rotation", self.rotation),
            ("covariance scale", self.covariance_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            dim: self.dim,
            classes: self.classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub source: Vec<LabelledSample>,
    pub target: Vec<TargetSample>,
    pub truth: GroundTruth,
}

impl Benchmark {
    pub fn source_rows(&self) -> Vec<FeatureSample> {
        super::source_rows(&self.source)
    }

    /// Target rows with their true labels attached.
    pub fn target_rows(&self) -> Vec<FeatureSample> {
        super::target_rows(&self.target, Some(&self.truth))
    }

    pub fn target_labels(&self) -> Vec<usize> {
        self.target
            .iter()
            .map(|t| self.truth.get(t.id).expect("benchmark labels every target sample"))
            .collect()
    }
}

/// `d x d` rotation by `angle` in `floor(d/2)` orthogonal planes of a random
/// orthonormal basis.
fn random_rotation(dim: usize, angle: f64, rng: &mut RngStream) -> DMatrix<f64> {
    let gaussian = DMatrix::from_fn(dim, dim, |_, _| rng.standard_normal());
    let q = gaussian.qr().q();
    let mut block = DMatrix::<f64>::identity(dim, dim);
    let (s, c) = angle.sin_cos();
    for p in 0..dim / 2 {
        let (i, j) = (2 * p, 2 * p + 1);
        block[(i, i)] = c;
        block[(i, j)] = -s;
        block[(j, i)] = s;
        block[(j, j)] = c;
    }
    &q * block * q.transpose()
}

/// Pure function of `spec`: the same spec always yields bit-identical data.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let (c_count, d) = (spec.classes, spec.dim);
    let root = RngStream::new(spec.seed, "benchmark");

    let mut rng = root.derive("centroids");
    let centroids: Vec<Vec<f64>> = (0..c_count)
        .map(|_| (0..d).map(|_| spec.centroid_scale * rng.standard_normal()).collect())
        .collect();

    let mut rng = root.derive("shift");
    let rotation = random_rotation(d, spec.rotation, &mut rng);
    let direction: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let translation: Vec<f64> = direction.iter().map(|v| spec.translation * v / norm).collect();
    let class_spread: Vec<f64> = (0..c_count)
        .map(|_| spec.spread * (spec.covariance_scale * rng.standard_normal()).exp())
        .collect();

    let target_centroids: Vec<Vec<f64>> = centroids
        .iter()
        .map(|m| {
            let v = &rotation * nalgebra::DVector::from_column_slice(m);
            v.iter().zip(&translation).map(|(a, b)| a + b).collect()
        })
        .collect();

    let mut rng = root.derive("source");
    let mut source = Vec::with_capacity(spec.source_counts.total());
    for (class, &n) in spec.source_counts.0.iter().enumerate() {
        for _ in 0..n {
            let features = centroids[class]
                .iter()
                .map(|m| m + spec.spread * rng.standard_normal())
                .collect();
            source.push(LabelledSample::source(source.len() as u64, class, features));
        }
    }

    let mut rng = root.derive("target");
    let mut target = Vec::with_capacity(spec.target_counts.total());
    let mut truth = GroundTruth::new();
    for (class, &n) in spec.target_counts.0.iter().enumerate() {
        for _ in 0..n {
            let id = target.len() as u64;
            let features = target_centroids[class]
                .iter()
                .map(|m| m + class_spread[class] * rng.standard_normal())
                .collect();
            target.push(TargetSample { id, features });
            truth.insert(id, class);
        }
    }

    Ok(Benchmark {
        spec: spec.clone(),
        source,
        target,
        truth,
    })
}
