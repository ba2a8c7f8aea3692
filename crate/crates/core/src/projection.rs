//! Two-component PCA of real and synthetic features, for visual inspection.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dataio::{Domain, LabelledSample, Origin, TargetSample};
use crate::error::{Error, Result};

/// A row to project. `label` is `None` for unlabelled target samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionInput {
    pub id: u64,
    pub domain: Domain,
    pub label: Option<usize>,
    pub synthetic: bool,
    pub features: Vec<f64>,
}

impl ProjectionInput {
    pub fn from_labelled(s: &LabelledSample) -> Self {
        ProjectionInput {
            id: s.id,
            domain: s.domain,
            label: Some(s.label),
            synthetic: matches!(s.origin, Origin::Synthetic { .. }),
            features: s.features.clone(),
        }
    }

    pub fn from_target(s: &TargetSample, label: Option<usize>) -> Self {
        ProjectionInput {
            id: s.id,
            domain: Domain::Target,
            label,
            synthetic: false,
            features: s.features.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub id: u64,
    pub domain: Domain,
    pub label: Option<usize>,
    pub synthetic: bool,
    pub pc1: f64,
    pub pc2: f64,
}

/// Principal axes and the data mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit axes, descending variance.
    pub axes: [Vec<f64>; 2],
    /// Covariance eigenvalues, descending, all `dim` of them.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> (f64, f64) {
        let dot = |axis: &[f64]| axis.iter().zip(x.iter().zip(&self.mean)).map(|(a, (v, m))| a * (v - m)).sum();
        (dot(&self.axes[0]), dot(&self.axes[1]))
    }
}

/// Fits PCA on `rows` using the population covariance (divided by `n`).
/// Each axis is signed so its largest-magnitude loading is positive.
pub fn fit_pca(rows: &[&[f64]]) -> Result<Pca> {
    let n = rows.len();
    if n < 3 {
        return Err(Error::Usage(format!("projection needs at least 3 samples, got {n}")));
    }
    let dim = rows[0].len();
    if dim < 2 {
        return Err(Error::Usage(format!("projection needs dimension at least 2, got {dim}")));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Shape(format!("row of length {} among rows of length {dim}", r.len())));
    }
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let scale = centered.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = (scale * scale).max(f64::MIN_POSITIVE) * 1e-12 * dim as f64;
    let rank = eigenvalues.iter().filter(|&&l| l > tol).count();
    if rank == 0 {
        return Err(Error::DegenerateProjection { rank });
    }

    let axis = |k: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let mut pivot = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    Ok(Pca {
        mean,
        axes: [axis(0), axis(1)],
        eigenvalues,
    })
}

/// Fits PCA on all inputs and projects each onto the top two axes.
pub fn pca_project(inputs: &[ProjectionInput]) -> Result<Vec<ProjectedPoint>> {
    let rows: Vec<&[f64]> = inputs.iter().map(|s| s.features.as_slice()).collect();
    let pca = fit_pca(&rows)?;
    Ok(inputs
        .iter()
        .map(|s| {
            let (pc1, pc2) = pca.project(&s.features);
            ProjectedPoint {
                id: s.id,
                domain: s.domain,
                label: s.label,
                synthetic: s.synthetic,
                pc1,
                pc2,
            }
        })
        .collect())
}

/// `id,domain,label,origin,pc1,pc2` with `origin` one of `real`/`synthetic`
/// and `-` for a missing label.
pub fn format_projection(points: &[ProjectedPoint]) -> String {
    let mut out = String::from("id,domain,label,origin,pc1,pc2\n");
    for p in points {
        let label = p.label.map_or_else(|| "-".to_string(), |l| l.to_string());
        let origin = if p.synthetic { "synthetic" } else { "real" };
        let _ = writeln!(out, "{},{},{label},{origin},{},{}", p.id, p.domain.tag(), p.pc1, p.pc2);
    }
    out
}
