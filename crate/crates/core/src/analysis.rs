//! PCA of memory encodings, recall-distance summaries and failure cases.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::encoder::{Embedding, Encoder};
use crate::error::{Error, Result};
use crate::store::MemoryStore;
use crate::tasks::{recall_distance, ForcedChoiceTrial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Unit-norm principal axes, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each axis (`1/(n-1)` normalization), non-increasing.
    pub explained_variance: Vec<f64>,
}

/// Fits the top-`k` principal axes from the sample covariance.
///
/// Rows are put into a canonical order before accumulation so the result is
/// bit-identical under any permutation of the input. Each axis is oriented
/// so its largest-magnitude entry is positive (first such entry on ties).
pub fn fit_pca(embeddings: &[Embedding], k: usize) -> Result<PcaProjection> {
    let n = embeddings.len();
    if n < k + 1 || n < 2 {
        return Err(Error::InsufficientData {
            needed: (k + 1).max(2),
            got: n,
        });
    }
    let dim = embeddings[0].dim();
    if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: e.dim(),
        });
    }
    if k > dim {
        return Err(Error::InsufficientData { needed: k, got: dim });
    }

    let mut rows: Vec<Vec<f64>> = embeddings.iter().map(Embedding::to_f64).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if rows.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::DegenerateVariance);
    }

    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eigen = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eigen.eigenvectors.column(idx).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eigen.eigenvalues[idx].max(0.0));
    }
    Ok(PcaProjection {
        mean,
        components,
        explained_variance,
    })
}

impl PcaProjection {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, e: &Embedding) -> Result<Vec<f64>> {
        if e.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: e.dim(),
            });
        }
        let centered: Vec<f64> = e.values().iter().zip(&self.mean).map(|(&v, m)| v as f64 - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }
}

pub fn project(pca: &PcaProjection, e: &Embedding) -> Result<Vec<f64>> {
    pca.project(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub rule: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// `(percent, value)` with linear interpolation between order statistics.
    pub percentiles: Vec<(f64, f64)>,
    pub histogram: Histogram,
}

const PERCENTS: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];
const MAX_BINS: usize = 512;

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Summary of a batch of distances; bins follow the Freedman-Diaconis rule
/// (a single bin when the IQR is zero).
pub fn summarize_distances(distances: &[f64]) -> Result<DistanceSummary> {
    if distances.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = (sorted.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let (min, max) = (sorted[0], sorted[n - 1]);
    let iqr = percentile(&sorted, 75.0) - percentile(&sorted, 25.0);
    let width = 2.0 * iqr / (n as f64).cbrt();
    let bins = if width > 0.0 && max > min {
        (((max - min) / width).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        1
    };
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { max } else { min + (max - min) * i as f64 / bins as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for &d in &sorted {
        let b = if max > min {
            (((d - min) / (max - min) * bins as f64) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Ok(DistanceSummary {
        count: n,
        mean,
        std,
        min,
        max,
        percentiles: PERCENTS.iter().map(|&p| (p, percentile(&sorted, p))).collect(),
        histogram: Histogram {
            rule: "freedman-diaconis".into(),
            edges,
            counts,
        },
    })
}

/// Recall distances (no perturbation) of `images` against `store`, summarized.
pub fn distance_stats(store: &MemoryStore, images: &[Sample], encoder: &dyn Encoder) -> Result<DistanceSummary> {
    if store.is_empty() {
        return Err(Error::NoRecords);
    }
    let distances = images
        .iter()
        .map(|s| recall_distance(store, &s.image, encoder).map(|r| r.distance))
        .collect::<Result<Vec<_>>>()?;
    summarize_distances(&distances)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCase {
    pub seen_id: String,
    pub seen_nn_id: String,
    pub novel_id: String,
    pub novel_nn_id: String,
    pub d_seen: f64,
    pub d_novel: f64,
}

/// One case per incorrect trial, including ties.
pub fn extract_failures(trials: &[ForcedChoiceTrial]) -> Vec<FailureCase> {
    trials
        .iter()
        .filter(|t| !t.correct)
        .map(|t| FailureCase {
            seen_id: t.seen_id.clone(),
            seen_nn_id: t.seen_nn_id.clone(),
            novel_id: t.novel_id.clone(),
            novel_nn_id: t.novel_nn_id.clone(),
            d_seen: t.d_seen,
            d_novel: t.d_novel,
        })
        .collect()
}
