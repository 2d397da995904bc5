//! Projection of images into a latent space.
//!
//! Every encoder implements [`Encoder`]. Two are built in and need nothing
//! outside this crate:
//!
//! * [`DownsampleEncoder`] averages the image over a coarse grid. It keeps
//!   only low spatial frequencies, so i.i.d. pixel texture collapses into a
//!   tight cluster.
//! * [`RandomProjectionEncoder`] multiplies the flattened pixels by a seeded
//!   Gaussian matrix. It is frequency-neutral and roughly preserves pixel
//!   distances.
//!
//! Pretrained networks live outside the process and are reached either
//! through precomputed [`emb1`] files or the JSON-lines [`stdio`] protocol.

pub mod emb1;
pub mod stdio;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

pub use emb1::{load_embedding_file, write_embedding_file, EmbeddingFile};
pub use stdio::{check_protocol_conformance, ConformanceReport, StdioClient, StdioEncoder};

/// A latent vector. Values are held as `f32` (the interchange precision) and
/// widened to `f64` whenever distances are computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ProtocolViolation(format!(
                "embedding component {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Euclidean distance computed in `f64`.
    pub fn distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Unit-norm copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Embedding {
        let norm = self.norm();
        if norm == 0.0 {
            return self.clone();
        }
        Embedding(self.0.iter().map(|&v| (v as f64 / norm) as f32).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    BuiltinDownsample,
    BuiltinRandomProjection,
    ExternalFile,
    ExternalStdio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub name: String,
    pub dim: usize,
    pub kind: EncoderKind,
}

pub trait Encoder: Send + Sync {
    fn descriptor(&self) -> EncoderDescriptor;

    fn encode(&self, img: &ImageBuffer) -> Result<Embedding>;
}

/// Mean pixel value over a `grid x grid` partition, per channel, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownsampleEncoder {
    pub grid: usize,
    pub channels: usize,
}

impl DownsampleEncoder {
    pub fn new(grid: usize, channels: usize) -> Self {
        Self { grid, channels }
    }
}

impl Encoder for DownsampleEncoder {
    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor {
            name: format!("downsample-g{}", self.grid),
            dim: self.grid * self.grid * self.channels,
            kind: EncoderKind::BuiltinDownsample,
        }
    }

    fn encode(&self, img: &ImageBuffer) -> Result<Embedding> {
        if img.channels() != self.channels {
            return Err(Error::DimensionMismatch {
                expected: self.grid * self.grid * self.channels,
                found: self.grid * self.grid * img.channels(),
            });
        }
        downsample_mean_encode(img, self.grid)
    }
}

/// Cells are ordered row by row (left to right, then top to bottom) within
/// each channel plane, channel planes one after another. Cell `i` of `g`
/// along an axis of length `n` covers `[i*n/g, (i+1)*n/g)`.
pub fn downsample_mean_encode(img: &ImageBuffer, grid: usize) -> Result<Embedding> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if grid == 0 || grid > w.min(h) {
        return Err(Error::GridTooFine {
            grid,
            width: w,
            height: h,
        });
    }
    let bounds = |n: usize, i: usize| (i * n / grid, (i + 1) * n / grid);
    let mut values = Vec::with_capacity(grid * grid * ch);
    for c in 0..ch {
        for cy in 0..grid {
            let (y0, y1) = bounds(h, cy);
            for cx in 0..grid {
                let (x0, x1) = bounds(w, cx);
                let mut sum = 0u64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += img.get(x, y, c) as u64;
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                values.push((sum as f64 / count / 255.0) as f32);
            }
        }
    }
    Embedding::new(values)
}

type Shape = (usize, usize, usize);

/// Dense Gaussian random projection of the flattened pixels (scaled to
/// `[0, 1]`). The matrix for an input shape is generated on first use from
/// `(seed, shape)` and cached.
#[derive(Debug)]
pub struct RandomProjectionEncoder {
    dim: usize,
    seed: u64,
    matrices: Mutex<HashMap<Shape, Arc<Vec<f32>>>>,
}

impl RandomProjectionEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            matrices: Mutex::new(HashMap::new()),
        }
    }

    /// Row-major `inputs x dim` matrix with `Normal(0, 1/dim)` entries.
    fn matrix(&self, shape: Shape) -> Arc<Vec<f32>> {
        let mut cache = self.matrices.lock().unwrap();
        cache
            .entry(shape)
            .or_insert_with(|| {
                let (w, h, c) = shape;
                let inputs = w * h * c;
                let stream = self.seed
                    ^ (w as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    ^ (h as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
                    ^ (c as u64).wrapping_mul(0x1656_67b1_9e37_79f9);
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                let scale = 1.0 / (self.dim as f64).sqrt();
                Arc::new(
                    (0..inputs * self.dim)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (z * scale) as f32
                        })
                        .collect(),
                )
            })
            .clone()
    }
}

impl Encoder for RandomProjectionEncoder {
    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor {
            name: format!("random-projection-d{}", self.dim),
            dim: self.dim,
            kind: EncoderKind::BuiltinRandomProjection,
        }
    }

    fn encode(&self, img: &ImageBuffer) -> Result<Embedding> {
        random_projection_encode_with(&self.matrix((img.width(), img.height(), img.channels())), img, self.dim)
    }
}

pub fn random_projection_encode(img: &ImageBuffer, dim: usize, seed: u64) -> Result<Embedding> {
    RandomProjectionEncoder::new(dim, seed).encode(img)
}

fn random_projection_encode_with(matrix: &[f32], img: &ImageBuffer, dim: usize) -> Result<Embedding> {
    let mut acc = vec![0.0f64; dim];
    for (row, &p) in matrix.chunks_exact(dim).zip(img.pixels()) {
        if p == 0 {
            continue;
        }
        let x = p as f64 / 255.0;
        for (a, &m) in acc.iter_mut().zip(row) {
            *a += x * m as f64;
        }
    }
    Embedding::from_f64(&acc)
}
