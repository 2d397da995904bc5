//! Datasets: JSON-lines manifests, seeded splits and synthetic generators.
//!
//! Manifest lines look like
//! `{"id": "n01440764_0001", "path": "imgs/a.png", "category": "natural"}`.
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::derive_seed;
use crate::raster::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Natural,
    Texture,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Category::Natural => "natural",
            Category::Texture => "texture",
        })
    }
}

/// An image with its identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub category: Category,
    pub image: ImageBuffer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub category: Category,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if !ids.insert(entry.id.clone()) {
                return Err(Error::DuplicateIdAtLine {
                    id: entry.id,
                    line: line_no,
                });
            }
            if let Some(base) = base {
                if entry.path.is_relative() {
                    entry.path = base.join(&entry.path);
                }
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("manifest entries serialize") + "\n")
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn missing_paths(&self) -> Vec<&Path> {
        self.entries
            .iter()
            .map(|e| e.path.as_path())
            .filter(|p| !p.exists())
            .collect()
    }

    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .map(|e| {
                Ok(Sample {
                    id: e.id.clone(),
                    category: e.category,
                    image: ImageBuffer::load(&e.path)?,
                })
            })
            .collect()
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::parse(&text, path.parent())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub memorize: f64,
    pub novel: f64,
    /// Fraction of the memorize subset reused as calibration "seen" images.
    #[serde(default)]
    pub calibration_seen: f64,
    #[serde(default)]
    pub calibration_novel: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.memorize, self.novel, self.calibration_seen, self.calibration_novel];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Fraction(format!("fractions must lie in [0, 1]: {fractions:?}")));
        }
        let disjoint = self.memorize + self.novel + self.calibration_novel;
        if disjoint > 1.0 + 1e-9 {
            return Err(Error::Fraction(format!(
                "memorize + novel + calibration_novel = {disjoint} exceeds 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub memorize: Vec<T>,
    pub novel: Vec<T>,
    /// Subset of `memorize`.
    pub calibration_seen: Vec<T>,
    pub calibration_novel: Vec<T>,
}

/// Seeded shuffle followed by a cut at cumulative rounded boundaries. When the
/// disjoint fractions sum to one, every item lands in exactly one subset.
pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<Split<T>> {
    spec.validate()?;
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let cut = |f: f64| ((f * n as f64).round() as usize).min(n);
    let b1 = cut(spec.memorize);
    let b2 = cut(spec.memorize + spec.novel).max(b1);
    let b3 = cut(spec.memorize + spec.novel + spec.calibration_novel).max(b2);
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    let memorize = take(0..b1);
    let n_cal_seen = ((spec.calibration_seen * b1 as f64).round() as usize).min(b1);
    Ok(Split {
        calibration_seen: memorize[..n_cal_seen].to_vec(),
        memorize,
        novel: take(b1..b2),
        calibration_novel: take(b2..b3),
    })
}

impl DatasetManifest {
    pub fn split(&self, spec: &SplitSpec) -> Result<Split<ManifestEntry>> {
        split(&self.entries, spec)
    }
}

fn image_rng(seed: u64, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, id))
}

/// Smooth structured images: a 4x4 grid of random RGB colors, bilinearly
/// upsampled to `size x size`, plus a mild linear gradient.
pub fn synth_structured(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    const GRID: usize = 4;
    (0..n)
        .map(|i| {
            let id = format!("natural-{i:05}");
            let mut rng = image_rng(seed, &id);
            let control: Vec<f64> = (0..GRID * GRID * 3).map(|_| rng.random_range(0.0..=255.0)).collect();
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let amplitude: f64 = rng.random_range(-20.0..=20.0);
            let (ca, sa) = (angle.cos(), angle.sin());
            let axis = |p: usize| ((p as f64 + 0.5) / size as f64 * GRID as f64 - 0.5).clamp(0.0, (GRID - 1) as f64);
            let image = ImageBuffer::from_fn(size, size, 3, |x, y, c| {
                let (u, v) = (axis(x), axis(y));
                let (x0, y0) = ((u.floor() as usize).min(GRID - 2), (v.floor() as usize).min(GRID - 2));
                let (fx, fy) = (u - x0 as f64, v - y0 as f64);
                let at = |gx: usize, gy: usize| control[(gy * GRID + gx) * 3 + c];
                let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
                let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
                let base = top * (1.0 - fy) + bottom * fy;
                let t = (x as f64 / size as f64 - 0.5) * ca + (y as f64 / size as f64 - 0.5) * sa;
                (base + amplitude * t).round().clamp(0.0, 255.0) as u8
            })
            .expect("positive size");
            Sample {
                id,
                category: Category::Natural,
                image,
            }
        })
        .collect()
}

/// White-noise textures: every sample i.i.d. uniform over `0..=255`.
pub fn synth_texture(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let id = format!("texture-{i:05}");
            let mut rng = image_rng(seed, &id);
            let image = ImageBuffer::from_fn(size, size, 3, |_, _, _| rng.random()).expect("positive size");
            Sample {
                id,
                category: Category::Texture,
                image,
            }
        })
        .collect()
}
