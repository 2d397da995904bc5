use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::perturb::{PerturbationKind, PerturbationSpec};
use crate::store::Metric;

pub const CONFIG_SCHEMA: &str = "config_v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderConfig {
    Downsample {
        grid: usize,
        #[serde(default = "default_channels")]
        channels: usize,
    },
    RandomProjection {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Precomputed embeddings keyed by image id: `clean` holds unperturbed
    /// encodings, `memory` the encodings of the perturbed images.
    ExternalFile {
        name: String,
        dim: usize,
        clean: PathBuf,
        memory: PathBuf,
    },
    ExternalStdio {
        name: String,
        dim: usize,
        command: Vec<String>,
    },
}

fn default_channels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default)]
        natural: usize,
        #[serde(default)]
        texture: usize,
        size: usize,
        /// Identifies the generated corpus.
        #[serde(default)]
        seed: u64,
    },
    Manifest {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub kind: PerturbationKind,
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub memorize: f64,
    pub novel: f64,
    #[serde(default)]
    pub calibration_seen: f64,
    #[serde(default)]
    pub calibration_novel: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub split: u64,
    #[serde(default)]
    pub perturbation: u64,
    #[serde(default)]
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedChoiceConfig {
    /// Defaults to as many pairs as the smaller of the seen and novel pools.
    #[serde(default)]
    pub pairs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatConfig {
    /// Defaults to the size of the novel pool.
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default = "default_repeat_rate")]
    pub rate: f64,
}

fn default_repeat_rate() -> f64 {
    0.125
}

impl Default for RepeatConfig {
    fn default() -> Self {
        Self {
            length: None,
            rate: default_repeat_rate(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaSource {
    /// Stored (perturbed) memory vectors.
    #[default]
    Memory,
    Clean,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub noise: Vec<f64>,
    #[serde(default)]
    pub blur: Vec<f64>,
}

impl SweepConfig {
    pub fn points(&self) -> Vec<PerturbationConfig> {
        let noise = self.noise.iter().map(|&sigma| PerturbationConfig {
            kind: PerturbationKind::GaussianNoise,
            sigma,
        });
        let blur = self.blur.iter().map(|&sigma| PerturbationConfig {
            kind: PerturbationKind::GaussianBlur,
            sigma,
        });
        noise.chain(blur).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub encoder: EncoderConfig,
    pub perturbation: PerturbationConfig,
    pub dataset: DatasetConfig,
    /// Separate corpus for threshold calibration; the main dataset's
    /// calibration splits are used when absent.
    #[serde(default)]
    pub calibration: Option<DatasetConfig>,
    pub split: SplitFractions,
    #[serde(default)]
    pub forced_choice: ForcedChoiceConfig,
    #[serde(default)]
    pub repeat: RepeatConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub pca_source: PcaSource,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub metric: Metric,
    /// Unit-normalize embeddings before they reach memory or a query.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in std::iter::once(&mut self.dataset).chain(self.calibration.as_mut()) {
            if let DatasetConfig::Manifest { path } = d {
                fix(path);
            }
        }
        if let EncoderConfig::ExternalFile { clean, memory, .. } = &mut self.encoder {
            fix(clean);
            fix(memory);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema `{}`, expected `{CONFIG_SCHEMA}`",
                self.schema
            )));
        }
        let spec = self.perturbation_spec();
        if !spec.is_valid() {
            return Err(Error::Config(format!("invalid perturbation sigma {}", spec.sigma)));
        }
        self.split_spec().validate()?;
        if !(0.0..1.0).contains(&self.repeat.rate) {
            return Err(Error::Config(format!("repeat rate {} outside [0, 1)", self.repeat.rate)));
        }
        match &self.encoder {
            EncoderConfig::Downsample { grid, channels } if *grid == 0 || (*channels != 1 && *channels != 3) => {
                Err(Error::Config("downsample encoder needs grid >= 1 and 1 or 3 channels".into()))
            }
            EncoderConfig::RandomProjection { dim: 0, .. }
            | EncoderConfig::ExternalFile { dim: 0, .. }
            | EncoderConfig::ExternalStdio { dim: 0, .. } => Err(Error::Config("encoder dim must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn perturbation_spec(&self) -> PerturbationSpec {
        PerturbationSpec {
            kind: self.perturbation.kind,
            sigma: self.perturbation.sigma,
            seed: self.seeds.perturbation,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            memorize: self.split.memorize,
            novel: self.split.novel,
            calibration_seen: self.split.calibration_seen,
            calibration_novel: self.split.calibration_novel,
            seed: self.seeds.split,
        }
    }

    /// A desk-scale synthetic configuration, handy as a starting point.
    pub fn synthetic_example() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            encoder: EncoderConfig::Downsample { grid: 8, channels: 3 },
            perturbation: PerturbationConfig {
                kind: PerturbationKind::GaussianNoise,
                sigma: 20.0,
            },
            dataset: DatasetConfig::Synthetic {
                natural: 1000,
                texture: 1000,
                size: 64,
                seed: 0,
            },
            calibration: None,
            split: SplitFractions {
                memorize: 0.5,
                novel: 0.5,
                calibration_seen: 0.0,
                calibration_novel: 0.0,
            },
            forced_choice: ForcedChoiceConfig { pairs: Some(250) },
            repeat: RepeatConfig::default(),
            sweep: SweepConfig {
                noise: vec![0.0, 10.0, 20.0, 40.0],
                blur: vec![0.0, 1.0, 2.0, 4.0],
            },
            pca_source: PcaSource::Memory,
            seeds: Seeds {
                split: 1,
                perturbation: 2,
                stream: 3,
            },
            metric: Metric::L2,
            normalize: false,
            output: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_round_trips() {
        let c = ExperimentConfig::synthetic_example();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{
                "schema": "config_v1",
                "encoder": {"kind": "downsample", "grid": 8},
                "perturbation": {"kind": "gaussian_blur", "sigma": 2},
                "dataset": {"source": "manifest", "path": "m.jsonl"},
                "split": {"memorize": 0.5, "novel": 0.5}
            }"#,
        )
        .unwrap();
        assert_eq!(c.encoder, EncoderConfig::Downsample { grid: 8, channels: 3 });
        assert_eq!(c.repeat.rate, 0.125);
        assert_eq!(c.metric, Metric::L2);
        assert!(!c.normalize);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ExperimentConfig::synthetic_example();
        c.schema = "config_v0".into();
        assert!(ExperimentConfig::from_json(&c.to_json()).is_err());

        let mut c = ExperimentConfig::synthetic_example();
        c.split.memorize = 0.9;
        assert!(matches!(ExperimentConfig::from_json(&c.to_json()), Err(Error::Fraction(_))));

        let mut c = ExperimentConfig::synthetic_example();
        c.perturbation.sigma = -1.0;
        assert!(ExperimentConfig::from_json(&c.to_json()).is_err());

        let text = ExperimentConfig::synthetic_example().to_json().replacen('{', "{\"bogus\": 1,", 1);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
