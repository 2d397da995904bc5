use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{extract_failures, fit_pca, summarize_distances};
use crate::dataset::{load_manifest, split, synth_structured, synth_texture, Category, DatasetManifest, ManifestEntry, SplitSpec};
use crate::encoder::{
    load_embedding_file, write_embedding_file, DownsampleEncoder, Embedding, EmbeddingFile, Encoder,
    EncoderDescriptor, EncoderKind, RandomProjectionEncoder, StdioEncoder,
};
use crate::error::{Error, Result};
use crate::experiment::config::{DatasetConfig, EncoderConfig, ExperimentConfig, PcaSource};
use crate::experiment::report::{
    CalibrationSection, CategoryResult, ExperimentReport, ForcedChoiceSection, LagRow, PcaCategoryExtent, PcaSection,
    RepeatSection, SweepCell, Task, Timing, REPORT_SCHEMA,
};
use crate::experiment::svg::{self, Series};
use crate::perturb::{perturb, PerturbationSpec};
use crate::raster::ImageBuffer;
use crate::store::MemoryStore;
use crate::tasks::{
    forced_choice_embeddings, lag_homogeneity, make_repeat_stream, repeat_detection_embeddings, ForcedChoiceOutcome,
    ThresholdCalibration,
};

/// One dataset entry. `image` is absent when embeddings come from files and
/// the manifest's images were not loaded.
#[derive(Debug, Clone)]
pub struct Item {
    pub id: String,
    pub category: Category,
    pub image: Option<ImageBuffer>,
}

impl Item {
    fn image(&self) -> Result<&ImageBuffer> {
        self.image
            .as_ref()
            .ok_or_else(|| Error::Config(format!("no image loaded for `{}`", self.id)))
    }
}

pub fn load_items(dataset: &DatasetConfig, with_images: bool) -> Result<Vec<Item>> {
    match dataset {
        DatasetConfig::Synthetic {
            natural,
            texture,
            size,
            seed,
        } => {
            if *size == 0 {
                return Err(Error::Config("synthetic image size must be positive".into()));
            }
            let mut samples = synth_structured(*natural, *size, *seed);
            samples.extend(synth_texture(*texture, *size, *seed));
            Ok(samples
                .into_iter()
                .map(|s| Item {
                    id: s.id,
                    category: s.category,
                    image: Some(s.image),
                })
                .collect())
        }
        DatasetConfig::Manifest { path } => {
            let manifest = load_manifest(path)?;
            if !with_images {
                return Ok(manifest
                    .entries
                    .into_iter()
                    .map(|e| Item {
                        id: e.id,
                        category: e.category,
                        image: None,
                    })
                    .collect());
            }
            Ok(manifest
                .load_samples()?
                .into_iter()
                .map(|s| Item {
                    id: s.id,
                    category: s.category,
                    image: Some(s.image),
                })
                .collect())
        }
    }
}

/// Turns items into embeddings, either by encoding images or by looking ids
/// up in precomputed EMB1 files.
pub enum Embedder {
    Builtin(Box<dyn Encoder>),
    Stdio(StdioEncoder),
    Files {
        descriptor: EncoderDescriptor,
        clean: HashMap<String, Embedding>,
        memory: HashMap<String, Embedding>,
    },
}

impl Embedder {
    pub fn from_config(config: &EncoderConfig) -> Result<Self> {
        Ok(match config {
            EncoderConfig::Downsample { grid, channels } => Embedder::Builtin(Box::new(DownsampleEncoder::new(*grid, *channels))),
            EncoderConfig::RandomProjection { dim, seed } => {
                Embedder::Builtin(Box::new(RandomProjectionEncoder::new(*dim, *seed)))
            }
            EncoderConfig::ExternalStdio { name, dim, command } => Embedder::Stdio(StdioEncoder::spawn(name, *dim, command)?),
            EncoderConfig::ExternalFile {
                name,
                dim,
                clean,
                memory,
            } => Embedder::Files {
                descriptor: EncoderDescriptor {
                    name: name.clone(),
                    dim: *dim,
                    kind: EncoderKind::ExternalFile,
                },
                clean: load_embedding_file(clean, Some(*dim))?.to_map(),
                memory: load_embedding_file(memory, Some(*dim))?.to_map(),
            },
        })
    }

    pub fn descriptor(&self) -> EncoderDescriptor {
        match self {
            Embedder::Builtin(e) => e.descriptor(),
            Embedder::Stdio(e) => e.descriptor(),
            Embedder::Files { descriptor, .. } => descriptor.clone(),
        }
    }

    pub fn needs_images(&self) -> bool {
        !matches!(self, Embedder::Files { .. })
    }

    /// Unperturbed encodings, used for every query.
    pub fn clean(&self, items: &[&Item]) -> Result<Vec<Embedding>> {
        match self {
            Embedder::Builtin(e) => items.par_iter().map(|it| e.encode(it.image()?)).collect(),
            Embedder::Stdio(e) => {
                let images = items.iter().map(|it| it.image()).collect::<Result<Vec<_>>>()?;
                e.encode_batch(&images)
            }
            Embedder::Files { clean, .. } => lookup(clean, items),
        }
    }

    /// Encodings of the perturbed images, as stored in memory.
    pub fn memory(&self, items: &[&Item], spec: &PerturbationSpec) -> Result<Vec<Embedding>> {
        match self {
            Embedder::Builtin(e) => items
                .par_iter()
                .map(|it| e.encode(&perturb(it.image()?, &spec.for_image(&it.id))))
                .collect(),
            Embedder::Stdio(e) => {
                let perturbed = items
                    .par_iter()
                    .map(|it| Ok(perturb(it.image()?, &spec.for_image(&it.id))))
                    .collect::<Result<Vec<_>>>()?;
                e.encode_batch(&perturbed.iter().collect::<Vec<_>>())
            }
            Embedder::Files { memory, .. } => lookup(memory, items),
        }
    }
}

fn lookup(map: &HashMap<String, Embedding>, items: &[&Item]) -> Result<Vec<Embedding>> {
    items
        .iter()
        .map(|it| map.get(&it.id).cloned().ok_or_else(|| Error::MissingEmbedding(it.id.clone())))
        .collect()
}

fn categories(items: &[Item]) -> Vec<Category> {
    items.iter().map(|it| it.category).collect::<BTreeSet<_>>().into_iter().collect()
}

fn of_category(items: &[Item], category: Category) -> Vec<&Item> {
    items.iter().filter(|it| it.category == category).collect()
}

/// File-system friendly form of an id.
fn file_stem(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    format!("{index:06}-{clean}")
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TrialRow<'a> {
    trial: usize,
    seen_id: &'a str,
    novel_id: &'a str,
    d_seen: f64,
    d_novel: f64,
    correct: bool,
    tie: bool,
}

#[derive(Serialize)]
struct EventRow<'a> {
    position: usize,
    id: &'a str,
    is_repeat: bool,
    lag: Option<usize>,
    d_nn: Option<f64>,
    nn_id: Option<&'a str>,
    fired: bool,
}

#[derive(Serialize)]
struct SweepRow {
    kind: String,
    sigma: f64,
    category: Category,
    accuracy: String,
}

#[derive(Serialize)]
struct PcaRow<'a> {
    id: &'a str,
    category: Category,
    x: f64,
    y: f64,
}

struct ForcedChoiceRun {
    memorized: usize,
    outcome: ForcedChoiceOutcome,
}

struct CalibrationRun {
    threshold: ThresholdCalibration,
    seen: Vec<f64>,
    novel: Vec<f64>,
}

/// Executes experiment tasks for one configuration. All output lands in the
/// output directory; every task returns the report it wrote.
pub struct Runner {
    config: ExperimentConfig,
    out: PathBuf,
    pool: rayon::ThreadPool,
    embedder: Embedder,
}

impl Runner {
    /// `out` overrides the configured output directory; `jobs` bounds worker
    /// threads (all cores when `None`).
    pub fn new(config: ExperimentConfig, out: Option<PathBuf>, jobs: Option<usize>) -> Result<Self> {
        config.validate()?;
        let out = out
            .or_else(|| config.output.clone())
            .ok_or_else(|| Error::Config("no output directory given".into()))?;
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let embedder = Embedder::from_config(&config.encoder)?;
        Ok(Self {
            config,
            out,
            pool,
            embedder,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    fn items(&self) -> Result<Vec<Item>> {
        load_items(&self.config.dataset, self.embedder.needs_images())
    }

    fn finish(&self, embeddings: Vec<Embedding>) -> Vec<Embedding> {
        if self.config.normalize {
            embeddings.iter().map(Embedding::normalized).collect()
        } else {
            embeddings
        }
    }

    fn clean(&self, items: &[&Item]) -> Result<Vec<Embedding>> {
        Ok(self.finish(self.embedder.clean(items)?))
    }

    fn memory(&self, items: &[&Item], spec: &PerturbationSpec) -> Result<Vec<Embedding>> {
        Ok(self.finish(self.embedder.memory(items, spec)?))
    }

    fn store(&self, items: &[&Item], spec: &PerturbationSpec) -> Result<MemoryStore> {
        let records = items.iter().map(|it| it.id.clone()).zip(self.memory(items, spec)?).collect();
        MemoryStore::build_with_metric(self.embedder.descriptor().dim, self.config.metric, records)
    }

    fn report(&self, task: Task, started: Instant) -> ExperimentReport {
        let mut config = self.config.clone();
        config.output = None;
        ExperimentReport {
            schema: REPORT_SCHEMA.into(),
            task,
            seeds: self.config.seeds,
            config,
            encoder: self.embedder.descriptor(),
            results: Vec::new(),
            sweep: None,
            pca: None,
            artifacts: Vec::new(),
            timing: Timing {
                elapsed_seconds: started.elapsed().as_secs_f64(),
            },
        }
    }

    fn finalize(&self, mut report: ExperimentReport, started: Instant) -> Result<ExperimentReport> {
        report.timing.elapsed_seconds = started.elapsed().as_secs_f64();
        report.artifacts.push(report.file_name());
        report.write(&self.out)?;
        Ok(report)
    }

    /// Writes every dataset image as PNG plus a manifest, so external
    /// encoders can consume the exact corpus of a run.
    pub fn ingest(&self) -> Result<ExperimentReport> {
        self.pool.install(|| {
            let started = Instant::now();
            let items = load_items(&self.config.dataset, true)?;
            let mut report = self.report(Task::Ingest, started);
            report.artifacts = self.write_images(&items, "images", None)?;
            report.results = categories(&items)
                .into_iter()
                .map(|c| CategoryResult::new(c, of_category(&items, c).len()))
                .collect();
            self.finalize(report, started)
        })
    }

    /// Writes the memory-time perturbed version of every dataset image.
    pub fn perturb(&self) -> Result<ExperimentReport> {
        self.pool.install(|| {
            let started = Instant::now();
            let items = load_items(&self.config.dataset, true)?;
            let mut report = self.report(Task::Perturb, started);
            report.artifacts = self.write_images(&items, "perturbed", Some(&self.config.perturbation_spec()))?;
            report.results = categories(&items)
                .into_iter()
                .map(|c| CategoryResult::new(c, of_category(&items, c).len()))
                .collect();
            self.finalize(report, started)
        })
    }

    fn write_images(&self, items: &[Item], dir: &str, spec: Option<&PerturbationSpec>) -> Result<Vec<String>> {
        let root = self.out.join(dir);
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let entries = items
            .par_iter()
            .enumerate()
            .map(|(i, it)| {
                let name = format!("{}.png", file_stem(i, &it.id));
                let img = it.image()?;
                match spec {
                    Some(spec) => perturb(img, &spec.for_image(&it.id)).save(&root.join(&name))?,
                    None => img.save(&root.join(&name))?,
                }
                Ok(ManifestEntry {
                    id: it.id.clone(),
                    path: PathBuf::from(name),
                    category: it.category,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = DatasetManifest { entries };
        write_text(&root.join("manifest.jsonl"), &manifest.to_jsonl())?;
        Ok(vec![format!("{dir}/manifest.jsonl")])
    }

    /// Memorizes the memorize split of each category and writes the stored
    /// vectors as EMB1.
    pub fn memorize(&self) -> Result<ExperimentReport> {
        self.pool.install(|| {
            let started = Instant::now();
            let items = self.items()?;
            let spec = self.config.perturbation_spec();
            let mut report = self.report(Task::Memorize, started);
            for category in categories(&items) {
                let pool = of_category(&items, category);
                let parts = split(&pool, &self.config.split_spec())?;
                let store = self.store(&parts.memorize, &spec)?;
                let file = EmbeddingFile {
                    dim: store.dim(),
                    records: parts
                        .memorize
                        .iter()
                        .map(|it| (it.id.clone(), store.get(&it.id).expect("just stored").clone()))
                        .collect(),
                };
                let name = format!("memory_{category}.emb1");
                write_embedding_file(&self.out.join(&name), &file)?;
                let mut result = CategoryResult::new(category, pool.len());
                result.memorized = Some(store.len());
                result.memory_file = Some(name.clone());
                report.results.push(result);
                report.artifacts.push(name);
            }
            self.finalize(report, started)
        })
    }

    fn calibration_run(&self, category: Category, main_memorized: &[&Item], seen: &[&Item], novel: &[&Item]) -> Result<CalibrationRun> {
        let spec = self.config.perturbation_spec();
        let external = match &self.config.calibration {
            Some(dataset) => load_items(dataset, self.embedder.needs_images())?,
            None => Vec::new(),
        };
        let (store, seen, novel) = match &self.config.calibration {
            None => (self.store(main_memorized, &spec)?, seen.to_vec(), novel.to_vec()),
            Some(_) => {
                let pool = of_category(&external, category);
                let halves = split(
                    &pool,
                    &SplitSpec {
                        memorize: 0.5,
                        novel: 0.5,
                        calibration_seen: 0.0,
                        calibration_novel: 0.0,
                        seed: self.config.seeds.split,
                    },
                )?;
                (self.store(&halves.memorize, &spec)?, halves.memorize, halves.novel)
            }
        };
        if seen.is_empty() || novel.is_empty() {
            return Err(Error::EmptyCalibrationSet);
        }
        let distances = |items: &[&Item]| -> Result<Vec<f64>> {
            self.clean(items)?
                .par_iter()
                .map(|e| store.nearest(e).map(|r| r.distance))
                .collect()
        };
        let seen = distances(&seen)?;
        let novel = distances(&novel)?;
        Ok(CalibrationRun {
            threshold: ThresholdCalibration::from_distances(&seen, &novel)?,
            seen,
            novel,
        })
    }

    fn calibration_section(run: &CalibrationRun) -> Result<CalibrationSection> {
        Ok(CalibrationSection {
            threshold: run.threshold,
            seen: run.seen.len(),
            novel: run.novel.len(),
            seen_distances: summarize_distances(&run.seen)?,
            novel_distances: summarize_distances(&run.novel)?,
        })
    }

    /// Threshold calibration only; a degenerate threshold is reported, not
    /// rejected.
    pub fn calibrate(&self) -> Result<ExperimentReport> {
        self.pool.install(|| {
            let started = Instant::now();
            let items = self.items()?;
            let mut report = self.report(Task::Calibrate, started);
            for category in categories(&items) {
                let pool = of_category(&items, category);
                let parts = split(&pool, &self.config.split_spec())?;
                let run = self.calibration_run(category, &parts.memorize, &parts.calibration_seen, &parts.calibration_novel)?;
                let mut result = CategoryResult::new(category, pool.len());
                result.calibration = Some(Self::calibration_section(&run)?);
                report.results.push(result);
            }
            self.finalize(report, started)
        })
    }

    fn forced_choice_run(&self, pool: &[&Item], spec: &PerturbationSpec) -> Result<ForcedChoiceRun> {
        let parts = split(pool, &self.config.split_spec())?;
        let available = parts.memorize.len().min(parts.novel.len());
        let pairs = self.config.forced_choice.pairs.unwrap_or(available);
        if pairs > available {
            return Err(Error::Config(format!(
                "{pairs} pairs requested but only {} memorized and {} novel images available",
                parts.memorize.len(),
                parts.novel.len()
            )));
        }
        if pairs == 0 {
            return Err(Error::EmptyPairs);
        }
        let store = self.store(&parts.memorize, spec)?;
        let seen = &parts.memorize[..pairs];
        let novel = &parts.novel[..pairs];
        let seen_e = self.clean(seen)?;
        let novel_e = self.clean(novel)?;
        let pairs: Vec<_> = (0..pairs)
            .map(|i| ((seen[i].id.as_str(), &seen_e[i]), (novel[i].id.as_str(), &novel_e[i])))
            .collect();
        Ok(ForcedChoiceRun {
            memorized: store.len(),
            outcome: forced_choice_embeddings(&store, &pairs)?,
        })
    }

    /// Forced choice between a memorized and a novel image, per category.
    pub fn forced_choice(&self) -> Result<ExperimentReport> {
        self.pool.install(|| {
            let started = Instant::now();
            let items = self.items()?;
            let spec = self.config.perturbation_spec();
            let mut report = self.report(Task::ForcedChoice, started);
            for category in categories(&items) {
                let pool = of_category(&items, category);
                let run = self.forced_choice_run(&pool, &spec)?;
                let trials = &run.outcome.trials;

                let trials_csv = format!("forced_choice_{category}_trials.csv");
                write_csv(
                    &self.out.join(&trials_csv),
                    trials.iter().enumerate().map(|(i, t)| TrialRow {
                        trial: i,
                        seen_id: &t.seen_id,
                        novel_id: &t.novel_id,
                        d_seen: t.d_seen,
                        d_novel: t.d_novel,
                        correct: t.correct,
                        tie: t.tie,
                    }),
                )?;
                let failures = extract_failures(trials);
                let failures_csv = format!("forced_choice_{category}_failures.csv");
                write_csv(&self.out.join(&failures_csv), &failures)?;

                let d_seen: Vec<f64> = trials.iter().map(|t| t.d_seen).collect();
                let d_novel: Vec<f64> = trials.iter().map(|t| t.d_novel).collect();
                let mut result = CategoryResult::new(category, pool.len());
                result.memorized = Some(run.memorized);
                result.forced_choice = Some(ForcedChoiceSection {
                    pairs: trials.len(),
                    accuracy: run.outcome.accuracy,
                    correct: run.outcome.correct,
                    ties: run.outcome.ties,
                    seen_distances: summarize_distances(&d_seen)?,
                    novel_distances: summarize_distances(&d_novel)?,
                    failures,
                    trials_csv: trials_csv.clone(),
                });
                report.results.push(result);
                report.artifacts.push(trials_csv);
                report.artifacts.push(failures_csv);
            }
            self.finalize(report, started)
        })
    }

    /// Calibrates the alarm threshold, then streams the novel split through
    /// an initially empty memory, per category.
    pub fn repeat_detection(&self) -> Result<ExperimentReport> {
        self.pool.install(|| {
            let started = Instant::now();
            let items = self.items()?;
            let spec = self.config.perturbation_spec();
            let mut report = self.report(Task::RepeatDetection, started);
            for category in categories(&items) {
                let pool = of_category(&items, category);
                let parts = split(&pool, &self.config.split_spec())?;
                let calibration =
                    self.calibration_run(category, &parts.memorize, &parts.calibration_seen, &parts.calibration_novel)?;
                let delta = calibration.threshold.require_usable()?.delta;

                let ids: Vec<&str> = parts.novel.iter().map(|it| it.id.as_str()).collect();
                let length = self.config.repeat.length.unwrap_or(ids.len());
                let stream = make_repeat_stream(&ids, length, self.config.repeat.rate, self.config.seeds.stream)?;
                let used: BTreeSet<&str> = stream.events.iter().map(|e| e.id.as_str()).collect();
                let used: Vec<&Item> = parts.novel.iter().copied().filter(|it| used.contains(it.id.as_str())).collect();
                let ids_of = |es: Vec<Embedding>| -> HashMap<String, Embedding> {
                    used.iter().map(|it| it.id.clone()).zip(es).collect()
                };
                let clean = ids_of(self.clean(&used)?);
                let memory = ids_of(self.memory(&used, &spec)?);
                let metrics = repeat_detection_embeddings(
                    &stream,
                    &clean,
                    &memory,
                    self.embedder.descriptor().dim,
                    self.config.metric,
                    delta,
                )?;

                let events_csv = format!("repeat_detection_{category}_events.csv");
                write_csv(
                    &self.out.join(&events_csv),
                    metrics.alarms.iter().map(|a| EventRow {
                        position: a.position,
                        id: &a.id,
                        is_repeat: a.is_repeat,
                        lag: a.lag,
                        d_nn: a.d_nn,
                        nn_id: a.nn_id.as_deref(),
                        fired: a.fired,
                    }),
                )?;
                let mut result = CategoryResult::new(category, pool.len());
                result.calibration = Some(Self::calibration_section(&calibration)?);
                result.repeat_detection = Some(RepeatSection {
                    stream_length: stream.len(),
                    repeat_rate: stream.repeat_rate,
                    delta,
                    repeats: metrics.repeats,
                    hits: metrics.hits,
                    non_repeats: metrics.non_repeats,
                    false_alarms: metrics.false_alarms,
                    hit_rate: metrics.hit_rate,
                    false_alarm_rate: metrics.false_alarm_rate,
                    per_lag: metrics
                        .per_lag
                        .iter()
                        .map(|b| LagRow {
                            bucket: b.bucket.clone(),
                            repeats: b.repeats,
                            hits: b.hits,
                            hit_rate: b.hit_rate,
                        })
                        .collect(),
                    lag_homogeneity: lag_homogeneity(&metrics),
                    events_csv: events_csv.clone(),
                });
                report.results.push(result);
                report.artifacts.push(events_csv);
            }
            self.finalize(report, started)
        })
    }

    /// Forced choice at every grid point and category. Cells run in parallel;
    /// a failing cell is recorded with its error and the sweep continues.
    pub fn sweep(&self) -> Result<ExperimentReport> {
        let points = self.config.sweep.points();
        if points.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if !self.embedder.needs_images() {
            return Err(Error::Config("a sweep re-perturbs images and cannot use precomputed embeddings".into()));
        }
        self.pool.install(|| {
            let started = Instant::now();
            let items = self.items()?;
            let cats = categories(&items);
            let cells: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..cats.len()).map(move |c| (p, c))).collect();
            let results: Vec<SweepCell> = cells
                .par_iter()
                .enumerate()
                .map(|(index, &(p, c))| {
                    let point = points[p];
                    let spec = PerturbationSpec {
                        kind: point.kind,
                        sigma: point.sigma,
                        seed: self.config.seeds.perturbation,
                    };
                    let run = if spec.is_valid() {
                        self.forced_choice_run(&of_category(&items, cats[c]), &spec)
                    } else {
                        Err(Error::Config(format!("invalid sigma {}", point.sigma)))
                    };
                    let (accuracy, error) = match run {
                        Ok(run) => (Some(run.outcome.accuracy), None),
                        Err(e) => (None, Some(format!("{}: {e}", e.kind()))),
                    };
                    SweepCell {
                        index,
                        kind: point.kind,
                        sigma: point.sigma,
                        category: cats[c],
                        accuracy,
                        error,
                    }
                })
                .collect();

            write_csv(
                &self.out.join("sweep.csv"),
                results.iter().map(|cell| SweepRow {
                    kind: cell.kind.to_string(),
                    sigma: cell.sigma,
                    category: cell.category,
                    accuracy: cell.accuracy.map_or_else(|| "failed".into(), |a| a.to_string()),
                }),
            )?;
            let mut series: Vec<Series> = Vec::new();
            for cell in results.iter().filter(|c| c.accuracy.is_some()) {
                let label = format!("{}/{}", cell.kind, cell.category);
                let point = (cell.sigma, cell.accuracy.expect("filtered"));
                match series.iter_mut().find(|s| s.label == label) {
                    Some(s) => s.points.push(point),
                    None => series.push(Series {
                        label,
                        points: vec![point],
                    }),
                }
            }
            write_text(
                &self.out.join("sweep.svg"),
                &svg::line_chart("Forced-choice accuracy", "sigma", "accuracy", &series),
            )?;

            let mut report = self.report(Task::Sweep, started);
            report.sweep = Some(results);
            report.artifacts = vec!["sweep.csv".into(), "sweep.svg".into()];
            self.finalize(report, started)
        })
    }

    /// 2-D PCA of the memorized vectors of all categories together.
    pub fn pca(&self) -> Result<ExperimentReport> {
        self.pool.install(|| {
            let started = Instant::now();
            let items = self.items()?;
            let spec = self.config.perturbation_spec();
            let mut memorized: Vec<&Item> = Vec::new();
            let mut report = self.report(Task::Pca, started);
            for category in categories(&items) {
                let pool = of_category(&items, category);
                let parts = split(&pool, &self.config.split_spec())?;
                let mut result = CategoryResult::new(category, pool.len());
                result.memorized = Some(parts.memorize.len());
                report.results.push(result);
                memorized.extend(parts.memorize);
            }
            let embeddings = match self.config.pca_source {
                PcaSource::Memory => self.memory(&memorized, &spec)?,
                PcaSource::Clean => self.clean(&memorized)?,
            };
            let pca = fit_pca(&embeddings, 2)?;
            let points = embeddings.iter().map(|e| pca.project(e)).collect::<Result<Vec<_>>>()?;

            write_csv(
                &self.out.join("pca.csv"),
                memorized.iter().zip(&points).map(|(it, p)| PcaRow {
                    id: &it.id,
                    category: it.category,
                    x: p[0],
                    y: p[1],
                }),
            )?;
            let mut extents = Vec::new();
            let mut series = Vec::new();
            for result in &report.results {
                let pts: Vec<(f64, f64)> = memorized
                    .iter()
                    .zip(&points)
                    .filter(|(it, _)| it.category == result.category)
                    .map(|(_, p)| (p[0], p[1]))
                    .collect();
                if let Some(extent) = bounding_box(result.category, &pts) {
                    extents.push(extent);
                }
                series.push(Series {
                    label: result.category.to_string(),
                    points: pts,
                });
            }
            write_text(&self.out.join("pca.svg"), &svg::scatter("PCA of memory encodings", "PC1", "PC2", &series))?;

            report.pca = Some(PcaSection {
                fit_on: match self.config.pca_source {
                    PcaSource::Memory => "memory".into(),
                    PcaSource::Clean => "clean".into(),
                },
                points: points.len(),
                explained_variance: pca.explained_variance.clone(),
                categories: extents,
                csv: "pca.csv".into(),
                svg: "pca.svg".into(),
            });
            report.artifacts = vec!["pca.csv".into(), "pca.svg".into()];
            self.finalize(report, started)
        })
    }
}

fn bounding_box(category: Category, pts: &[(f64, f64)]) -> Option<PcaCategoryExtent> {
    let first = pts.first()?;
    let (mut min, mut max) = ([first.0, first.1], [first.0, first.1]);
    for &(x, y) in pts {
        min = [min[0].min(x), min[1].min(y)];
        max = [max[0].max(x), max[1].max(y)];
    }
    Some(PcaCategoryExtent {
        category,
        points: pts.len(),
        min,
        max,
        area: (max[0] - min[0]) * (max[1] - min[1]),
    })
}

pub fn run_forced_choice(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Runner::new(config.clone(), None, None)?.forced_choice()
}

pub fn run_repeat_detection(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Runner::new(config.clone(), None, None)?.repeat_detection()
}

pub fn run_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Runner::new(config.clone(), None, None)?.sweep()
}

pub fn run_pca(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Runner::new(config.clone(), None, None)?.pca()
}
