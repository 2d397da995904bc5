//! Memorization and the two recall protocols: forced choice between a seen
//! and a novel image, and streaming repeat detection against a calibrated
//! distance threshold.
//!
//! Recall never perturbs: the query path takes no [`PerturbationSpec`].
//! Memorization draws one perturbation per image id, so an image memorized
//! twice gets the same stored vector both times.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::Sample;
use crate::encoder::{Embedding, Encoder};
use crate::error::{Error, Result};
use crate::perturb::{perturb, PerturbationSpec};
use crate::raster::ImageBuffer;
use crate::store::{Metric, MemoryStore, NearestNeighborResult};

/// Embedding stored for `img` when memorized under `spec`.
pub fn memory_embedding(
    id: &str,
    img: &ImageBuffer,
    encoder: &dyn Encoder,
    spec: &PerturbationSpec,
) -> Result<Embedding> {
    encoder.encode(&perturb(img, &spec.for_image(id)))
}

/// Perturbs, encodes and stores every image. Encoding runs in parallel; the
/// store is built in input order, so the result does not depend on threads.
pub fn memorize(
    images: &[Sample],
    encoder: &dyn Encoder,
    spec: &PerturbationSpec,
    metric: Metric,
) -> Result<MemoryStore> {
    let records = images
        .par_iter()
        .map(|s| Ok((s.id.clone(), memory_embedding(&s.id, &s.image, encoder, spec)?)))
        .collect::<Result<Vec<_>>>()?;
    MemoryStore::build_with_metric(encoder.descriptor().dim, metric, records)
}

pub fn recall_distance(
    store: &MemoryStore,
    img: &ImageBuffer,
    encoder: &dyn Encoder,
) -> Result<NearestNeighborResult> {
    store.nearest(&encoder.encode(img)?)
}

fn recall_all(store: &MemoryStore, samples: &[&Sample], encoder: &dyn Encoder) -> Result<Vec<NearestNeighborResult>> {
    samples
        .par_iter()
        .map(|s| recall_distance(store, &s.image, encoder))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub mean_seen: f64,
    pub mean_novel: f64,
    pub delta: f64,
    /// Set when `mean_seen >= mean_novel`; such a threshold cannot separate.
    pub degenerate: bool,
}

impl ThresholdCalibration {
    pub fn from_means(mean_seen: f64, mean_novel: f64) -> Self {
        Self {
            mean_seen,
            mean_novel,
            delta: (mean_seen + mean_novel) / 2.0,
            degenerate: mean_seen >= mean_novel,
        }
    }

    pub fn from_distances(seen: &[f64], novel: &[f64]) -> Result<Self> {
        if seen.is_empty() || novel.is_empty() {
            return Err(Error::EmptyCalibrationSet);
        }
        let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
        Ok(Self::from_means(mean(seen), mean(novel)))
    }

    pub fn require_usable(self) -> Result<Self> {
        if self.degenerate {
            Err(Error::DegenerateCalibration {
                mean_seen: self.mean_seen,
                mean_novel: self.mean_novel,
            })
        } else {
            Ok(self)
        }
    }
}

/// `seen_cal` must already be in `store`; `novel_cal` must not.
pub fn calibrate_threshold(
    store: &MemoryStore,
    seen_cal: &[Sample],
    novel_cal: &[Sample],
    encoder: &dyn Encoder,
) -> Result<ThresholdCalibration> {
    if seen_cal.is_empty() || novel_cal.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let seen: Vec<&Sample> = seen_cal.iter().collect();
    let novel: Vec<&Sample> = novel_cal.iter().collect();
    let ds: Vec<f64> = recall_all(store, &seen, encoder)?.into_iter().map(|r| r.distance).collect();
    let dn: Vec<f64> = recall_all(store, &novel, encoder)?.into_iter().map(|r| r.distance).collect();
    ThresholdCalibration::from_distances(&ds, &dn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedChoiceTrial {
    pub seen_id: String,
    pub novel_id: String,
    pub d_seen: f64,
    pub d_novel: f64,
    pub seen_nn_id: String,
    pub novel_nn_id: String,
    pub correct: bool,
    pub tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    First,
    Second,
    Tie,
}

/// The image with the smaller memory distance is judged seen.
pub fn choose(d_first: f64, d_second: f64) -> Choice {
    if d_first < d_second {
        Choice::First
    } else if d_second < d_first {
        Choice::Second
    } else {
        Choice::Tie
    }
}

impl ForcedChoiceTrial {
    pub fn score(seen_id: &str, novel_id: &str, seen: NearestNeighborResult, novel: NearestNeighborResult) -> Self {
        let choice = choose(seen.distance, novel.distance);
        Self {
            seen_id: seen_id.to_owned(),
            novel_id: novel_id.to_owned(),
            d_seen: seen.distance,
            d_novel: novel.distance,
            seen_nn_id: seen.id,
            novel_nn_id: novel.id,
            correct: choice == Choice::First,
            tie: choice == Choice::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedChoiceOutcome {
    pub accuracy: f64,
    pub correct: usize,
    pub ties: usize,
    pub trials: Vec<ForcedChoiceTrial>,
}

impl ForcedChoiceOutcome {
    pub fn from_trials(trials: Vec<ForcedChoiceTrial>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::EmptyPairs);
        }
        let correct = trials.iter().filter(|t| t.correct).count();
        let ties = trials.iter().filter(|t| t.tie).count();
        Ok(Self {
            accuracy: correct as f64 / trials.len() as f64,
            correct,
            ties,
            trials,
        })
    }
}

/// Runs one trial per `(seen, novel)` pair. Trials are evaluated in parallel
/// and reported in pair order.
pub fn forced_choice(
    store: &MemoryStore,
    pairs: &[(&Sample, &Sample)],
    encoder: &dyn Encoder,
) -> Result<ForcedChoiceOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    if store.is_empty() {
        return Err(Error::NoRecords);
    }
    let trials = pairs
        .par_iter()
        .map(|(seen, novel)| {
            Ok(ForcedChoiceTrial::score(
                &seen.id,
                &novel.id,
                recall_distance(store, &seen.image, encoder)?,
                recall_distance(store, &novel.image, encoder)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    ForcedChoiceOutcome::from_trials(trials)
}

/// An id with its clean embedding.
pub type Labeled<'a> = (&'a str, &'a Embedding);

/// Forced choice over precomputed clean embeddings: one trial per
/// `(seen, novel)` pair.
pub fn forced_choice_embeddings(
    store: &MemoryStore,
    pairs: &[(Labeled<'_>, Labeled<'_>)],
) -> Result<ForcedChoiceOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    if store.is_empty() {
        return Err(Error::NoRecords);
    }
    let trials = pairs
        .par_iter()
        .map(|((seen_id, seen), (novel_id, novel))| {
            Ok(ForcedChoiceTrial::score(seen_id, novel_id, store.nearest(seen)?, store.nearest(novel)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ForcedChoiceOutcome::from_trials(trials)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub id: String,
    pub is_repeat: bool,
    /// Items shown between the first exposure and this repeat.
    pub lag: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatStream {
    pub events: Vec<StreamEvent>,
    pub repeat_rate: f64,
}

impl RepeatStream {
    /// Derives repeat flags and lags from a sequence of ids. An id may occur
    /// at most twice.
    pub fn from_sequence<S: AsRef<str>>(ids: &[S], repeat_rate: f64) -> Result<Self> {
        let mut first_seen: HashMap<&str, usize> = HashMap::new();
        let mut repeated: HashSet<&str> = HashSet::new();
        let mut events = Vec::with_capacity(ids.len());
        for (pos, id) in ids.iter().enumerate() {
            let id = id.as_ref();
            match first_seen.get(id) {
                None => {
                    first_seen.insert(id, pos);
                    events.push(StreamEvent {
                        id: id.to_owned(),
                        is_repeat: false,
                        lag: None,
                    });
                }
                Some(&first) => {
                    if !repeated.insert(id) {
                        return Err(Error::Config(format!("id `{id}` repeated more than once")));
                    }
                    events.push(StreamEvent {
                        id: id.to_owned(),
                        is_repeat: true,
                        lag: Some(pos - first - 1),
                    });
                }
            }
        }
        Ok(Self { events, repeat_rate })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn repeats(&self) -> usize {
        self.events.iter().filter(|e| e.is_repeat).count()
    }
}

/// Builds a stream of `length` events. After the first position, each event
/// is with probability `repeat_rate` a repeat of a uniformly chosen earlier
/// item that has not been repeated yet; otherwise the next fresh id.
pub fn make_repeat_stream<S: AsRef<str>>(
    ids: &[S],
    length: usize,
    repeat_rate: f64,
    seed: u64,
) -> Result<RepeatStream> {
    if !(0.0..1.0).contains(&repeat_rate) {
        return Err(Error::Config(format!("repeat rate {repeat_rate} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fresh = ids.iter().map(AsRef::as_ref);
    let mut candidates: Vec<(&str, usize)> = Vec::new();
    let mut events = Vec::with_capacity(length);
    for pos in 0..length {
        let draw: f64 = rng.random();
        if pos > 0 && draw < repeat_rate && !candidates.is_empty() {
            let (id, first) = candidates.swap_remove(rng.random_range(0..candidates.len()));
            events.push(StreamEvent {
                id: id.to_owned(),
                is_repeat: true,
                lag: Some(pos - first - 1),
            });
        } else {
            let id = fresh.next().ok_or(Error::ExhaustedImages(pos))?;
            candidates.push((id, pos));
            events.push(StreamEvent {
                id: id.to_owned(),
                is_repeat: false,
                lag: None,
            });
        }
    }
    Ok(RepeatStream { events, repeat_rate })
}

pub const LAG_BUCKETS: [(&str, usize, usize); 5] = [
    ("0", 0, 0),
    ("1-10", 1, 10),
    ("11-100", 11, 100),
    ("101-1000", 101, 1000),
    (">1000", 1001, usize::MAX),
];

fn lag_bucket(lag: usize) -> usize {
    LAG_BUCKETS
        .iter()
        .position(|&(_, lo, hi)| (lo..=hi).contains(&lag))
        .expect("buckets cover every lag")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub position: usize,
    pub id: String,
    pub is_repeat: bool,
    pub lag: Option<usize>,
    /// `None` when memory was still empty.
    pub d_nn: Option<f64>,
    pub nn_id: Option<String>,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagBucketStats {
    pub bucket: String,
    pub repeats: usize,
    pub hits: usize,
    pub hit_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatDetectionMetrics {
    pub delta: f64,
    pub repeats: usize,
    pub hits: usize,
    pub non_repeats: usize,
    pub false_alarms: usize,
    /// `None` when the stream has no repeats.
    pub hit_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
    pub per_lag: Vec<LagBucketStats>,
    pub alarms: Vec<AlarmRecord>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl RepeatDetectionMetrics {
    /// Re-thresholds recorded distances at `delta`. An alarm fires iff
    /// `d_nn < delta`; an empty memory never fires.
    pub fn from_records(records: &[AlarmRecord], delta: f64) -> Self {
        let mut alarms = records.to_vec();
        let mut per_lag: Vec<LagBucketStats> = LAG_BUCKETS
            .iter()
            .map(|(label, ..)| LagBucketStats {
                bucket: (*label).to_owned(),
                repeats: 0,
                hits: 0,
                hit_rate: None,
            })
            .collect();
        let (mut repeats, mut hits, mut non_repeats, mut false_alarms) = (0, 0, 0, 0);
        for a in &mut alarms {
            a.fired = a.d_nn.is_some_and(|d| d < delta);
            if a.is_repeat {
                repeats += 1;
                let bucket = &mut per_lag[lag_bucket(a.lag.unwrap_or(0))];
                bucket.repeats += 1;
                if a.fired {
                    hits += 1;
                    bucket.hits += 1;
                }
            } else {
                non_repeats += 1;
                if a.fired {
                    false_alarms += 1;
                }
            }
        }
        for b in &mut per_lag {
            b.hit_rate = ratio(b.hits, b.repeats);
        }
        Self {
            delta,
            repeats,
            hits,
            non_repeats,
            false_alarms,
            hit_rate: ratio(hits, repeats),
            false_alarm_rate: ratio(false_alarms, non_repeats),
            per_lag,
            alarms,
        }
    }
}

/// Streams precomputed embeddings through an initially empty memory. For each
/// event the clean embedding is queried first, then the memory embedding is
/// stored under `"{id}@{position}"`.
pub fn repeat_detection_embeddings(
    stream: &RepeatStream,
    clean: &HashMap<String, Embedding>,
    memory: &HashMap<String, Embedding>,
    dim: usize,
    metric: Metric,
    delta: f64,
) -> Result<RepeatDetectionMetrics> {
    let mut store = MemoryStore::with_metric(dim, metric);
    let mut records = Vec::with_capacity(stream.len());
    let lookup = |map: &HashMap<String, Embedding>, id: &str| {
        map.get(id)
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding(id.to_owned()))
    };
    for (position, event) in stream.events.iter().enumerate() {
        let query = lookup(clean, &event.id)?;
        let nn = if store.is_empty() {
            if query.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: query.dim(),
                });
            }
            None
        } else {
            Some(store.nearest(&query)?)
        };
        records.push(AlarmRecord {
            position,
            id: event.id.clone(),
            is_repeat: event.is_repeat,
            lag: event.lag,
            d_nn: nn.as_ref().map(|r| r.distance),
            nn_id: nn.map(|r| r.id),
            fired: false,
        });
        store.insert(format!("{}@{position}", event.id), lookup(memory, &event.id)?)?;
    }
    Ok(RepeatDetectionMetrics::from_records(&records, delta))
}

pub fn repeat_detection(
    stream: &RepeatStream,
    images: &[Sample],
    encoder: &dyn Encoder,
    spec: &PerturbationSpec,
    metric: Metric,
    delta: f64,
) -> Result<RepeatDetectionMetrics> {
    let wanted: HashSet<&str> = stream.events.iter().map(|e| e.id.as_str()).collect();
    let used: Vec<&Sample> = images.iter().filter(|s| wanted.contains(s.id.as_str())).collect();
    let encoded = used
        .par_iter()
        .map(|s| {
            Ok((
                s.id.clone(),
                encoder.encode(&s.image)?,
                memory_embedding(&s.id, &s.image, encoder, spec)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut clean = HashMap::with_capacity(encoded.len());
    let mut memory = HashMap::with_capacity(encoded.len());
    for (id, c, m) in encoded {
        clean.insert(id.clone(), c);
        memory.insert(id, m);
    }
    repeat_detection_embeddings(stream, &clean, &memory, encoder.descriptor().dim, metric, delta)
}

/// Hit and false-alarm rates at each threshold, reusing recorded distances.
pub fn delta_sweep(metrics: &RepeatDetectionMetrics, deltas: &[f64]) -> Vec<(f64, Option<f64>, Option<f64>)> {
    deltas
        .iter()
        .map(|&d| {
            let m = RepeatDetectionMetrics::from_records(&metrics.alarms, d);
            (d, m.hit_rate, m.false_alarm_rate)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-square test of homogeneity of hit rates across the non-empty lag
/// buckets (2 x k contingency table of hits and misses).
pub fn lag_homogeneity(metrics: &RepeatDetectionMetrics) -> Option<ChiSquareTest> {
    let buckets: Vec<&LagBucketStats> = metrics.per_lag.iter().filter(|b| b.repeats > 0).collect();
    if buckets.len() < 2 {
        return None;
    }
    let total: usize = buckets.iter().map(|b| b.repeats).sum();
    let hits: usize = buckets.iter().map(|b| b.hits).sum();
    let dof = buckets.len() - 1;
    if hits == 0 || hits == total {
        return Some(ChiSquareTest {
            statistic: 0.0,
            dof,
            p_value: 1.0,
        });
    }
    let p_hit = hits as f64 / total as f64;
    let statistic: f64 = buckets
        .iter()
        .map(|b| {
            let n = b.repeats as f64;
            let (eh, em) = (n * p_hit, n * (1.0 - p_hit));
            let (oh, om) = (b.hits as f64, n - b.hits as f64);
            (oh - eh).powi(2) / eh + (om - em).powi(2) / em
        })
        .sum();
    let dist = ChiSquared::new(dof as f64).ok()?;
    Some(ChiSquareTest {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_structured, Category};
    use crate::encoder::DownsampleEncoder;

    fn nn(id: &str, d: f64) -> NearestNeighborResult {
        NearestNeighborResult {
            id: id.into(),
            distance: d,
        }
    }

    #[test]
    fn midpoint_threshold() {
        let c = ThresholdCalibration::from_distances(&[1.0, 3.0], &[5.0, 7.0]).unwrap();
        assert_eq!((c.mean_seen, c.mean_novel, c.delta), (2.0, 6.0, 4.0));
        assert!(!c.degenerate);
        assert!(ThresholdCalibration::from_means(3.0, 3.0).degenerate);
        assert!(ThresholdCalibration::from_means(3.0, 1.0).require_usable().is_err());
        assert!(matches!(
            ThresholdCalibration::from_distances(&[], &[1.0]),
            Err(Error::EmptyCalibrationSet)
        ));
    }

    #[test]
    fn choice_rule_and_ties() {
        assert_eq!(choose(0.5, 1.0), Choice::First);
        assert_eq!(choose(1.0, 0.5), Choice::Second);
        assert_eq!(choose(1.0, 1.0), Choice::Tie);
        let t = ForcedChoiceTrial::score("s", "n", nn("a", 2.0), nn("b", 2.0));
        assert!(!t.correct && t.tie);
        let t = ForcedChoiceTrial::score("s", "n", nn("a", 0.0), nn("b", 2.0));
        assert!(t.correct && !t.tie);
        assert!(matches!(ForcedChoiceOutcome::from_trials(vec![]), Err(Error::EmptyPairs)));
    }

    #[test]
    fn stream_from_sequence_lags() {
        let s = RepeatStream::from_sequence(&["a", "a"], 0.5).unwrap();
        assert_eq!(s.events[1].lag, Some(0));
        assert!(s.events[1].is_repeat);
        let s = RepeatStream::from_sequence(&["a", "b", "c", "a"], 0.5).unwrap();
        assert_eq!(s.events[3].lag, Some(2));
        assert!(RepeatStream::from_sequence(&["a", "a", "a"], 0.5).is_err());
    }

    #[test]
    fn zero_rate_stream_has_no_repeats() {
        let ids: Vec<String> = (0..50).map(|i| format!("i{i}")).collect();
        let s = make_repeat_stream(&ids, 50, 0.0, 3).unwrap();
        assert_eq!(s.repeats(), 0);
        assert!(s.events.iter().all(|e| e.lag.is_none()));
        assert!(matches!(make_repeat_stream(&ids, 51, 0.0, 3), Err(Error::ExhaustedImages(50))));
        assert!(make_repeat_stream(&ids, 10, 1.0, 3).is_err());
    }

    #[test]
    fn repeat_fraction_concentrates() {
        let ids: Vec<String> = (0..2500).map(|i| format!("i{i}")).collect();
        let s = make_repeat_stream(&ids, 2500, 0.125, 11).unwrap();
        let frac = s.repeats() as f64 / s.len() as f64;
        assert!((0.10..=0.15).contains(&frac), "{frac}");
        // Every repeat refers back to an earlier fresh event, at most once.
        let again = RepeatStream::from_sequence(&s.events.iter().map(|e| e.id.clone()).collect::<Vec<_>>(), 0.125).unwrap();
        assert_eq!(again.events, s.events);
        assert_eq!(s, make_repeat_stream(&ids, 2500, 0.125, 11).unwrap());
    }

    #[test]
    fn immediate_repeat_without_perturbation_fires() {
        let images = synth_structured(3, 32, 1);
        let enc = DownsampleEncoder::new(4, 3);
        let ids = [&images[0].id, &images[0].id, &images[1].id];
        let stream = RepeatStream::from_sequence(&ids, 0.125).unwrap();
        let m = repeat_detection(&stream, &images, &enc, &PerturbationSpec::NONE, Metric::L2, 1e-9).unwrap();
        assert_eq!(m.alarms[0].d_nn, None);
        assert!(!m.alarms[0].fired);
        assert_eq!(m.alarms[1].d_nn, Some(0.0));
        assert_eq!(m.hit_rate, Some(1.0));
        assert_eq!(m.false_alarm_rate, Some(0.0));
        assert_eq!(m.per_lag[0].hits, 1);
    }

    #[test]
    fn zero_rate_reports_undefined_hit_rate() {
        let images = synth_structured(5, 32, 2);
        let ids: Vec<&str> = images.iter().map(|s| s.id.as_str()).collect();
        let stream = RepeatStream::from_sequence(&ids, 0.0).unwrap();
        let enc = DownsampleEncoder::new(4, 3);
        let m = repeat_detection(&stream, &images, &enc, &PerturbationSpec::NONE, Metric::L2, 0.01).unwrap();
        assert_eq!(m.hit_rate, None);
        assert_eq!(m.false_alarm_rate, Some(0.0));
    }

    #[test]
    fn threshold_monotonicity() {
        let records: Vec<AlarmRecord> = (0..40)
            .map(|i| AlarmRecord {
                position: i,
                id: format!("x{i}"),
                is_repeat: i % 3 == 0,
                lag: (i % 3 == 0).then_some(i * 7),
                d_nn: (i > 0).then(|| ((i * 37) % 11) as f64 / 3.0),
                nn_id: None,
                fired: false,
            })
            .collect();
        let base = RepeatDetectionMetrics::from_records(&records, 0.0);
        let deltas: Vec<f64> = (0..30).map(|i| i as f64 * 0.15).collect();
        let sweep = delta_sweep(&base, &deltas);
        for w in sweep.windows(2) {
            assert!(w[1].1 >= w[0].1);
            assert!(w[1].2 >= w[0].2);
        }
        assert_eq!(base.hits + base.false_alarms, 0);
    }

    #[test]
    fn homogeneity_of_identical_buckets() {
        let mut m = RepeatDetectionMetrics::from_records(&[], 1.0);
        for (b, (n, h)) in m.per_lag.iter_mut().zip([(50, 40), (100, 80), (200, 160)]) {
            b.repeats = n;
            b.hits = h;
        }
        let t = lag_homogeneity(&m).unwrap();
        assert_eq!(t.dof, 2);
        assert!(t.statistic.abs() < 1e-12);
        assert!((t.p_value - 1.0).abs() < 1e-12);

        m.per_lag[0].hits = 10;
        assert!(lag_homogeneity(&m).unwrap().p_value < 0.01);
    }

    #[test]
    fn memorize_without_perturbation_recalls_exactly() {
        let images = synth_structured(10, 32, 3);
        let enc = DownsampleEncoder::new(8, 3);
        let store = memorize(&images, &enc, &PerturbationSpec::NONE, Metric::L2).unwrap();
        assert_eq!(store.len(), 10);
        for s in &images {
            let r = recall_distance(&store, &s.image, &enc).unwrap();
            assert_eq!((r.id.as_str(), r.distance), (s.id.as_str(), 0.0));
        }
        assert_eq!(
            memorize(&[], &enc, &PerturbationSpec::NONE, Metric::L2).unwrap().len(),
            0
        );
        assert_eq!(images[0].category, Category::Natural);
    }
}
