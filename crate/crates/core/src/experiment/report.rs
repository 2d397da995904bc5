use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Serialize, Serializer};
use serde_json::Value;

use crate::analysis::{DistanceSummary, FailureCase};
use crate::dataset::Category;
use crate::encoder::EncoderDescriptor;
use crate::error::{Error, Result};
use crate::experiment::config::{ExperimentConfig, Seeds};
use crate::perturb::PerturbationKind;
use crate::tasks::{ChiSquareTest, ThresholdCalibration};

pub const REPORT_SCHEMA: &str = "report_v1";

/// Undefined rates are written as the string `"n/a"`.
fn rate<S: Serializer>(value: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match value {
        Some(v) => s.serialize_f64(*v),
        None => s.serialize_str("n/a"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Ingest,
    Perturb,
    Memorize,
    Calibrate,
    ForcedChoice,
    RepeatDetection,
    Sweep,
    Pca,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Ingest => "ingest",
            Task::Perturb => "perturb",
            Task::Memorize => "memorize",
            Task::Calibrate => "calibrate",
            Task::ForcedChoice => "forced_choice",
            Task::RepeatDetection => "repeat_detection",
            Task::Sweep => "sweep",
            Task::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForcedChoiceSection {
    pub pairs: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub ties: usize,
    pub seen_distances: DistanceSummary,
    pub novel_distances: DistanceSummary,
    pub failures: Vec<FailureCase>,
    pub trials_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagRow {
    pub bucket: String,
    pub repeats: usize,
    pub hits: usize,
    #[serde(serialize_with = "rate")]
    pub hit_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatSection {
    pub stream_length: usize,
    pub repeat_rate: f64,
    pub delta: f64,
    pub repeats: usize,
    pub hits: usize,
    pub non_repeats: usize,
    pub false_alarms: usize,
    #[serde(serialize_with = "rate")]
    pub hit_rate: Option<f64>,
    #[serde(serialize_with = "rate")]
    pub false_alarm_rate: Option<f64>,
    pub per_lag: Vec<LagRow>,
    pub lag_homogeneity: Option<ChiSquareTest>,
    pub events_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSection {
    #[serde(flatten)]
    pub threshold: ThresholdCalibration,
    pub seen: usize,
    pub novel: usize,
    pub seen_distances: DistanceSummary,
    pub novel_distances: DistanceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryResult {
    pub category: Category,
    pub items: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memorized: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forced_choice: Option<ForcedChoiceSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeat_detection: Option<RepeatSection>,
}

impl CategoryResult {
    pub fn new(category: Category, items: usize) -> Self {
        Self {
            category,
            items,
            memorized: None,
            memory_file: None,
            forced_choice: None,
            calibration: None,
            repeat_detection: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub kind: PerturbationKind,
    pub sigma: f64,
    pub category: Category,
    #[serde(serialize_with = "rate")]
    pub accuracy: Option<f64>,
    /// Error kind and message for a cell that did not complete.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaSection {
    pub fit_on: String,
    pub points: usize,
    pub explained_variance: Vec<f64>,
    pub categories: Vec<PcaCategoryExtent>,
    pub csv: String,
    pub svg: String,
}

/// Axis-aligned bounding box of one category's projected points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaCategoryExtent {
    pub category: Category,
    pub points: usize,
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub task: Task,
    pub config: ExperimentConfig,
    pub encoder: EncoderDescriptor,
    pub seeds: Seeds,
    pub results: Vec<CategoryResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepCell>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaSection>,
    pub artifacts: Vec<String>,
    pub timing: Timing,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn file_name(&self) -> String {
        format!("report_{}.json", self.task.name())
    }

    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let path = dir.join(self.file_name());
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Report JSON with the `timing` member removed, re-serialized in the same
/// layout. Two runs of one configuration agree on this byte for byte.
pub fn without_timing(report_json: &str) -> Result<String> {
    let mut value: Value = serde_json::from_str(report_json)?;
    if let Value::Object(map) = &mut value {
        map.shift_remove("timing");
    }
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

fn fmt_rate(v: &Value) -> String {
    match v {
        Value::Number(n) => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => s.clone(),
        _ => "-".into(),
    }
}

/// Plain-text digest of a report file's JSON.
pub fn render_summary(report_json: &str) -> Result<String> {
    let v: Value = serde_json::from_str(report_json)?;
    if v["schema"] != REPORT_SCHEMA {
        return Err(Error::Config(format!("not a {REPORT_SCHEMA} report")));
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "task: {}  encoder: {} (dim {})",
        v["task"].as_str().unwrap_or("?"),
        v["encoder"]["name"].as_str().unwrap_or("?"),
        v["encoder"]["dim"]
    );
    let _ = writeln!(
        out,
        "seeds: split={} perturbation={} stream={}",
        v["seeds"]["split"], v["seeds"]["perturbation"], v["seeds"]["stream"]
    );
    for r in v["results"].as_array().into_iter().flatten() {
        let _ = writeln!(out, "[{}] items={}", r["category"].as_str().unwrap_or("?"), r["items"]);
        let fc = &r["forced_choice"];
        if fc.is_object() {
            let _ = writeln!(
                out,
                "  forced choice: accuracy={} correct={}/{} ties={}",
                fmt_rate(&fc["accuracy"]),
                fc["correct"],
                fc["pairs"],
                fc["ties"]
            );
        }
        let cal = &r["calibration"];
        if cal.is_object() {
            let _ = writeln!(
                out,
                "  calibration: mean_seen={} mean_novel={} delta={}",
                fmt_rate(&cal["mean_seen"]),
                fmt_rate(&cal["mean_novel"]),
                fmt_rate(&cal["delta"])
            );
        }
        let rd = &r["repeat_detection"];
        if rd.is_object() {
            let _ = writeln!(
                out,
                "  repeat detection: hit_rate={} false_alarm_rate={} ({} repeats, {} non-repeats)",
                fmt_rate(&rd["hit_rate"]),
                fmt_rate(&rd["false_alarm_rate"]),
                rd["repeats"],
                rd["non_repeats"]
            );
            for lag in rd["per_lag"].as_array().into_iter().flatten() {
                let _ = writeln!(
                    out,
                    "    lag {:>9}: {}/{} hit_rate={}",
                    lag["bucket"].as_str().unwrap_or("?"),
                    lag["hits"],
                    lag["repeats"],
                    fmt_rate(&lag["hit_rate"])
                );
            }
        }
    }
    for cell in v["sweep"].as_array().into_iter().flatten() {
        let _ = writeln!(
            out,
            "sweep {} sigma={} {}: accuracy={}{}",
            cell["kind"].as_str().unwrap_or("?"),
            cell["sigma"],
            cell["category"].as_str().unwrap_or("?"),
            fmt_rate(&cell["accuracy"]),
            cell["error"].as_str().map(|e| format!(" (failed: {e})")).unwrap_or_default()
        );
    }
    if v["pca"].is_object() {
        let _ = writeln!(out, "pca: explained_variance={}", v["pca"]["explained_variance"]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undefined_rates_serialize_as_na() {
        let row = LagRow {
            bucket: "0".into(),
            repeats: 0,
            hits: 0,
            hit_rate: None,
        };
        let json = serde_json::to_string(&row).unwrap();
        assert!(json.contains(r#""hit_rate":"n/a""#));
        let row = LagRow {
            hit_rate: Some(0.5),
            ..row
        };
        assert!(serde_json::to_string(&row).unwrap().contains(r#""hit_rate":0.5"#));
    }

    #[test]
    fn timing_is_stripped_in_place() {
        let a = "{\n  \"schema\": \"report_v1\",\n  \"x\": 1,\n  \"timing\": {\n    \"elapsed_seconds\": 0.25\n  }\n}\n";
        let b = a.replace("0.25", "9.5");
        assert_eq!(without_timing(a).unwrap(), without_timing(&b).unwrap());
        assert_eq!(without_timing(a).unwrap(), "{\n  \"schema\": \"report_v1\",\n  \"x\": 1\n}\n");
    }
}
