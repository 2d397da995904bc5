use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recall_core::dataset::{DatasetManifest, ManifestEntry};
use recall_core::encoder::{write_embedding_file, Embedding, EmbeddingFile};
use recall_core::experiment::{without_timing, DatasetConfig, EncoderConfig, ExperimentConfig};
use recall_core::dataset::Category;
use serde_json::Value;

fn recall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recall")).args(args).output().unwrap()
}

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::synthetic_example();
    c.dataset = DatasetConfig::Synthetic {
        natural: 60,
        texture: 60,
        size: 16,
        seed: 9,
    };
    c.encoder = EncoderConfig::Downsample { grid: 4, channels: 3 };
    c.split.memorize = 0.4;
    c.split.novel = 0.4;
    c.split.calibration_seen = 0.5;
    c.split.calibration_novel = 0.2;
    c.forced_choice.pairs = Some(20);
    c.repeat.length = Some(20);
    c.sweep.noise = vec![0.0, 20.0];
    c.sweep.blur = vec![1.0];
    c
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, config.to_json()).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Value {
    let out = recall(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

fn report_text(stdout: &Value) -> String {
    fs::read_to_string(stdout["report"].as_str().unwrap()).unwrap()
}

#[test]
fn eval_fc_and_eval_repeat_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let config = config.to_str().unwrap();
    for cmd in ["eval-fc", "eval-repeat"] {
        let a = dir.path().join(format!("{cmd}-a"));
        let b = dir.path().join(format!("{cmd}-b"));
        let ra = report_text(&run_ok(&[cmd, "--config", config, "--out", a.to_str().unwrap(), "--jobs", "1"]));
        let rb = report_text(&run_ok(&[cmd, "--config", config, "--out", b.to_str().unwrap(), "--jobs", "4"]));
        assert_eq!(without_timing(&ra).unwrap(), without_timing(&rb).unwrap(), "{cmd}");
        assert!(ra.contains("\"timing\""));
    }
}

#[test]
fn seed_flags_override_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("o");
    let stdout = run_ok(&[
        "eval-fc",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed-split",
        "77",
        "--seed-perturbation",
        "78",
        "--seed-stream",
        "79",
        "--metric",
        "cosine",
        "--normalize",
    ]);
    let report: Value = serde_json::from_str(&report_text(&stdout)).unwrap();
    assert_eq!(report["seeds"], serde_json::json!({"split": 77, "perturbation": 78, "stream": 79}));
    assert_eq!(report["config"]["metric"], "cosine");
    assert_eq!(report["config"]["normalize"], true);
    assert_eq!(report["schema"], "report_v1");
}

#[test]
fn forced_choice_metrics_are_recomputable_from_trial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("o");
    let stdout = run_ok(&["eval-fc", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let report: Value = serde_json::from_str(&report_text(&stdout)).unwrap();
    for r in report["results"].as_array().unwrap() {
        let fc = &r["forced_choice"];
        let csv = fs::read_to_string(out.join(fc["trials_csv"].as_str().unwrap())).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("trial,seen_id,novel_id,d_seen,d_novel,correct,tie"));
        let (mut n, mut correct, mut ties) = (0, 0, 0);
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let (ds, dn): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
            assert_eq!(f[5] == "true", ds < dn);
            assert_eq!(f[6] == "true", ds == dn);
            n += 1;
            correct += (f[5] == "true") as usize;
            ties += (f[6] == "true") as usize;
        }
        assert_eq!(fc["pairs"], n);
        assert_eq!(fc["correct"], correct);
        assert_eq!(fc["ties"], ties);
        assert_eq!(fc["accuracy"].as_f64().unwrap(), correct as f64 / n as f64);
    }
}

#[test]
fn repeat_metrics_are_recomputable_from_event_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("o");
    let stdout = run_ok(&["eval-repeat", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let report: Value = serde_json::from_str(&report_text(&stdout)).unwrap();
    for r in report["results"].as_array().unwrap() {
        let rd = &r["repeat_detection"];
        let delta = rd["delta"].as_f64().unwrap();
        let csv = fs::read_to_string(out.join(rd["events_csv"].as_str().unwrap())).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("position,id,is_repeat,lag,d_nn,nn_id,fired"));
        let (mut repeats, mut hits, mut fas) = (0, 0, 0);
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let fired = !f[4].is_empty() && f[4].parse::<f64>().unwrap() < delta;
            assert_eq!(f[6] == "true", fired);
            if f[2] == "true" {
                repeats += 1;
                hits += fired as usize;
            } else {
                fas += fired as usize;
            }
        }
        assert_eq!(rd["repeats"], repeats);
        assert_eq!(rd["hits"], hits);
        assert_eq!(rd["false_alarms"], fas);
    }
}

#[test]
fn other_subcommands_produce_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let config = config.to_str().unwrap();
    let out = dir.path().join("o");
    let out_s = out.to_str().unwrap();
    for cmd in ["ingest", "perturb", "memorize", "calibrate", "sweep", "pca"] {
        run_ok(&[cmd, "--config", config, "--out", out_s]);
    }
    for file in [
        "images/manifest.jsonl",
        "perturbed/manifest.jsonl",
        "memory_natural.emb1",
        "memory_texture.emb1",
        "report_calibrate.json",
        "sweep.csv",
        "sweep.svg",
        "pca.csv",
        "pca.svg",
    ] {
        assert!(out.join(file).exists(), "{file}");
    }
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 3 * 2);

    let summary = recall(&["report", out.join("report_sweep.json").to_str().unwrap()]);
    assert!(summary.status.success());
    assert!(String::from_utf8(summary.stdout).unwrap().contains("sweep gaussian_blur sigma=1.0 natural"));
}

#[test]
fn exit_codes_follow_the_error_table() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");

    let out = recall(&["eval-fc"]);
    assert_eq!(out.status.code(), Some(2));

    let out = recall(&["eval-fc", "--config", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "io_error");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, small_config().to_json().replace("config_v1", "config_v9")).unwrap();
    let out = recall(&["eval-fc", "--config", bad.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["exit_code"], 3);

    let mut c = small_config();
    c.encoder = EncoderConfig::Downsample { grid: 32, channels: 3 };
    let path = write_config(dir.path(), &c);
    let out = recall(&["eval-fc", "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(stderr_json(&out)["error"], "grid_too_fine");

    let mut c = small_config();
    c.sweep.noise = vec![10.0, -3.0];
    let path = write_config(dir.path(), &c);
    let out = recall(&["sweep", "--config", path.to_str().unwrap(), "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(8));
    assert!(dir.path().join("s/sweep.csv").exists());
}

/// Every id gets the same clean vector and the same memory vector, so seen
/// and novel distances coincide and the threshold cannot separate them.
#[test]
fn degenerate_calibration_exits_with_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let entries: Vec<ManifestEntry> = (0..20)
        .map(|i| ManifestEntry {
            id: format!("img{i}"),
            path: PathBuf::from(format!("img{i}.png")),
            category: Category::Natural,
        })
        .collect();
    fs::write(dir.path().join("m.jsonl"), DatasetManifest { entries: entries.clone() }.to_jsonl()).unwrap();
    let file = |v: f32| EmbeddingFile {
        dim: 2,
        records: entries.iter().map(|e| (e.id.clone(), Embedding::new(vec![v, v]).unwrap())).collect(),
    };
    write_embedding_file(&dir.path().join("clean.emb1"), &file(0.0)).unwrap();
    write_embedding_file(&dir.path().join("memory.emb1"), &file(1.0)).unwrap();

    let mut c = small_config();
    c.dataset = DatasetConfig::Manifest { path: "m.jsonl".into() };
    c.encoder = EncoderConfig::ExternalFile {
        name: "flat".into(),
        dim: 2,
        clean: "clean.emb1".into(),
        memory: "memory.emb1".into(),
    };
    let path = write_config(dir.path(), &c);
    let out = recall(&["eval-repeat", "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(7));
    assert_eq!(stderr_json(&out)["error"], "degenerate_calibration");

    // Calibration alone reports the degenerate threshold without failing.
    let stdout = run_ok(&["calibrate", "--config", path.to_str().unwrap(), "--out", dir.path().join("c").to_str().unwrap()]);
    let report: Value = serde_json::from_str(&report_text(&stdout)).unwrap();
    assert_eq!(report["results"][0]["calibration"]["degenerate"], true);
}

const PEER: &str = r#"
while IFS= read -r line; do
  id=$(printf '%s' "$line" | sed 's/.*"id":"\([^"]*\)".*/\1/')
  path=$(printf '%s' "$line" | sed 's/.*"path":"\([^"]*\)".*/\1/')
  size=$(wc -c < "$path")
  printf '{"id":"%s","dim":1,"values":[%s]}\n' "$id" "$size"
done
"#;

#[test]
fn stdio_peer_drives_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.dataset = DatasetConfig::Synthetic {
        natural: 12,
        texture: 0,
        size: 16,
        seed: 9,
    };
    c.forced_choice.pairs = Some(4);
    c.encoder = EncoderConfig::ExternalStdio {
        name: "png-size".into(),
        dim: 1,
        command: vec!["sh".into(), "-c".into(), PEER.into()],
    };
    let path = write_config(dir.path(), &c);
    let stdout = run_ok(&["eval-fc", "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    let report: Value = serde_json::from_str(&report_text(&stdout)).unwrap();
    assert_eq!(report["encoder"]["kind"], "external_stdio");
    assert_eq!(report["results"][0]["forced_choice"]["pairs"], 4);
}

#[test]
fn stdio_failures_map_to_external_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.dataset = DatasetConfig::Synthetic {
        natural: 12,
        texture: 0,
        size: 16,
        seed: 9,
    };
    c.forced_choice.pairs = Some(4);
    let erroring = r#"while IFS= read -r line; do
  id=$(printf '%s' "$line" | sed 's/.*"id":"\([^"]*\)".*/\1/')
  printf '{"id":"%s","error":"model exploded"}\n' "$id"
done"#;
    for (command, kind) in [
        (vec!["sh".to_string(), "-c".into(), erroring.into()], "external_error"),
        (vec!["/nonexistent/encoder".to_string()], "external_unavailable"),
        (vec!["sh".to_string(), "-c".into(), "exit 0".into()], "external_unavailable"),
    ] {
        c.encoder = EncoderConfig::ExternalStdio {
            name: "broken".into(),
            dim: 4,
            command,
        };
        let path = write_config(dir.path(), &c);
        let out = recall(&["eval-fc", "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(6), "{kind}");
        assert_eq!(stderr_json(&out)["error"], kind);
    }
}
