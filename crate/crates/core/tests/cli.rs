use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eegdecode::dataset::{load_dataset, save_dataset, Polarity};
use eegdecode::synth::{self, Snr, SynthConfig};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eegdecode"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path → SHA-256 of every file under `dir`.
fn checksums(dir: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let digest = Sha256::digest(fs::read(&p).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), hex);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn small_dataset(dir: &Path, snr: Snr, per_group: usize) -> PathBuf {
    let data = dir.join("data");
    let mut cfg = SynthConfig::desk(snr).with_groups(per_group, per_group, per_group);
    cfg.n_trials = 24;
    cfg.rng_seed = 11;
    synth::generate_to_dir(&cfg, &data).unwrap();
    data
}

const FAST_CLASSIFY: [&str; 8] = [
    "--set",
    "bootstrap.n_boot=30",
    "--set",
    "bootstrap.feature_window_ms=50",
    "--set",
    "inference.n_boot=100",
    "--set",
    "inference.n_perm=100",
];

#[test]
fn full_cohort_preset_has_146_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("paper");
    let o = run(&["synth", "--preset", "paper", "--set", "synth.n_trials=2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ds = load_dataset(&out).unwrap();
    assert_eq!(ds.subjects.len(), 146);
    assert_eq!(ds.layout.len(), 64);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "synth");
    assert_eq!(meta["config"]["synth"]["n_trials"], 2);
}

#[test]
fn synth_is_reproducible_by_seed() {
    let dir = tempfile::tempdir().unwrap();
    let sums: Vec<_> = ["a", "b", "c"]
        .iter()
        .zip(["7", "7", "8"])
        .map(|(name, seed)| {
            let out = dir.path().join(name);
            let o = run(&["synth", "--preset", "desk", "--set", "synth.n_trials=6", "--seed", seed, "--out", s(&out)]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            checksums(&out)
        })
        .collect();
    assert_eq!(sums[0], sums[1]);
    assert_ne!(sums[0], sums[2]);
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = run(&["synth", "--set", "synth.n_trials=0", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("n_trials"), "{}", stderr(&o));

    let o = run(&["synth", "--set", "synth.n_trails=3", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("n_trails"), "{}", stderr(&o));

    let o = run(&["decode", "--out", s(&out), "--data", s(&dir.path().join("missing"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("does not exist"));

    let o = run(&["decode", "--out", s(&out)]);
    assert_eq!(code(&o), 2);

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"prep": {"resample_hz": 200}, "n_seedz": 3}"#).unwrap();
    let o = run(&["decode", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("n_seedz"));

    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn classify_rejects_an_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), Snr::Strong, 4);
    let out = dir.path().join("out");
    let o = run(&["classify", "--data", s(&data), "--out", s(&out), "--set", "grid=[]"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("grid"));
}

#[test]
fn validate_reports_violations_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), Snr::Null, 3);
    let o = run(&["validate", "--data", s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // Response time on a trial without a response.
    let meta = data.join("subjects/0000_C001.csv");
    let text = fs::read_to_string(&meta).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[4] = "none".into();
    cells[5] = "500".into();
    lines[1] = cells.join(",");
    fs::write(&meta, lines.join("\n") + "\n").unwrap();

    let out = dir.path().join("report");
    let o = run(&["validate", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("C001"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("validation.json")).unwrap()).unwrap();
    assert!(v["n_violations"].as_u64().unwrap() >= 1);

    let out = dir.path().join("dec");
    let o = run(&["decode", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn decode_writes_seed_rows_and_excluded_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), Snr::Strong, 5);
    // D002 keeps only positive sentences, so it has no negative-sentiment trials.
    let mut ds = load_dataset(&data).unwrap();
    let d2 = ds.subjects.iter_mut().find(|s| s.subject_id == "D002").unwrap();
    d2.trials.retain(|t| t.meta.sentiment == Polarity::Positive);
    assert!(!d2.trials.is_empty());
    let edited = dir.path().join("edited");
    save_dataset(&ds, &edited).unwrap();

    let out = dir.path().join("dec");
    let o = run(&[
        "decode",
        "--data",
        s(&edited),
        "--out",
        s(&out),
        "--set",
        r#"trial_type={"kind":"single","spec":{"category":"sentence_sentiment","side":"b"}}"#,
        "--set",
        "cluster.n_perm=100",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mut rdr = csv::Reader::from_path(out.join("decoding.csv")).unwrap();
    let mut per_t: BTreeMap<String, usize> = BTreeMap::new();
    for r in rdr.records() {
        *per_t.entry(r.unwrap()[0].to_string()).or_default() += 1;
    }
    assert!(!per_t.is_empty());
    assert!(per_t.values().all(|&n| n == 10), "{per_t:?}");

    let excluded = fs::read_to_string(out.join("excluded.csv")).unwrap();
    assert!(excluded.lines().any(|l| l.starts_with("D002,")), "{excluded}");
    for f in ["decoding_mean.csv", "clusters.json", "importance.csv", "run_meta.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), Snr::Strong, 6);
    let grid = r#"grid=[{"condition":"Baseline","trial_type_label":"All Sentences","trial_type":{"kind":"single","spec":{"category":"all","side":"single"}}},{"condition":"Sentence Sentiment","trial_type_label":"Contrasting","trial_type":{"kind":"contrast","spec":{"category":"sentence_sentiment","side":"a"}}}]"#;
    let mut sums = Vec::new();
    for threads in ["1", "3"] {
        let base = dir.path().join(format!("t{threads}"));
        let runs: [(&str, Vec<&str>); 3] = [
            ("decode", vec!["--set", "n_seeds=4", "--set", "cluster.n_perm=200"]),
            ("classify", [&FAST_CLASSIFY[..], &["--set", grid]].concat()),
            ("behavioral", vec!["--set", "inference.n_boot=100", "--set", "inference.n_perm=100"]),
        ];
        for (cmd, extra) in runs {
            let out = base.join(cmd);
            let mut args = vec![cmd, "--data", s(&data), "--out", s(&out), "--threads", threads, "--seed", "5"];
            args.extend(extra);
            let o = run(&args);
            assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
        }
        sums.push(checksums(&base));
    }
    assert!(sums[0].len() >= 12);
    assert_eq!(sums[0], sums[1]);
}

#[test]
fn classify_then_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), Snr::Weak, 6);
    let cls = dir.path().join("cls");
    let grid = r#"grid=[{"condition":"Baseline","trial_type_label":"All Sentences","trial_type":{"kind":"single","spec":{"category":"all","side":"single"}}}]"#;
    let mut args = vec!["classify", "--data", s(&data), "--out", s(&cls), "--set", grid];
    args.extend(FAST_CLASSIFY);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cls.join("classify_report.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 2);
    assert!(report[0]["positive_class"].as_str().unwrap().contains("D/S"));

    let cor = dir.path().join("cor");
    let probs = cls.join("probabilities.csv");
    let o = run(&[
        "correlate",
        "--data",
        s(&data),
        "--out",
        s(&cor),
        "--set",
        &format!("correlate.probabilities_path={}", s(&probs)),
        "--set",
        "correlate.task=D vs S",
        "--set",
        "correlate.n_perm=200",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(cor.join("correlation.json")).unwrap()).unwrap();
    assert_eq!(v["task"], "D vs S");
    let qs: Vec<&str> = v["correlations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["questionnaire"].as_str().unwrap())
        .collect();
    assert!(qs.contains(&"phq9_screen") && qs.contains(&"phq9_dayof"));
    assert_eq!(v["comparisons"][0]["first"], "phq9_dayof");

    let o = run(&["correlate", "--data", s(&data), "--out", s(&cor)]);
    assert_eq!(code(&o), 2);
}
