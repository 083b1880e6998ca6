use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use labelinst_cli::manifest::Manifest;
use labelinst_core::eval::{ComparisonReport, EvalReport};
use labelinst_core::instructions::InstructionSet;

fn labelinst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelinst")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = labelinst(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct World {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl World {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&["synth-gen", "--out-dir", s(&data), "--n-classes", "3", "--images-per-class", "10", "--dim", "16", "--seed", "4"]);
        Self { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Data flags plus a small experiment setup.
    fn args(&self) -> Vec<String> {
        [
            "--annotations",
            s(&self.path("data/annotations.json")),
            "--embeddings",
            s(&self.path("data/embeddings.bin")),
            "--n-folds",
            "3",
            "--seed",
            "4",
            "--k",
            "40",
        ]
        .map(String::from)
        .to_vec()
    }

    fn run(&self, head: &[&str]) -> Output {
        let args = self.args();
        let all: Vec<&str> = head.iter().copied().chain(args.iter().map(String::as_str)).collect();
        labelinst(&all)
    }

    fn ok(&self, head: &[&str]) -> String {
        let out = self.run(head);
        assert!(out.status.success(), "{head:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_gen_writes_dataset_and_manifest() {
    let w = World::new();
    for f in ["annotations.json", "embeddings.bin", "synth.json", "config.toml", "manifest.json"] {
        assert!(w.path("data").join(f).exists(), "{f}");
    }
    let m = Manifest::load(&w.path("data/manifest.json")).unwrap();
    assert_eq!(m.command, "synth-gen");
    let emb = m.files.iter().find(|f| f.path == "embeddings.bin").unwrap();
    let bytes = std::fs::read(w.path("data/embeddings.bin")).unwrap();
    assert_eq!(emb.bytes, bytes.len() as u64);
    assert_eq!(emb.crc32, crc32(&bytes));
    assert!(m.config.contains("seed = 4"));
}

fn crc32(bytes: &[u8]) -> u32 {
    // Bitwise reflected CRC-32 (IEEE).
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= u32::from(b);
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

#[test]
fn full_pipeline_with_saved_indexes() {
    let w = World::new();
    let idx = w.path("idx");
    let stdout = w.ok(&["build-index", "--per-fold", "--out-dir", s(&idx)]);
    assert!(stdout.contains("fold 2 test"));
    for f in 0..3 {
        assert!(idx.join(format!("fold{f}_train.idx")).exists());
        assert!(idx.join(format!("fold{f}_test.idx")).exists());
    }

    let pdc = w.path("pdc");
    w.ok(&["run-pdc", "--out-dir", s(&pdc), "--index-dir", s(&idx)]);
    let set = InstructionSet::load(pdc.join("fold0/alpha.json")).unwrap();
    assert_eq!(set.method, "pdc");
    assert_eq!(set.fold, Some(0));
    assert!(!set.pairs.is_empty() && set.pairs.len() <= 4);
    assert!(set.auc_trace().windows(2).all(|p| p[1] > p[0]));

    let rp = w.path("rp");
    w.ok(&["run-baseline", "--kind", "random_pairs", "--match-dir", s(&pdc), "--out-dir", s(&rp), "--index-dir", s(&idx)]);
    for f in 0..3 {
        for class in ["alpha", "beta", "gamma"] {
            let a = InstructionSet::load(pdc.join(format!("fold{f}/{class}.json"))).unwrap();
            let b = InstructionSet::load(rp.join(format!("fold{f}/{class}.json"))).unwrap();
            assert_eq!(a.pairs.len(), b.pairs.len(), "fold {f} {class}");
        }
    }

    let ev = w.path("eval");
    let stdout = w.ok(&["evaluate", s(&pdc), "--out-dir", s(&ev), "--index-dir", s(&idx)]);
    assert!(stdout.contains("pdc: mAP"));
    let report = EvalReport::from_json(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.per_class.len(), 3);
    assert!(report.map.is_some_and(|m| (0.0..=1.0).contains(&m)));
    let csv = std::fs::read_to_string(ev.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    assert!(std::fs::read_to_string(ev.join("report.md")).unwrap().contains("**mAP**"));

    let ev2 = w.path("eval_texts");
    w.ok(&["evaluate", s(&pdc), "--texts-only", "--formats", "json", "--out-dir", s(&ev2), "--index-dir", s(&idx)]);
    assert!(ev2.join("report_texts_only.json").exists());
    assert!(!ev2.join("report_texts_only.csv").exists());
}

#[test]
fn saved_and_rebuilt_indexes_agree() {
    let w = World::new();
    let idx = w.path("idx");
    w.ok(&["build-index", "--per-fold", "--out-dir", s(&idx)]);
    w.ok(&["run-pdc", "--out-dir", s(&w.path("a")), "--index-dir", s(&idx)]);
    w.ok(&["run-pdc", "--out-dir", s(&w.path("b"))]);
    for f in 0..3 {
        let rel = format!("fold{f}/beta.json");
        assert_eq!(std::fs::read(w.path("a").join(&rel)).unwrap(), std::fs::read(w.path("b").join(&rel)).unwrap());
    }
}

#[test]
fn compare_writes_one_table_for_all_methods() {
    let w = World::new();
    let out = w.path("cmp");
    w.ok(&["compare", "--out-dir", s(&out), "--methods", "pdc,original_texts,random_bboxes"]);
    let cmp: ComparisonReport = serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    let names: Vec<&str> = cmp.reports.iter().map(|r| r.config.method.as_str()).collect();
    assert_eq!(names, ["pdc", "original_texts", "random_bboxes"]);
    assert!(out.join("sets/random_bboxes/fold1/gamma.json").exists());
    let md = std::fs::read_to_string(out.join("comparison.md")).unwrap();
    assert!(md.lines().next().unwrap().contains("random_bboxes"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override_it() {
    let w = World::new();
    let cfg = w.path("run.toml");
    let text = format!(
        "annotations = {:?}\nembeddings = {:?}\nn_folds = 3\nk = 40\nseed = 4\nformats = [\"json\"]\n",
        s(&w.path("data/annotations.json")),
        s(&w.path("data/embeddings.bin"))
    );
    std::fs::write(&cfg, text).unwrap();
    let out = w.path("ot");
    ok(&["run-baseline", "--config", s(&cfg), "--kind", "original_texts", "--out-dir", s(&out), "--k", "30"]);
    let set = InstructionSet::load(out.join("fold0/alpha.json")).unwrap();
    assert_eq!(set.config.k, 30);
    assert_eq!(set.config.seed, 4);
    let snapshot = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(snapshot.contains("k = 30"));
}

#[test]
fn exit_codes() {
    let w = World::new();
    assert_eq!(labelinst(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(labelinst(&["evaluate", "--texts-only", "--bboxes-only", "x"]).status.code(), Some(2));
    assert_eq!(labelinst(&["run-pdc", "--out-dir", s(&w.path("x"))]).status.code(), Some(1));
    let bad = w.path("bad.toml");
    std::fs::write(&bad, "kk = 1\n").unwrap();
    let out = labelinst(&["run-pdc", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config keys: kk"));
    assert_eq!(w.run(&["run-pdc", "--max-pairs", "0", "--out-dir", s(&w.path("y"))]).status.code(), Some(1));

    // A match directory missing one class leaves that class without a count.
    let pdc = w.path("pdc");
    w.ok(&["run-pdc", "--out-dir", s(&pdc)]);
    for f in 0..3 {
        std::fs::remove_file(pdc.join(format!("fold{f}/gamma.json"))).unwrap();
    }
    let out = w.run(&["run-baseline", "--kind", "random_pairs", "--match-dir", s(&pdc), "--out-dir", s(&w.path("rp"))]);
    assert_eq!(out.status.code(), Some(3));
    let summary = std::fs::read_to_string(w.path("rp/summary.json")).unwrap();
    assert!(summary.contains("\"failed\""));
    assert!(w.path("rp/fold0/alpha.json").exists());
}

#[test]
fn mismatched_inputs_are_rejected() {
    let w = World::new();
    let other = w.path("other");
    ok(&["synth-gen", "--out-dir", s(&other), "--n-classes", "4", "--images-per-class", "10", "--dim", "16"]);
    let out = labelinst(&[
        "run-pdc",
        "--annotations",
        s(&other.join("annotations.json")),
        "--embeddings",
        s(&w.path("data/embeddings.bin")),
        "--out-dir",
        s(&w.path("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing embedding"));

    let idx = w.path("idx");
    w.ok(&["build-index", "--per-fold", "--out-dir", s(&idx)]);
    let args = w.args();
    let mut args: Vec<&str> = args.iter().map(String::as_str).collect();
    let pos = args.iter().position(|a| *a == "--n-folds").unwrap();
    args[pos + 1] = "4";
    let y = w.path("y");
    let out = labelinst(&[&["run-pdc", "--index-dir", s(&idx), "--out-dir", s(&y)][..], &args].concat());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_is_byte_deterministic() {
    let reports: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let w = World::new();
            let pdc = w.path("pdc");
            w.ok(&["run-pdc", "--out-dir", s(&pdc)]);
            let ev = w.path("eval");
            w.ok(&["evaluate", s(&pdc), "--out-dir", s(&ev), "--formats", "json,csv"]);
            let mut bytes = std::fs::read(ev.join("report.json")).unwrap();
            bytes.extend(std::fs::read(ev.join("report.csv")).unwrap());
            bytes.extend(std::fs::read(pdc.join("fold1/gamma.json")).unwrap());
            bytes
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
}
