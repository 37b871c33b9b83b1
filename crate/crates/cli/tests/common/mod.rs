#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semisup"))
        .args(args)
        .output()
        .expect("spawn semisup")
}

/// Runs the binary and returns stdout, panicking with stderr on failure.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "semisup {} failed ({:?}):\n{}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

/// A scratch directory holding a synthetic corpus and its features.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().expect("tempdir"),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Path as an argument string.
    pub fn p(&self, name: &str) -> String {
        self.path(name).to_str().expect("utf-8 path").to_owned()
    }

    pub fn manifest(&self) -> String {
        self.p("corpus/manifest.tsv")
    }

    pub fn feats(&self) -> String {
        self.p("feats")
    }

    pub fn write(&self, name: &str, contents: &str) -> String {
        fs::write(self.path(name), contents).expect("write file");
        self.p(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    pub fn read(&self, name: &str) -> Vec<u8> {
        fs::read(self.path(name)).unwrap_or_else(|e| panic!("read {name}: {e}"))
    }

    /// Generates a corpus from `spec_json` and extracts features into `feats/`.
    pub fn corpus(spec_json: &str, seed: u64) -> Self {
        let ws = Workspace::new();
        let spec = ws.write("spec.json", spec_json);
        let seed = seed.to_string();
        ok(&[
            "synth",
            "--out",
            &ws.p("corpus"),
            "--seed",
            &seed,
            "--spec",
            &spec,
        ]);
        ok(&[
            "features",
            "extract",
            "--in",
            &ws.manifest(),
            "--out",
            &ws.feats(),
            "--shards",
            "2",
            "--stats",
            &ws.p("stats.json"),
            "--fit-stats",
        ]);
        ws
    }

    /// A few seconds of audio per split, five classes.
    pub fn tiny(seed: u64) -> Self {
        Self::corpus(TINY_SPEC, seed)
    }
}

impl Default for Workspace {
    fn default() -> Self {
        Self::new()
    }
}

pub const TINY_SPEC: &str = r#"{
  "phones": 5,
  "states_per_phone": 1,
  "labeled_speakers": 4,
  "unlabeled_speakers": 4,
  "heldout_speakers": 3,
  "labeled_utterances": 3,
  "unlabeled_utterances": 2,
  "heldout_utterances": 4,
  "min_seconds": 1.0,
  "max_seconds": 1.5
}"#;

pub const TINY_CLASSES: usize = 5;

/// Parses an eval table into `(condition, frames, frame_error, relative_reduction)`.
pub fn parse_eval(table: &str) -> Vec<(String, u64, f64, Option<f64>)> {
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("condition\tframes\tframe_error\tce\tbaseline_frame_error\trelative_error_reduction")
    );
    lines
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 6, "bad eval row {l:?}");
            let rel = (!f[5].is_empty()).then(|| f[5].parse().expect("reduction"));
            (
                f[0].to_owned(),
                f[1].parse().expect("frames"),
                f[2].parse().expect("error"),
                rel,
            )
        })
        .collect()
}

/// Held-out frame error in the last row of a metrics CSV.
pub fn final_error(path: &Path) -> f64 {
    let text = fs::read_to_string(path).expect("metrics csv");
    let last = text.lines().last().expect("metrics rows");
    last.split(',')
        .nth(3)
        .expect("error column")
        .parse()
        .expect("error value")
}

pub fn metrics_rows(path: &Path) -> usize {
    fs::read_to_string(path)
        .expect("metrics csv")
        .lines()
        .count()
        - 1
}
