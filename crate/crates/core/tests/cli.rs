//! The `muspy` binary: exit codes, error reports and deterministic output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn muspy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muspy")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr)
        .unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)));
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn convert_to_canonical_json_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    let input = fixture("midi/03_multitrack.mid");
    let r = muspy(&["convert", s(&input), s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read(&out).unwrap(), fs::read(fixture("midi/03_multitrack.mid.muspy.json")).unwrap());
}

#[test]
fn convert_between_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mid = dir.path().join("t.mid");
    let xml = dir.path().join("t.musicxml");
    let abc = fixture("abc/05_multi_tune.abc");
    assert_eq!(muspy(&["convert", s(&abc), s(&mid), "--tune", "1"]).status.code(), Some(0));
    assert_eq!(muspy(&["convert", s(&mid), s(&xml)]).status.code(), Some(0));
    assert_eq!(muspy(&["convert", s(&abc), s(&mid), "--tune", "5"]).status.code(), Some(2));
    let r = muspy(&["convert", s(&xml), s(&dir.path().join("out.abc"))]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_kind(&r), "unsupported");
}

#[test]
fn unknown_extension_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.xyz");
    fs::write(&a, b"whatever").unwrap();
    let r = muspy(&["convert", s(&a), s(&dir.path().join("b.mid"))]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(error_kind(&r), "invalid_argument");
}

#[test]
fn bad_input_exits_one_with_a_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.json");
    let r = muspy(&["convert", s(&fixture("corrupt/truncated.mid")), s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_kind(&r), "truncated");
    assert!(!out.exists());

    let r = muspy(&["convert", s(&dir.path().join("missing.mid")), s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_kind(&r), "io");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(muspy(&[]).status.code(), Some(2));
    assert_eq!(muspy(&["metrics"]).status.code(), Some(2));
    assert_eq!(muspy(&["encode", "x.mid", "--repr", "bogus"]).status.code(), Some(2));
    assert_eq!(muspy(&["--help"]).status.code(), Some(0));
}

#[test]
fn metrics_are_deterministic_json() {
    let input = fixture("midi/03_multitrack.mid");
    let a = muspy(&["metrics", s(&input)]);
    let b = muspy(&["metrics", s(&input)]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["polyphony"], 1.0);
    assert!(v.get("pitch_entropy").is_some());

    let dir_report = muspy(&["metrics", s(&fixture("abc"))]);
    assert_eq!(dir_report.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&dir_report.stdout).unwrap();
    assert!(v.get("05_multi_tune.abc#1").is_some());
}

#[test]
fn encode_outputs() {
    let input = fixture("midi/01_single_note.mid");
    let r = muspy(&["encode", s(&input), "--repr", "event", "--config", "experiment"]);
    assert_eq!(r.status.code(), Some(0));
    // 96 ticks at resolution 96 is 96 steps: one shift of 96
    assert_eq!(String::from_utf8(r.stdout).unwrap(), "60\n351\n188\n356\n");

    let r = muspy(&["encode", s(&input), "--repr", "note"]);
    assert_eq!(String::from_utf8(r.stdout).unwrap(), "time,pitch,duration,velocity\n0,60,96,100\n");

    let chord = fixture("midi/02_running_status_chord.mid");
    let r = muspy(&["encode", s(&chord), "--repr", "pitch"]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_kind(&r), "polyphony");
    let r = muspy(&["encode", s(&chord), "--repr", "pitch", "--policy", "keep-highest", "--binary"]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(&r.stdout[..4], &720u32.to_le_bytes());
}

#[test]
fn stats_reports() {
    let midi = tempfile::tempdir().unwrap();
    for e in fs::read_dir(fixture("midi")).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "mid") {
            fs::copy(&p, midi.path().join(p.file_name().unwrap())).unwrap();
        }
    }
    let r = muspy(&["stats", s(midi.path()), "--report", "keys"]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(String::from_utf8(r.stdout).unwrap(), "key,count\nA minor,1\nD major,1\nnone,4\n");

    let r = muspy(&["stats", s(midi.path()), "--report", "tempos", "--bin-width", "50"]);
    assert_eq!(String::from_utf8(r.stdout).unwrap(), "bin_start,bin_end,count\n100,150,3\nnone,,3\n");

    let dir = tempfile::tempdir().unwrap();
    let r = muspy(&["stats", s(dir.path()), "--report", "lengths"]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_kind(&r), "empty_corpus");
}

#[test]
fn dataset_list_and_split() {
    let r = muspy(&["dataset", "list"]);
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 11);

    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir_all(&raw).unwrap();
    for i in 0..10 {
        fs::copy(fixture("midi/01_single_note.mid"), raw.join(format!("{i}.mid"))).unwrap();
    }
    let manifest = dir.path().join("m.json");
    fs::write(
        &manifest,
        r#"{"name":"local","title":"Local","sources":[{"url":"file:///none","archive":"none"}],
           "file_glob":"*.mid","source_format":"midi","license_note":""}"#,
    )
    .unwrap();
    let split = |seed: &str| muspy(&["dataset", "split", s(&manifest), s(dir.path()), "--seed", seed]);
    let (a, b) = (split("4"), split("4"));
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["train"].as_array().unwrap().len(), 8);

    let r = muspy(&["dataset", "split", s(&manifest), s(dir.path()), "--ratios", "1,1"]);
    assert_eq!(r.status.code(), Some(2));
    let r = muspy(&["dataset", "split", s(&manifest), s(dir.path()), "--mode", "preconverted"]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(error_kind(&r), "config");

    assert_eq!(muspy(&["dataset", "convert", s(&manifest), s(dir.path())]).status.code(), Some(0));
    let r = muspy(&["dataset", "split", s(&manifest), s(dir.path()), "--mode", "preconverted", "--seed", "4"]);
    assert_eq!(r.stdout, a.stdout);
}
