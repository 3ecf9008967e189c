//! Corpus download, conversion, iteration and splitting on local fixtures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use muspy::datasets::{self, CorpusHandle, IterationMode, Manifest};
use muspy::{serialization, Error};
use sha2::{Digest, Sha256};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn manifest(name: &str, url: &str, sha: Option<&str>, archive: &str, glob: &str, format: &str) -> Manifest {
    let sha = sha.map(|s| format!("\"{s}\"")).unwrap_or_else(|| "null".into());
    Manifest::from_json(&format!(
        r#"{{"name":"{name}","title":"Test","sources":[{{"url":"{url}","sha256":{sha},"archive":"{archive}"}}],
            "file_glob":"{glob}","source_format":"{format}","license_note":"test only"}}"#
    ))
    .unwrap()
}

fn local(name: &str, glob: &str, format: &str) -> Manifest {
    manifest(name, "file:///nonexistent", None, "none", glob, format)
}

fn copy_into(raw: &Path, files: &[(&str, &str)]) {
    for (src, dst) in files {
        let to = raw.join(dst);
        fs::create_dir_all(to.parent().unwrap()).unwrap();
        fs::copy(fixture(src), to).unwrap();
    }
}

fn mixed_corpus(root: &Path) {
    copy_into(
        &root.join("raw"),
        &[
            ("midi/01_single_note.mid", "a/one.mid"),
            ("midi/03_multitrack.mid", "a/three.MID"),
            ("musicxml/02_tie.musicxml", "b/tie.musicxml"),
            ("musicxml/05_compressed.mxl", "b/packed.mxl"),
            ("abc/05_multi_tune.abc", "c/tunes.abc"),
            ("abc/01_basic.abc", "c/readme.txt"),
        ],
    );
}

fn saved(items: impl Iterator<Item = muspy::Result<muspy::Music>>) -> Vec<String> {
    items.map(|m| serialization::save(&m.unwrap()).unwrap()).collect()
}

#[test]
fn preconverted_matches_on_the_fly() {
    let dir = tempfile::tempdir().unwrap();
    mixed_corpus(dir.path());
    let m = local("mixed", "**/*.mid;**/*.musicxml;**/*.mxl;**/*.abc", "auto");

    let live = CorpusHandle::open(dir.path(), m.clone(), IterationMode::OnTheFly).unwrap();
    assert_eq!(live.files().unwrap(), ["a/one.mid", "a/three.MID", "b/packed.mxl", "b/tie.musicxml", "c/tunes.abc"]);
    assert!(matches!(
        CorpusHandle::open(dir.path(), m.clone(), IterationMode::Preconverted),
        Err(Error::Config(_))
    ));

    let report = datasets::convert(&live).unwrap();
    assert_eq!((report.converted, report.documents, report.skipped.len()), (5, 6, 0));
    assert!(dir.path().join("converted/c/tunes.abc.1.muspy.json").is_file());
    assert!(dir.path().join("converted/a/one.mid.muspy.json").is_file());

    let pre = CorpusHandle::open(dir.path(), m, IterationMode::Preconverted).unwrap();
    assert_eq!(pre.files().unwrap(), live.files().unwrap());
    let a = saved(live.iter().unwrap());
    let b = saved(pre.iter().unwrap());
    assert_eq!(a.len(), 6);
    assert_eq!(a, b);
}

#[test]
fn convert_skips_corrupt_files_and_reruns_incrementally() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    copy_into(
        &raw,
        &[
            ("midi/01_single_note.mid", "1.mid"),
            ("midi/02_running_status_chord.mid", "2.mid"),
            ("midi/04_two_channels.mid", "3.mid"),
            ("corrupt/truncated.mid", "bad.mid"),
        ],
    );
    let m = local("inc", "*.mid", "midi");
    let handle = CorpusHandle::open(dir.path(), m.clone(), IterationMode::OnTheFly).unwrap();

    let first = datasets::convert(&handle).unwrap();
    assert_eq!((first.converted, first.unchanged), (3, 0));
    assert_eq!(first.skipped.len(), 1);
    assert_eq!(first.skipped[0].path, "bad.mid");

    let second = datasets::convert(&handle).unwrap();
    assert_eq!((second.converted, second.unchanged, second.skipped.len()), (0, 3, 1));

    fs::copy(fixture("midi/06_long_delta.mid"), raw.join("2.mid")).unwrap();
    fs::remove_file(dir.path().join("converted/3.mid.muspy.json")).unwrap();
    let third = datasets::convert(&handle).unwrap();
    assert_eq!((third.converted, third.unchanged), (2, 1));

    // the corrupt file shows up as one error item in preconverted iteration
    let pre = CorpusHandle::open(dir.path(), m, IterationMode::Preconverted).unwrap();
    let items: Vec<_> = pre.iter().unwrap().collect();
    assert_eq!(items.len(), 4);
    let err = items[3].as_ref().unwrap_err();
    assert!(err.to_string().contains("skipped during conversion"), "{err}");
}

#[test]
fn wrong_format_is_an_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    copy_into(&dir.path().join("raw"), &[("midi/01_single_note.mid", "x.mid")]);
    let handle = CorpusHandle::open(dir.path(), local("wrong", "*", "musicxml"), IterationMode::OnTheFly).unwrap();
    assert!(matches!(datasets::convert(&handle), Err(Error::EmptyCorpus(_))));
    assert!(!handle.marker_path().exists());
}

fn zip_of(files: &[(&str, &str)]) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    {
        let mut z = zip::ZipWriter::new(&mut buf);
        for (src, dst) in files {
            z.start_file(*dst, zip::write::SimpleFileOptions::default()).unwrap();
            z.write_all(&fs::read(fixture(src)).unwrap()).unwrap();
        }
        z.finish().unwrap();
    }
    buf.into_inner()
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[test]
fn download_verifies_extracts_and_is_idempotent() {
    let src = tempfile::tempdir().unwrap();
    let bytes = zip_of(&[("midi/01_single_note.mid", "set/a.mid"), ("midi/04_two_channels.mid", "set/b.mid")]);
    let archive = src.path().join("set.zip");
    fs::write(&archive, &bytes).unwrap();
    let url = format!("file://{}", archive.display());

    let root = tempfile::tempdir().unwrap();
    let m = manifest("z", &url, Some(&sha(&bytes)), "zip", "**/*.mid", "midi");
    let first = datasets::download(&m, root.path()).unwrap();
    assert_eq!(first.fetched, ["set.zip"]);
    assert_eq!(first.bytes_transferred, bytes.len() as u64);
    assert_eq!(first.extracted, ["set.zip"]);
    assert!(first.unverified.is_empty());
    assert!(root.path().join("raw/set/a.mid").is_file());

    let second = datasets::download(&m, root.path()).unwrap();
    assert_eq!(second.bytes_transferred, 0);
    assert_eq!(second.reused, ["set.zip"]);
    assert!(second.extracted.is_empty());

    let handle = CorpusHandle::open(root.path(), m, IterationMode::OnTheFly).unwrap();
    assert_eq!(handle.files().unwrap(), ["set/a.mid", "set/b.mid"]);
}

#[test]
fn download_tar_gz() {
    let src = tempfile::tempdir().unwrap();
    let archive = src.path().join("set.tar.gz");
    {
        let gz = flate2::write::GzEncoder::new(fs::File::create(&archive).unwrap(), flate2::Compression::default());
        let mut tar = tar::Builder::new(gz);
        tar.append_path_with_name(fixture("abc/01_basic.abc"), "tunes/basic.abc").unwrap();
        tar.into_inner().unwrap().finish().unwrap();
    }
    let root = tempfile::tempdir().unwrap();
    let m = manifest("t", &format!("file://{}", archive.display()), None, "tar.gz", "**/*.abc", "abc");
    let report = datasets::download(&m, root.path()).unwrap();
    assert_eq!(report.unverified, ["set.tar.gz"]);
    assert!(root.path().join("raw/tunes/basic.abc").is_file());
}

#[test]
fn tampered_checksum_is_an_integrity_error() {
    let src = tempfile::tempdir().unwrap();
    let bytes = zip_of(&[("midi/01_single_note.mid", "a.mid")]);
    let archive = src.path().join("a.zip");
    fs::write(&archive, &bytes).unwrap();
    let mut wrong = sha(&bytes);
    wrong.replace_range(0..1, if wrong.starts_with('0') { "1" } else { "0" });

    let root = tempfile::tempdir().unwrap();
    let m = manifest("bad", &format!("file://{}", archive.display()), Some(&wrong), "zip", "*.mid", "midi");
    assert!(matches!(datasets::download(&m, root.path()), Err(Error::Integrity { .. })));
    // nothing half-written is left behind
    assert!(fs::read_dir(root.path().join("downloads")).unwrap().next().is_none());
}

#[test]
fn unreachable_source_is_a_transfer_error() {
    let root = tempfile::tempdir().unwrap();
    for url in ["http://127.0.0.1:9/none.zip", "file:///definitely/not/here.zip"] {
        let m = manifest("gone", url, None, "zip", "*.mid", "midi");
        match datasets::download(&m, root.path()) {
            Err(Error::Transfer { url: u, .. }) => assert_eq!(u, url),
            other => panic!("{url}: {other:?}"),
        }
    }
}

#[test]
fn split_hundred_files() {
    let files: Vec<String> = (0..100).map(|i| format!("f{i:03}.mid")).collect();
    let s = datasets::split_files(&files, [8.0, 1.0, 1.0], 7).unwrap();
    assert_eq!(s.sizes(), [80, 10, 10]);
    let mut all: Vec<String> = s.train.iter().chain(&s.valid).chain(&s.test).cloned().collect();
    all.sort();
    assert_eq!(all, files);

    // order of the input does not matter; the seed does
    let mut reversed = files.clone();
    reversed.reverse();
    assert_eq!(datasets::split_files(&reversed, [8.0, 1.0, 1.0], 7).unwrap(), s);
    assert_ne!(datasets::split_files(&files, [8.0, 1.0, 1.0], 8).unwrap().test, s.test);

    assert!(matches!(datasets::split_files(&files[..2], [8.0, 1.0, 1.0], 7), Err(Error::Size(_))));
}

#[test]
fn split_of_a_corpus_handle() {
    let dir = tempfile::tempdir().unwrap();
    mixed_corpus(dir.path());
    let m = local("mixed", "**/*.mid;**/*.musicxml;**/*.mxl;**/*.abc", "auto");
    let h = CorpusHandle::open(dir.path(), m, IterationMode::OnTheFly).unwrap();
    let s = datasets::split(&h, [3.0, 1.0, 1.0], 1).unwrap();
    assert_eq!(s.sizes(), [3, 1, 1]);
}

#[test]
fn stratified_sampling_draws_from_every_corpus() {
    let counts = datasets::stratified_indices(&[1, 1000], 3, 2000)
        .unwrap()
        .into_iter()
        .fold([0usize; 2], |mut acc, (g, _)| {
            acc[g] += 1;
            acc
        });
    // each corpus is picked about half of the time regardless of size
    assert!(counts[0] > 900 && counts[1] > 900, "{counts:?}");
    assert!(matches!(datasets::stratified_indices(&[3, 0], 1, 5), Err(Error::Config(_))));
}
