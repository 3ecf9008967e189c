use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use muspy::datasets::{self, CorpusHandle, IterationMode, Manifest};
use muspy::error::{Error, Result};
use muspy::formats::{self, FileFormat};
use muspy::harness::{self, ExperimentConfig};
use muspy::metrics::{self, EmptyBeat, MetricConfig};
use muspy::representations::{self as repr, EventConfig, OverlapPolicy, RollMode};
use muspy::stats::{self, LengthUnit};
use muspy::Music;

#[derive(Parser)]
#[command(name = "muspy", version, about = "Symbolic music conversion, analysis and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Write the result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert between MIDI, MusicXML, MXL, ABC and canonical JSON.
    Convert {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        from: Option<FileFormat>,
        #[arg(long)]
        to: Option<FileFormat>,
        /// Resample to this many ticks per quarter note.
        #[arg(long)]
        resolution: Option<u32>,
        /// Which tune of a multi-tune ABC file to convert.
        #[arg(long, default_value_t = 0)]
        tune: usize,
    },
    /// Length, initial-tempo or key histograms over a directory of songs.
    Stats {
        dir: PathBuf,
        #[arg(long, value_enum)]
        report: StatKind,
        #[arg(long, value_enum, default_value = "seconds")]
        unit: LengthUnit,
        /// Histogram bin width (length unit or qpm).
        #[arg(long)]
        bin_width: Option<f64>,
        /// Also write per-song records as CSV.
        #[arg(long)]
        records: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Evaluation metrics for a file, or for every song in a directory.
    Metrics {
        path: PathBuf,
        #[arg(long, default_value_t = 2)]
        threshold: usize,
        #[arg(long, value_enum, default_value = "onset")]
        empty_beat: EmptyBeatArg,
        /// Groove measure length in ticks.
        #[arg(long)]
        measure_len: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Encode a song into one of the four representations.
    Encode {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "event")]
        repr: Repr,
        /// Event vocabulary: default (388 tokens) or experiment (357 tokens).
        #[arg(long, value_enum, default_value = "default")]
        config: EventPreset,
        #[arg(long, value_enum, default_value = "error")]
        policy: PolicyArg,
        /// Piano-roll cells hold velocities instead of 0/1.
        #[arg(long)]
        velocity: bool,
        /// Length-prefixed binary tokens instead of text.
        #[arg(long)]
        binary: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Download, convert or split a manifest-described corpus.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train/test n-gram models across corpora and report log-perplexities.
    Experiment {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    /// Print the built-in manifest names.
    List {
        #[command(flatten)]
        output: Output,
    },
    Download {
        /// Built-in manifest name or manifest file.
        manifest: String,
        dir: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    Convert {
        manifest: String,
        dir: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    Split {
        manifest: String,
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "8,1,1")]
        ratios: Vec<f64>,
        #[arg(long, value_enum, default_value = "on-the-fly")]
        mode: IterationMode,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StatKind {
    Lengths,
    Tempos,
    Keys,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmptyBeatArg {
    Onset,
    Sounding,
}

#[derive(Clone, Copy, ValueEnum)]
enum Repr {
    Event,
    Pitch,
    Pianoroll,
    Note,
}

#[derive(Clone, Copy, ValueEnum)]
enum EventPreset {
    Default,
    Experiment,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Error,
    KeepHighest,
    SkipNew,
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| Error::Io { path: path.clone(), source: e }),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e }),
    }
}

fn emit_json(out: &Option<PathBuf>, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    emit(out, text.as_bytes())
}

fn read_one(path: &Path, format: Option<FileFormat>, tune: usize) -> Result<Music> {
    let mut all = formats::read_file(path, format)?;
    if tune >= all.len() {
        return Err(Error::InvalidArgument(format!(
            "{} holds {} song(s); --tune {tune} is out of range",
            path.display(),
            all.len()
        )));
    }
    Ok(all.swap_remove(tune))
}

/// Known music files under `dir`, sorted, each parsed in parallel.
fn read_dir(dir: &Path) -> Result<Vec<(String, Result<Vec<Music>>)>> {
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && FileFormat::from_path(e.path()).is_some())
        .map(|e| e.into_path())
        .collect();
    files.sort();
    Ok(files
        .par_iter()
        .map(|p| {
            let name = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            (name, formats::read_file(p, None))
        })
        .collect())
}

fn cmd_stats(
    dir: &Path,
    report: StatKind,
    unit: LengthUnit,
    bin_width: Option<f64>,
    records: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let mut songs = Vec::new();
    for (name, parsed) in read_dir(dir)? {
        match parsed {
            Ok(music) if music.len() == 1 => songs.push(stats::song_stats(&name, &music[0])),
            Ok(music) => songs.extend(
                music.iter().enumerate().map(|(i, m)| stats::song_stats(&format!("{name}#{i}"), m)),
            ),
            Err(e) => log::warn!("{name}: {e}"),
        }
    }
    if songs.is_empty() {
        return Err(Error::EmptyCorpus(dir.display().to_string()));
    }
    if let Some(path) = records {
        emit(&Some(path.clone()), stats::records_csv(&songs).as_bytes())?;
    }
    let text = match report {
        StatKind::Lengths => {
            let width = bin_width.unwrap_or(match unit {
                LengthUnit::Ticks => 10_000.0,
                LengthUnit::Quarters => 50.0,
                LengthUnit::Seconds => 30.0,
            });
            stats::length_histogram(&songs, unit, width).to_csv()
        }
        StatKind::Tempos => {
            let (h, none) = stats::tempo_histogram(&songs, bin_width.unwrap_or(10.0));
            format!("{}none,,{none}\n", h.to_csv())
        }
        StatKind::Keys => {
            let (keys, none) = stats::key_counts(&songs);
            let mut s = String::from("key,count\n");
            for (k, c) in keys {
                s.push_str(&format!("{k},{c}\n"));
            }
            s.push_str(&format!("none,{none}\n"));
            s
        }
    };
    emit(out, text.as_bytes())
}

fn cmd_metrics(path: &Path, config: &MetricConfig, out: &Option<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut reports = serde_json::Map::new();
        let entries = read_dir(path)?;
        if entries.is_empty() {
            return Err(Error::EmptyCorpus(path.display().to_string()));
        }
        for (name, parsed) in entries {
            match parsed {
                Ok(music) => {
                    for (i, m) in music.iter().enumerate() {
                        let key = if music.len() == 1 { name.clone() } else { format!("{name}#{i}") };
                        reports.insert(key, json!(metrics::evaluate(m, config)));
                    }
                }
                Err(e) => {
                    reports.insert(name, json!({ "error": e.kind(), "message": e.to_string() }));
                }
            }
        }
        emit_json(out, &reports)
    } else {
        let music = read_one(path, None, 0)?;
        emit(out, metrics::evaluate(&music, config).to_json().as_bytes())
    }
}

fn cmd_encode(
    path: &Path,
    repr: Repr,
    preset: EventPreset,
    policy: PolicyArg,
    velocity: bool,
    binary: bool,
    out: &Option<PathBuf>,
) -> Result<()> {
    let music = read_one(path, None, 0)?;
    let tokens = |seq: repr::EncodedSequence| -> Result<Vec<u8>> {
        if binary {
            repr::tokens_to_binary(&seq.tokens)
        } else {
            Ok(repr::tokens_to_text(&seq.tokens).into_bytes())
        }
    };
    let bytes = match repr {
        Repr::Event => {
            let config = match preset {
                EventPreset::Default => EventConfig::default(),
                EventPreset::Experiment => EventConfig::experiment(),
            };
            tokens(repr::encode_event(&music, &config))?
        }
        Repr::Pitch => {
            let policy = match policy {
                PolicyArg::Error => OverlapPolicy::Error,
                PolicyArg::KeepHighest => OverlapPolicy::KeepHighest,
                PolicyArg::SkipNew => OverlapPolicy::SkipNew,
            };
            tokens(repr::encode_pitch(&music, policy)?)?
        }
        Repr::Pianoroll => {
            let mode = if velocity { RollMode::Velocity } else { RollMode::Binary };
            repr::encode_pianoroll(&music, mode).to_csv().into_bytes()
        }
        Repr::Note => repr::encode_notes(&music).to_csv().into_bytes(),
    };
    emit(out, &bytes)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert { input, output, from, to, resolution, tune } => {
            let from = from.or_else(|| FileFormat::from_path(&input)).ok_or_else(|| {
                Error::InvalidArgument(format!("cannot infer the format of {}; pass --from", input.display()))
            })?;
            let to = to.or_else(|| FileFormat::from_path(&output)).ok_or_else(|| {
                Error::InvalidArgument(format!("cannot infer the format of {}; pass --to", output.display()))
            })?;
            let mut music = read_one(&input, Some(from), tune)?;
            if let Some(r) = resolution {
                music.adjust_resolution(r)?;
            }
            formats::write_file(&music, &output, Some(to))
        }
        Command::Stats { dir, report, unit, bin_width, records, output } => {
            cmd_stats(&dir, report, unit, bin_width, &records, &output.out)
        }
        Command::Metrics { path, threshold, empty_beat, measure_len, output } => {
            let config = MetricConfig {
                polyphony_threshold: threshold,
                empty_beat: match empty_beat {
                    EmptyBeatArg::Onset => EmptyBeat::Onset,
                    EmptyBeatArg::Sounding => EmptyBeat::Sounding,
                },
                measure_len,
                ..MetricConfig::default()
            };
            cmd_metrics(&path, &config, &output.out)
        }
        Command::Encode { path, repr, config, policy, velocity, binary, output } => {
            cmd_encode(&path, repr, config, policy, velocity, binary, &output.out)
        }
        Command::Dataset { action } => match action {
            DatasetAction::List { output } => {
                let names: Vec<_> = Manifest::builtin()
                    .into_iter()
                    .map(|m| json!({ "name": m.name, "title": m.title, "verified": m.verified }))
                    .collect();
                emit_json(&output.out, &names)
            }
            DatasetAction::Download { manifest, dir, output } => {
                let manifest = Manifest::resolve(&manifest)?;
                emit_json(&output.out, &datasets::download(&manifest, &dir)?)
            }
            DatasetAction::Convert { manifest, dir, output } => {
                let handle = CorpusHandle::open(dir, Manifest::resolve(&manifest)?, IterationMode::OnTheFly)?;
                emit_json(&output.out, &datasets::convert(&handle)?)
            }
            DatasetAction::Split { manifest, dir, seed, ratios, mode, output } => {
                let ratios: [f64; 3] = ratios.try_into().map_err(|r: Vec<f64>| {
                    Error::InvalidArgument(format!("expected 3 ratios, got {}", r.len()))
                })?;
                let handle = CorpusHandle::open(dir, Manifest::resolve(&manifest)?, mode)?;
                emit_json(&output.out, &datasets::split(&handle, ratios, seed)?)
            }
        },
        Command::Experiment { config, seed, report, output } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::Io { path: config.clone(), source: e })?;
            let mut cfg: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let result = harness::run_experiment(&cfg)?;
            if let Some(path) = report {
                emit_json(&Some(path), &result)?;
            }
            emit(&output.out, result.to_csv().as_bytes())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            if matches!(e, Error::InvalidArgument(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
