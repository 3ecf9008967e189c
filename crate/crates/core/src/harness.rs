//! Perplexity harness: token-window preparation, a pluggable next-token
//! model with an n-gram baseline, and cross-corpus evaluation.

use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{self, CorpusHandle, DatasetSplit, IterationMode, Manifest, SplitPart};
use crate::error::{Error, Result};
use crate::model::Music;
use crate::representations::{encode_event, EventConfig};

pub const WINDOW_LEN: usize = 64;
pub const STEPS_PER_QUARTER: u32 = 4;

/// Fixed-length token windows ready for training or evaluation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedCorpus {
    pub name: String,
    pub part: Option<SplitPart>,
    pub vocab_size: usize,
    pub windows: Vec<Vec<u32>>,
    /// Songs whose encoding was shorter than one window.
    pub short_songs: usize,
    /// Items that failed to load or encode.
    pub failed: usize,
}

impl PreparedCorpus {
    pub fn new(name: impl Into<String>, vocab_size: usize, windows: Vec<Vec<u32>>) -> Self {
        PreparedCorpus { name: name.into(), vocab_size, windows, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.windows.iter().map(Vec::len).sum()
    }
}

/// Resamples to four steps per quarter, encodes without velocity and with
/// end-of-sequence, and cuts non-overlapping 64-token windows; a trailing
/// short window is dropped.
pub fn encode_windows(music: &Music) -> Result<Vec<Vec<u32>>> {
    let mut m = music.clone();
    m.adjust_resolution(STEPS_PER_QUARTER)?;
    let seq = encode_event(&m, &EventConfig::experiment());
    Ok(seq.tokens.chunks_exact(WINDOW_LEN).map(<[u32]>::to_vec).collect())
}

pub fn prepare_music<I>(name: &str, part: Option<SplitPart>, music: I) -> PreparedCorpus
where
    I: IntoIterator<Item = Result<Music>>,
{
    let mut corpus = PreparedCorpus::new(name, EventConfig::experiment().vocab_size(), Vec::new());
    corpus.part = part;
    for item in music {
        match item.and_then(|m| encode_windows(&m)) {
            Ok(w) if w.is_empty() => corpus.short_songs += 1,
            Ok(w) => corpus.windows.extend(w),
            Err(e) => {
                log::warn!("{name}: {e}");
                corpus.failed += 1;
            }
        }
    }
    corpus
}

/// Windows of one split part of a corpus.
pub fn prepare(handle: &CorpusHandle, split: &DatasetSplit, part: SplitPart) -> PreparedCorpus {
    let items = split.part(part).iter().flat_map(|rel| match handle.load(rel) {
        Ok(v) => v.into_iter().map(Ok).collect::<Vec<_>>(),
        Err(e) => vec![Err(e)],
    });
    prepare_music(handle.name(), Some(part), items)
}

/// Next-token predictor. `probability` must describe a distribution over
/// `0..vocab_size` for every context.
pub trait SequenceModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Number of preceding tokens the model looks at.
    fn context_len(&self) -> usize;

    fn probability(&self, context: &[u32], token: u32) -> f64;

    fn distribution(&self, context: &[u32]) -> Vec<f64> {
        (0..self.vocab_size() as u32).map(|t| self.probability(context, t)).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct UniformModel {
    pub vocab_size: usize,
}

impl SequenceModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_len(&self) -> usize {
        0
    }

    fn probability(&self, _: &[u32], _: u32) -> f64 {
        1.0 / self.vocab_size as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// n of the n-gram; the context is the n - 1 previous tokens.
    pub order: usize,
    /// Additive smoothing constant.
    pub alpha: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { order: 3, alpha: 0.01 }
    }
}

/// Additively smoothed n-gram model:
/// `P(t | c) = (count(c, t) + α) / (count(c) + α·V)`.
///
/// Near window starts the context is whatever precedes the token, so
/// contexts shorter than `order - 1` are counted and queried as-is.
#[derive(Clone, Debug)]
pub struct NGramModel {
    spec: ModelSpec,
    vocab_size: usize,
    counts: HashMap<Vec<u32>, HashMap<u32, u64>>,
    totals: HashMap<Vec<u32>, u64>,
}

impl NGramModel {
    pub fn train(corpus: &PreparedCorpus, spec: ModelSpec) -> Result<Self> {
        if spec.order == 0 {
            return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
        }
        if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("smoothing constant {} must be positive", spec.alpha)));
        }
        if corpus.is_empty() {
            return Err(Error::Size(format!("corpus {} has no windows to train on", corpus.name)));
        }
        let mut model = NGramModel {
            spec,
            vocab_size: corpus.vocab_size,
            counts: HashMap::new(),
            totals: HashMap::new(),
        };
        let n = spec.order - 1;
        for window in &corpus.windows {
            for (i, &tok) in window.iter().enumerate() {
                if tok as usize >= model.vocab_size {
                    return Err(Error::Domain(format!("token {tok} outside vocabulary")));
                }
                let ctx = window[i.saturating_sub(n)..i].to_vec();
                *model.counts.entry(ctx.clone()).or_default().entry(tok).or_default() += 1;
                *model.totals.entry(ctx).or_default() += 1;
            }
        }
        Ok(model)
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }
}

impl SequenceModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_len(&self) -> usize {
        self.spec.order - 1
    }

    fn probability(&self, context: &[u32], token: u32) -> f64 {
        let ctx = &context[context.len().saturating_sub(self.context_len())..];
        let count = self.counts.get(ctx).and_then(|m| m.get(&token)).copied().unwrap_or(0);
        let total = self.totals.get(ctx).copied().unwrap_or(0);
        (count as f64 + self.spec.alpha) / (total as f64 + self.spec.alpha * self.vocab_size as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub perplexity: f64,
    /// Natural log of the perplexity (mean negative log-likelihood per token).
    pub log_perplexity: f64,
    pub tokens: usize,
    pub samples: usize,
    pub with_replacement: bool,
    pub seed: u64,
}

/// Samples `sample_count` windows (without replacement when the corpus is
/// large enough, with replacement otherwise) and scores every token given
/// its preceding in-window context.
pub fn perplexity(
    model: &dyn SequenceModel,
    corpus: &PreparedCorpus,
    sample_count: usize,
    seed: u64,
) -> Result<PerplexityReport> {
    if corpus.is_empty() {
        return Err(Error::Size(format!("corpus {} has no windows to evaluate", corpus.name)));
    }
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let with_replacement = sample_count > corpus.len();
    let picks: Vec<usize> = if with_replacement {
        (0..sample_count).map(|_| rng.gen_range(0..corpus.len())).collect()
    } else {
        index::sample(&mut rng, corpus.len(), sample_count).into_vec()
    };
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for &w in &picks {
        let window = &corpus.windows[w];
        for (i, &tok) in window.iter().enumerate() {
            let ctx = &window[i.saturating_sub(model.context_len())..i];
            let p = model.probability(ctx, tok);
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::ModelContract(format!(
                    "probability {p} for token {tok} in window {w} at position {i}"
                )));
            }
            nll -= p.ln();
            tokens += 1;
        }
    }
    if tokens == 0 {
        return Err(Error::Size("sampled windows hold no tokens".into()));
    }
    let log_perplexity = nll / tokens as f64;
    Ok(PerplexityReport {
        perplexity: log_perplexity.exp(),
        log_perplexity,
        tokens,
        samples: picks.len(),
        with_replacement,
        seed,
    })
}

#[derive(Clone, Debug)]
pub struct CorpusPair {
    pub name: String,
    pub train: PreparedCorpus,
    pub test: PreparedCorpus,
}

/// Log-perplexities of a model trained on each row corpus and tested on
/// each column corpus. Rows and columns share one order: ascending
/// diagonal value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CrossMatrix {
    pub fn get(&self, train: &str, test: &str) -> Option<f64> {
        let r = self.labels.iter().position(|l| l == train)?;
        let c = self.labels.iter().position(|l| l == test)?;
        Some(self.values[r][c])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("train\\test");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            out.push_str(l);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn cross_matrix(
    corpora: &[CorpusPair],
    spec: ModelSpec,
    sample_count: usize,
    seed: u64,
) -> Result<CrossMatrix> {
    if corpora.len() < 2 {
        return Err(Error::Size(format!("a cross matrix needs at least 2 corpora, got {}", corpora.len())));
    }
    let models = corpora
        .par_iter()
        .map(|c| NGramModel::train(&c.train, spec))
        .collect::<Result<Vec<_>>>()?;
    let values = models
        .par_iter()
        .map(|m| {
            corpora
                .iter()
                .map(|c| perplexity(m, &c.test, sample_count, seed).map(|r| r.log_perplexity))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..corpora.len()).collect();
    order.sort_by(|&a, &b| values[a][a].total_cmp(&values[b][b]).then(a.cmp(&b)));
    Ok(CrossMatrix {
        labels: order.iter().map(|&i| corpora[i].name.clone()).collect(),
        values: order.iter().map(|&r| order.iter().map(|&c| values[r][c]).collect()).collect(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum UnifiedMode {
    #[default]
    Concatenated,
    Stratified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Train,
    /// Evaluation always pools windows; stratification is train-only.
    Eval,
}

/// Combines several corpora. Concatenation (and any evaluation use) pools
/// all windows; stratified training draws `size` windows (default: the
/// pooled size) by picking a corpus uniformly, then a window uniformly.
pub fn unified_corpus(
    parts: &[PreparedCorpus],
    mode: UnifiedMode,
    purpose: Purpose,
    seed: u64,
    size: Option<usize>,
) -> Result<PreparedCorpus> {
    if parts.is_empty() {
        return Err(Error::Config("no corpora to combine".into()));
    }
    if let Some(p) = parts.iter().find(|p| p.is_empty()) {
        return Err(Error::Config(format!("corpus {} has no windows", p.name)));
    }
    let vocab_size = parts.iter().map(|p| p.vocab_size).max().unwrap_or(0);
    let windows = match (mode, purpose) {
        (UnifiedMode::Stratified, Purpose::Train) => {
            let sizes: Vec<usize> = parts.iter().map(PreparedCorpus::len).collect();
            let count = size.unwrap_or_else(|| sizes.iter().sum());
            datasets::stratified_indices(&sizes, seed, count)?
                .into_iter()
                .map(|(g, i)| parts[g].windows[i].clone())
                .collect()
        }
        _ => parts.iter().flat_map(|p| p.windows.iter().cloned()).collect(),
    };
    let mut unified = PreparedCorpus::new("unified", vocab_size, windows);
    unified.part = parts[0].part.filter(|p| parts.iter().all(|q| q.part == Some(*p)));
    Ok(unified)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// Label in the matrix; the manifest name otherwise.
    #[serde(default)]
    pub name: Option<String>,
    pub root: PathBuf,
    /// Built-in manifest name or manifest file path.
    pub manifest: String,
    #[serde(default = "default_mode")]
    pub mode: IterationMode,
}

fn default_mode() -> IterationMode {
    IterationMode::OnTheFly
}

/// Train on each corpus, test on every corpus, optionally add a row for a
/// model trained on the union of all training parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpora: Vec<CorpusSpec>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default = "default_samples")]
    pub sample_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ratios")]
    pub split_ratios: [f64; 3],
    #[serde(default)]
    pub unified: Option<UnifiedMode>,
}

fn default_samples() -> usize {
    1000
}

fn default_ratios() -> [f64; 3] {
    [8.0, 1.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub matrix: CrossMatrix,
    /// Log-perplexity of the unified model on each test corpus, in matrix
    /// label order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unified: Option<Vec<f64>>,
    pub windows: Vec<(String, usize, usize)>,
}

impl ExperimentReport {
    /// The matrix CSV, plus a `unified` row when present.
    pub fn to_csv(&self) -> String {
        let mut out = self.matrix.to_csv();
        if let Some(row) = &self.unified {
            out.push_str("unified");
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.sample_count == 0 {
        return Err(Error::Config("sample_count must be at least 1".into()));
    }
    let pairs = config
        .corpora
        .iter()
        .map(|spec| {
            let manifest = Manifest::resolve(&spec.manifest)?;
            let handle = CorpusHandle::open(&spec.root, manifest, spec.mode)?;
            let split = datasets::split(&handle, config.split_ratios, config.seed)?;
            let name = spec.name.clone().unwrap_or_else(|| handle.name().to_string());
            let mut train = prepare(&handle, &split, SplitPart::Train);
            let mut test = prepare(&handle, &split, SplitPart::Test);
            train.name.clone_from(&name);
            test.name.clone_from(&name);
            Ok(CorpusPair { name, train, test })
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = cross_matrix(&pairs, config.model, config.sample_count, config.seed)?;
    let unified = match config.unified {
        None => None,
        Some(mode) => {
            let trains: Vec<_> = pairs.iter().map(|p| p.train.clone()).collect();
            let corpus = unified_corpus(&trains, mode, Purpose::Train, config.seed, None)?;
            let model = NGramModel::train(&corpus, config.model)?;
            Some(
                matrix
                    .labels
                    .iter()
                    .map(|label| {
                        let pair = pairs.iter().find(|p| &p.name == label).expect("label from pairs");
                        perplexity(&model, &pair.test, config.sample_count, config.seed)
                            .map(|r| r.log_perplexity)
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };
    Ok(ExperimentReport {
        config: config.clone(),
        matrix,
        unified,
        windows: pairs.iter().map(|p| (p.name.clone(), p.train.len(), p.test.len())).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Note, Track};

    fn corpus(windows: Vec<Vec<u32>>) -> PreparedCorpus {
        PreparedCorpus::new("t", 357, windows)
    }

    fn song(notes: usize) -> Music {
        let mut m = Music::new(4);
        m.tracks.push(Track::new(0, false).with_notes(
            (0..notes).map(|i| Note::new(i as u64, 60, 1, 64)).collect(),
        ));
        m
    }

    #[test]
    fn window_counts() {
        // n notes back to back encode to on, shift, off per note plus EOS
        let w = encode_windows(&song(43)).unwrap();
        assert_eq!(w.len(), 2); // 130 tokens
        assert!(encode_windows(&song(20)).unwrap().is_empty()); // 61 tokens
        let c = prepare_music("s", None, vec![Ok(song(43)), Ok(song(20))]);
        assert_eq!((c.len(), c.short_songs), (2, 1));
        assert!(c.windows.iter().flatten().all(|&t| t < 357));
    }

    #[test]
    fn unigram_smoothing_formula() {
        let c = corpus(vec![vec![7; 64]]);
        let alpha = 0.5;
        let m = NGramModel::train(&c, ModelSpec { order: 1, alpha }).unwrap();
        let expected = (64.0 + alpha) / (64.0 + alpha * 357.0);
        assert!((m.probability(&[], 7) - expected).abs() < 1e-12);
        let sum: f64 = m.distribution(&[]).iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn distributions_sum_to_one_for_any_context() {
        let c = corpus(vec![(0..64).map(|i| i % 5).collect()]);
        let m = NGramModel::train(&c, ModelSpec { order: 3, alpha: 0.1 }).unwrap();
        for ctx in [&[][..], &[1], &[1, 2], &[3, 4], &[300, 301]] {
            let s: f64 = m.distribution(ctx).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_and_analytic_perplexities() {
        let c = corpus((0..10).map(|i| vec![i; 64]).collect());
        let r = perplexity(&UniformModel { vocab_size: 357 }, &c, 5, 1).unwrap();
        assert!((r.perplexity - 357.0).abs() < 1e-6);
        let two = PreparedCorpus::new("two", 2, vec![vec![0, 1, 1, 0]]);
        let r = perplexity(&UniformModel { vocab_size: 2 }, &two, 1, 0).unwrap();
        assert!((r.perplexity - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_modes() {
        let c = corpus((0..3).map(|i| vec![i; 64]).collect());
        let u = UniformModel { vocab_size: 357 };
        assert!(!perplexity(&u, &c, 3, 0).unwrap().with_replacement);
        let r = perplexity(&u, &c, 10, 0).unwrap();
        assert!(r.with_replacement);
        assert_eq!(r.samples, 10);
        assert!(perplexity(&u, &corpus(vec![]), 1, 0).is_err());
    }

    #[test]
    fn zero_probability_breaks_contract() {
        struct Broken;
        impl SequenceModel for Broken {
            fn vocab_size(&self) -> usize {
                357
            }
            fn context_len(&self) -> usize {
                0
            }
            fn probability(&self, _: &[u32], _: u32) -> f64 {
                0.0
            }
        }
        assert!(matches!(
            perplexity(&Broken, &corpus(vec![vec![1; 64]]), 1, 0),
            Err(Error::ModelContract(_))
        ));
    }

    #[test]
    fn training_is_deterministic_and_requires_data() {
        let c = corpus(vec![(0..64).map(|i| (i * 7) % 13).collect()]);
        let spec = ModelSpec { order: 2, alpha: 0.1 };
        let a = NGramModel::train(&c, spec).unwrap();
        let b = NGramModel::train(&c, spec).unwrap();
        assert_eq!(a.distribution(&[3]), b.distribution(&[3]));
        assert!(matches!(NGramModel::train(&corpus(vec![]), spec), Err(Error::Size(_))));
        assert!(NGramModel::train(&c, ModelSpec { order: 0, alpha: 0.1 }).is_err());
    }

    #[test]
    fn unified_modes() {
        let a = PreparedCorpus::new("a", 357, vec![vec![1; 64]; 3]);
        let b = PreparedCorpus::new("b", 357, vec![vec![2; 64]; 5]);
        let parts = [a, b];
        let cat = unified_corpus(&parts, UnifiedMode::Concatenated, Purpose::Train, 0, None).unwrap();
        assert_eq!(cat.len(), 8);
        let eval_s = unified_corpus(&parts, UnifiedMode::Stratified, Purpose::Eval, 0, None).unwrap();
        let eval_c = unified_corpus(&parts, UnifiedMode::Concatenated, Purpose::Eval, 0, None).unwrap();
        assert_eq!(eval_s.windows, eval_c.windows);
        let strat = unified_corpus(&parts, UnifiedMode::Stratified, Purpose::Train, 0, Some(20)).unwrap();
        assert_eq!(strat.len(), 20);
        let empty = [PreparedCorpus::new("e", 357, vec![])];
        assert!(matches!(
            unified_corpus(&empty, UnifiedMode::Concatenated, Purpose::Train, 0, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cross_matrix_needs_two() {
        let c = corpus(vec![vec![1; 64]]);
        let pair = CorpusPair { name: "a".into(), train: c.clone(), test: c };
        assert!(matches!(
            cross_matrix(&[pair], ModelSpec::default(), 1, 0),
            Err(Error::Size(_))
        ));
    }
}
