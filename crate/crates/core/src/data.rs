//! Preference corpus data model, JSONL ingestion, worker-intersection
//! filtering and per-worker stratified splitting.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Dense feature representation of one (prompt, response) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One observed comparison. `chosen` is always the preferred response.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub prompt_id: String,
    pub worker_id: String,
    pub chosen: FeatureVector,
    pub rejected: FeatureVector,
    pub raw_prompt_text: Option<String>,
    pub raw_chosen_text: Option<String>,
    pub raw_rejected_text: Option<String>,
}

impl PreferenceRecord {
    pub fn new(
        prompt_id: impl Into<String>,
        worker_id: impl Into<String>,
        chosen: FeatureVector,
        rejected: FeatureVector,
    ) -> Result<Self> {
        if chosen.len() != rejected.len() {
            return Err(Error::dim("preference record", chosen.len(), rejected.len()));
        }
        Ok(Self {
            prompt_id: prompt_id.into(),
            worker_id: worker_id.into(),
            chosen,
            rejected,
            raw_prompt_text: None,
            raw_chosen_text: None,
            raw_rejected_text: None,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.chosen.len()
    }

    /// `chosen - rejected`
    pub fn difference(&self) -> Vec<f64> {
        crate::linalg::sub(self.chosen.as_slice(), self.rejected.as_slice())
    }

    /// The same comparison with the preference reversed.
    pub fn flipped(&self) -> Self {
        Self {
            chosen: self.rejected.clone(),
            rejected: self.chosen.clone(),
            raw_chosen_text: self.raw_rejected_text.clone(),
            raw_rejected_text: self.raw_chosen_text.clone(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerDataset {
    worker_id: String,
    records: Vec<PreferenceRecord>,
}

impl WorkerDataset {
    pub fn new(worker_id: impl Into<String>, records: Vec<PreferenceRecord>) -> Result<Self> {
        let worker_id = worker_id.into();
        if records.is_empty() {
            return Err(Error::EmptyRecords);
        }
        if let Some(r) = records.iter().find(|r| r.worker_id != worker_id) {
            return Err(Error::InvalidConfig(format!(
                "record of worker {} placed in dataset of worker {worker_id}",
                r.worker_id
            )));
        }
        Ok(Self { worker_id, records })
    }

    pub fn worker_id(&self) -> &str {
        &self.worker_id
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    #[default]
    Unsplit,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::Unsplit => "unsplit",
        }
    }
}

/// All workers' datasets with a shared feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    workers: Vec<WorkerDataset>,
    feature_dim: usize,
    pub split_tag: SplitTag,
    /// Identifies the generator that produced this corpus, if any.
    pub provenance: Option<String>,
}

impl Corpus {
    pub fn new(workers: Vec<WorkerDataset>, feature_dim: usize, split_tag: SplitTag) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for w in &workers {
            if !seen.insert(w.worker_id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate worker id {}", w.worker_id)));
            }
            for r in &w.records {
                if r.chosen.len() != feature_dim || r.rejected.len() != feature_dim {
                    return Err(Error::dim(
                        format!("record {} of worker {}", r.prompt_id, w.worker_id),
                        feature_dim,
                        r.chosen.len().max(r.rejected.len()),
                    ));
                }
            }
        }
        Ok(Self {
            workers,
            feature_dim,
            split_tag,
            provenance: None,
        })
    }

    /// Groups records by worker in order of first appearance, keeping the
    /// relative order of each worker's records.
    pub fn from_records(
        records: Vec<PreferenceRecord>,
        feature_dim: usize,
        split_tag: SplitTag,
    ) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut grouped: HashMap<String, Vec<PreferenceRecord>> = HashMap::new();
        for r in records {
            let entry = grouped.entry(r.worker_id.clone()).or_insert_with(|| {
                order.push(r.worker_id.clone());
                Vec::new()
            });
            entry.push(r);
        }
        let workers = order
            .into_iter()
            .map(|id| {
                let recs = grouped.remove(&id).unwrap_or_default();
                WorkerDataset::new(id, recs)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(workers, feature_dim, split_tag)
    }

    pub fn with_provenance(mut self, provenance: Option<String>) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn workers(&self) -> &[WorkerDataset] {
        &self.workers
    }

    pub fn worker(&self, id: &str) -> Option<&WorkerDataset> {
        self.workers.iter().find(|w| w.worker_id == id)
    }

    pub fn worker_ids(&self) -> Vec<&str> {
        self.workers.iter().map(|w| w.worker_id.as_str()).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn n_records(&self) -> usize {
        self.workers.iter().map(WorkerDataset::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    /// Records in worker order, then record order.
    pub fn records(&self) -> impl Iterator<Item = &PreferenceRecord> {
        self.workers.iter().flat_map(|w| w.records.iter())
    }
}

// ---------------------------------------------------------------------------
// Featurizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self { dim: 64, seed: 0 }
    }
}

const PROMPT_WEIGHT: f64 = 0.5;

/// Signed hashed bag of character 1..=3-grams of the response, plus
/// down-weighted n-grams of the prompt in a separate hash namespace.
/// The result is L2-normalized.
pub fn featurize_text(prompt: &str, response: &str, config: &FeaturizerConfig) -> Result<FeatureVector> {
    if config.dim == 0 {
        return Err(Error::InvalidConfig("featurizer dim must be at least 1".into()));
    }
    let mut v = vec![0.0; config.dim];
    let offset = seed::derive(config.seed, 0x6665_6174);
    accumulate_ngrams(&mut v, response, b'r', 1.0, offset);
    accumulate_ngrams(&mut v, prompt, b'p', PROMPT_WEIGHT, offset);

    let n = crate::linalg::norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        // empty strings (or exact cancellation): fall back to a fixed basis vector
        let idx = (offset % config.dim as u64) as usize;
        v[idx] = 1.0;
    }
    FeatureVector::new(v)
}

fn accumulate_ngrams(v: &mut [f64], text: &str, namespace: u8, weight: f64, offset: u64) {
    let chars: Vec<char> = std::iter::once('\u{2}')
        .chain(text.chars().flat_map(char::to_lowercase))
        .chain(std::iter::once('\u{3}'))
        .collect();
    let mut buf = [0u8; 1 + 3 * 4];
    for n in 1..=3usize {
        for window in chars.windows(n) {
            buf[0] = namespace;
            let mut len = 1;
            for c in window {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = seed::fnv1a(&buf[..len], offset);
            let idx = (h % v.len() as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[idx] += sign * weight;
        }
    }
}

// ---------------------------------------------------------------------------
// JSONL ingestion and serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSide {
    Text(String),
    Features(Vec<f64>),
    Summary { text: String },
}

/// Post metadata in the comparisons layout (`info.id`, `info.post`).
#[derive(Debug, Deserialize)]
struct RawInfo {
    id: Option<String>,
    post: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawLine {
    prompt_id: Option<String>,
    info: Option<RawInfo>,
    #[serde(alias = "worker")]
    worker_id: Option<String>,
    prompt: Option<String>,
    chosen: Option<RawSide>,
    rejected: Option<RawSide>,
    /// Label-index encoding: the preferred response is `responses[choice]`.
    #[serde(alias = "summaries")]
    responses: Option<Vec<RawSide>>,
    choice: Option<usize>,
    chosen_text: Option<String>,
    rejected_text: Option<String>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn side_to_features(
    side: RawSide,
    prompt: &str,
    config: &FeaturizerConfig,
    line: usize,
) -> Result<(FeatureVector, Option<String>)> {
    match side {
        RawSide::Features(v) => {
            let fv = FeatureVector::new(v).map_err(|e| parse_err(line, e.to_string()))?;
            Ok((fv, None))
        }
        RawSide::Text(t) | RawSide::Summary { text: t } => {
            let fv = featurize_text(prompt, &t, config)?;
            Ok((fv, Some(t)))
        }
    }
}

fn parse_line(text: &str, line: usize, config: &FeaturizerConfig) -> Result<PreferenceRecord> {
    let raw: RawLine = serde_json::from_str(text).map_err(|e| parse_err(line, e.to_string()))?;
    let worker_id = raw
        .worker_id
        .ok_or_else(|| parse_err(line, "missing worker_id"))?;
    let (info_id, info_post) = match raw.info {
        Some(info) => (info.id, info.post),
        None => (None, None),
    };
    let prompt_id = raw
        .prompt_id
        .or(info_id)
        .unwrap_or_else(|| format!("line-{line}"));
    let prompt_text = raw.prompt.or(info_post);
    let prompt = prompt_text.clone().unwrap_or_default();

    let (chosen, rejected) = match (raw.chosen, raw.rejected, raw.responses, raw.choice) {
        (Some(c), Some(r), _, _) => (c, r),
        (None, None, Some(mut responses), Some(choice)) => {
            if responses.len() != 2 || choice > 1 {
                return Err(parse_err(line, "label-index records need two responses and choice 0 or 1"));
            }
            let second = responses.pop().expect("two responses");
            let first = responses.pop().expect("two responses");
            if choice == 0 {
                (first, second)
            } else {
                (second, first)
            }
        }
        _ => return Err(parse_err(line, "expected chosen/rejected or responses/choice fields")),
    };

    let (chosen, chosen_text) = side_to_features(chosen, &prompt, config, line)?;
    let (rejected, rejected_text) = side_to_features(rejected, &prompt, config, line)?;
    if chosen.len() != rejected.len() {
        return Err(Error::dim(format!("line {line}"), chosen.len(), rejected.len()));
    }
    let mut record = PreferenceRecord::new(prompt_id, worker_id, chosen, rejected)?;
    record.raw_prompt_text = prompt_text;
    record.raw_chosen_text = chosen_text.or(raw.chosen_text);
    record.raw_rejected_text = rejected_text.or(raw.rejected_text);
    Ok(record)
}

/// Parses preference JSONL from any reader. Blank lines are skipped.
pub fn ingest_reader<R: BufRead>(reader: R, config: &FeaturizerConfig) -> Result<Corpus> {
    let mut records = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line, lineno, config)?;
        match dim {
            None => dim = Some(record.feature_dim()),
            Some(d) if d != record.feature_dim() => {
                return Err(Error::dim(format!("line {lineno}"), d, record.feature_dim()));
            }
            Some(_) => {}
        }
        records.push(record);
    }
    let dim = dim.ok_or(Error::EmptyCorpus)?;
    Corpus::from_records(records, dim, SplitTag::Unsplit)
}

pub fn ingest_jsonl(path: impl AsRef<Path>, config: &FeaturizerConfig) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub feature_dim: usize,
    pub split_tag: SplitTag,
    pub n_workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Serialize)]
struct OutLine<'a> {
    prompt_id: &'a str,
    worker_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<&'a str>,
    chosen: &'a [f64],
    rejected: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    chosen_text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rejected_text: Option<&'a str>,
}

/// Sidecar header path: `dir/name.jsonl` becomes `dir/name.header.json`.
pub fn header_path(jsonl: &Path) -> PathBuf {
    let stem = jsonl
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    jsonl.with_file_name(format!("{stem}.header.json"))
}

pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for r in corpus.records() {
        let line = OutLine {
            prompt_id: &r.prompt_id,
            worker_id: &r.worker_id,
            prompt: r.raw_prompt_text.as_deref(),
            chosen: r.chosen.as_slice(),
            rejected: r.rejected.as_slice(),
            chosen_text: r.raw_chosen_text.as_deref(),
            rejected_text: r.raw_rejected_text.as_deref(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io("<corpus writer>", e))?;
    }
    Ok(())
}

pub fn corpus_header(corpus: &Corpus) -> CorpusHeader {
    CorpusHeader {
        feature_dim: corpus.feature_dim,
        split_tag: corpus.split_tag,
        n_workers: corpus.n_workers(),
        provenance: corpus.provenance.clone(),
    }
}

/// Writes the records as JSONL and the header as a sidecar JSON file.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus_to(corpus, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))?;

    let hp = header_path(path);
    let header = serde_json::to_string_pretty(&corpus_header(corpus))?;
    std::fs::write(&hp, header + "\n").map_err(|e| Error::io(&hp, e))?;
    Ok(())
}

/// Reads a corpus written by [`write_corpus`]. The sidecar header is
/// optional; when present its dimension and worker count are checked.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut corpus = ingest_jsonl(path, &FeaturizerConfig::default())?;
    let hp = header_path(path);
    if hp.exists() {
        let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
        let header: CorpusHeader = serde_json::from_str(&text)?;
        if header.feature_dim != corpus.feature_dim {
            return Err(Error::dim("corpus header", header.feature_dim, corpus.feature_dim));
        }
        if header.n_workers != corpus.n_workers() {
            return Err(Error::InvalidConfig(format!(
                "header lists {} workers, file has {}",
                header.n_workers,
                corpus.n_workers()
            )));
        }
        corpus.split_tag = header.split_tag;
        corpus.provenance = header.provenance;
    }
    Ok(corpus)
}

// ---------------------------------------------------------------------------
// Filtering and splitting
// ---------------------------------------------------------------------------

/// Before/after counts of the worker-intersection filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub train_examples: usize,
    pub test_examples: usize,
    pub train_workers: usize,
    pub test_workers: usize,
    pub filtered_train_examples: usize,
    pub filtered_test_examples: usize,
    pub final_workers: usize,
}

fn keep_workers(corpus: &Corpus, keep: &BTreeSet<&str>) -> Corpus {
    Corpus {
        workers: corpus
            .workers
            .iter()
            .filter(|w| keep.contains(w.worker_id.as_str()))
            .cloned()
            .collect(),
        feature_dim: corpus.feature_dim,
        split_tag: corpus.split_tag,
        provenance: corpus.provenance.clone(),
    }
}

/// Restricts both corpora to the workers present in both.
pub fn filter_common_workers(train: &Corpus, test: &Corpus) -> Result<(Corpus, Corpus, IngestReport)> {
    if train.feature_dim != test.feature_dim {
        return Err(Error::dim("train/test feature_dim", train.feature_dim, test.feature_dim));
    }
    let train_ids: BTreeSet<&str> = train.workers.iter().map(|w| w.worker_id.as_str()).collect();
    let common: BTreeSet<&str> = test
        .workers
        .iter()
        .map(|w| w.worker_id.as_str())
        .filter(|id| train_ids.contains(id))
        .collect();
    if common.is_empty() {
        return Err(Error::NoSharedWorkers);
    }
    let ftrain = keep_workers(train, &common);
    let ftest = keep_workers(test, &common);
    let report = IngestReport {
        train_examples: train.n_records(),
        test_examples: test.n_records(),
        train_workers: train.n_workers(),
        test_workers: test.n_workers(),
        filtered_train_examples: ftrain.n_records(),
        filtered_test_examples: ftest.n_records(),
        final_workers: common.len(),
    };
    Ok((ftrain, ftest, report))
}

/// Per-worker stratified split. Each worker keeps `round(n * fraction)`
/// records for training, clamped so both sides get at least one. Records
/// keep their original relative order on both sides.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut train = Vec::with_capacity(corpus.workers.len());
    let mut test = Vec::with_capacity(corpus.workers.len());
    for w in &corpus.workers {
        let n = w.records.len();
        if n < 2 {
            return Err(Error::Stratification {
                worker: w.worker_id.clone(),
                count: n,
            });
        }
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = seed::rng(seed, seed::hash_str(&w.worker_id));
        idx.shuffle(&mut rng);
        let mut train_idx = idx[..n_train].to_vec();
        let mut test_idx = idx[n_train..].to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        let pick = |ix: &[usize]| ix.iter().map(|&i| w.records[i].clone()).collect::<Vec<_>>();
        train.push(WorkerDataset::new(w.worker_id.clone(), pick(&train_idx))?);
        test.push(WorkerDataset::new(w.worker_id.clone(), pick(&test_idx))?);
    }
    let mk = |workers, tag| Corpus {
        workers,
        feature_dim: corpus.feature_dim,
        split_tag: tag,
        provenance: corpus.provenance.clone(),
    };
    Ok((mk(train, SplitTag::Train), mk(test, SplitTag::Test)))
}
