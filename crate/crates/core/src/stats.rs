//! Dataset diagnostics: caption lengths per source, common-word tables per
//! source, and the image/caption cosine-similarity distribution.
//!
//! Length and word statistics are accumulated per partition and merged, so
//! results never depend on how the corpus was split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DatasetError, EnhancedEntry};
use crate::image::{load_image, ImageError, ImageInput};
use crate::shear::{count_tokens, TokenizerSpec};

pub const RAW_SOURCE: &str = "raw";
pub const LENGTH_BUCKET_WIDTH: usize = 5;
pub const LENGTH_RANGE_MAX: usize = 200;
pub const SIMILARITY_BUCKET_WIDTH: f64 = 0.02;

const LENGTH_BUCKETS: usize = LENGTH_RANGE_MAX / LENGTH_BUCKET_WIDTH;
const SIMILARITY_BUCKETS: usize = 100;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Caption texts of an entry tagged with their source. Empty-slot markers
/// are skipped.
fn sources_of(entry: &EnhancedEntry) -> impl Iterator<Item = (&str, &str, Option<usize>)> {
    std::iter::once((RAW_SOURCE, entry.caption.as_str(), None)).chain(
        entry
            .generated
            .iter()
            .filter(|g| !g.is_placeholder())
            .map(|g| (g.model_id.as_str(), g.text.as_str(), Some(g.raw_token_count))),
    )
}

/// Source-keyed accumulator that remembers first-appearance order.
#[derive(Debug, Clone, Default)]
struct BySource<T> {
    order: Vec<String>,
    items: HashMap<String, T>,
}

impl<T: Default> BySource<T> {
    fn get_mut(&mut self, source: &str) -> &mut T {
        if !self.items.contains_key(source) {
            self.order.push(source.to_string());
        }
        self.items.entry(source.to_string()).or_default()
    }

    fn merge_with(mut self, other: Self, mut f: impl FnMut(&mut T, T)) -> Self {
        let mut other_items = other.items;
        for key in other.order {
            let value = other_items.remove(&key).expect("ordered key present");
            f(self.get_mut(&key), value);
        }
        self
    }

    fn into_ordered(mut self) -> Vec<(String, T)> {
        self.order
            .into_iter()
            .map(|k| {
                let v = self.items.remove(&k).expect("ordered key present");
                (k, v)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct LengthAcc {
    count: u64,
    token_sum: u64,
    raw_token_sum: u64,
    has_raw_counts: bool,
    min: usize,
    max: usize,
    histogram: Vec<u64>,
}

impl Default for LengthAcc {
    fn default() -> Self {
        Self {
            count: 0,
            token_sum: 0,
            raw_token_sum: 0,
            has_raw_counts: false,
            min: usize::MAX,
            max: 0,
            histogram: vec![0; LENGTH_BUCKETS],
        }
    }
}

impl LengthAcc {
    fn push(&mut self, tokens: usize, raw_tokens: Option<usize>) {
        self.count += 1;
        self.token_sum += tokens as u64;
        if let Some(r) = raw_tokens {
            self.raw_token_sum += r as u64;
            self.has_raw_counts = true;
        }
        self.min = self.min.min(tokens);
        self.max = self.max.max(tokens);
        // values at or past the range end land in the last bucket
        let bucket = (tokens / LENGTH_BUCKET_WIDTH).min(LENGTH_BUCKETS - 1);
        self.histogram[bucket] += 1;
    }

    fn merge(&mut self, other: LengthAcc) {
        self.count += other.count;
        self.token_sum += other.token_sum;
        self.raw_token_sum += other.raw_token_sum;
        self.has_raw_counts |= other.has_raw_counts;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        for (a, b) in self.histogram.iter_mut().zip(other.histogram) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceLengthStats {
    pub source: String,
    pub count: u64,
    pub mean_tokens: f64,
    /// Mean token count before shearing (generated sources only).
    pub pre_shear_mean_tokens: Option<f64>,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub bucket_width: usize,
    pub range_max: usize,
    pub sources: Vec<SourceLengthStats>,
}

impl LengthStats {
    pub fn source(&self, name: &str) -> Option<&SourceLengthStats> {
        self.sources.iter().find(|s| s.source == name)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LengthAccumulator {
    spec: TokenizerSpec,
    by_source: BySource<LengthAcc>,
}

impl LengthAccumulator {
    pub fn new(spec: TokenizerSpec) -> Self {
        Self {
            spec,
            by_source: BySource::default(),
        }
    }

    pub fn add(&mut self, entry: &EnhancedEntry) {
        for (source, text, raw) in sources_of(entry) {
            let n = count_tokens(text, &self.spec);
            self.by_source.get_mut(source).push(n, raw);
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            spec: self.spec,
            by_source: self.by_source.merge_with(other.by_source, LengthAcc::merge),
        }
    }

    pub fn finish(self) -> Result<LengthStats, StatsError> {
        let sources: Vec<_> = self
            .by_source
            .into_ordered()
            .into_iter()
            .filter(|(_, acc)| acc.count > 0)
            .map(|(source, acc)| SourceLengthStats {
                source,
                count: acc.count,
                mean_tokens: acc.token_sum as f64 / acc.count as f64,
                pre_shear_mean_tokens: acc
                    .has_raw_counts
                    .then(|| acc.raw_token_sum as f64 / acc.count as f64),
                min_tokens: acc.min,
                max_tokens: acc.max,
                histogram: acc.histogram,
            })
            .collect();
        if sources.is_empty() {
            return Err(StatsError::EmptyCorpus);
        }
        Ok(LengthStats {
            bucket_width: LENGTH_BUCKET_WIDTH,
            range_max: LENGTH_RANGE_MAX,
            sources,
        })
    }
}

pub fn length_stats(entries: &[EnhancedEntry], spec: TokenizerSpec) -> Result<LengthStats, StatsError> {
    length_stats_partitioned(entries, spec, 1)
}

/// Same result as [`length_stats`], computed over `partitions` contiguous
/// chunks in parallel.
pub fn length_stats_partitioned(
    entries: &[EnhancedEntry],
    spec: TokenizerSpec,
    partitions: usize,
) -> Result<LengthStats, StatsError> {
    let chunk = entries.len().div_ceil(partitions.max(1)).max(1);
    entries
        .par_chunks(chunk)
        .map(|part| {
            let mut acc = LengthAccumulator::new(spec);
            part.iter().for_each(|e| acc.add(e));
            acc
        })
        .reduce(|| LengthAccumulator::new(spec), LengthAccumulator::merge)
        .finish()
}

/// Function words left out of frequency tables by default.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "of", "off", "on",
    "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves", "s", "t", "there's", "it's", "can't", "don't",
];

#[derive(Debug, Clone)]
pub struct WordFilter {
    stopwords: HashSet<String>,
    /// When set, only these words are counted (e.g. a noun lexicon).
    lexicon: Option<HashSet<String>>,
    spec: TokenizerSpec,
}

impl Default for WordFilter {
    fn default() -> Self {
        Self::new(DEFAULT_STOPWORDS.iter().map(|s| s.to_string()), None)
    }
}

impl WordFilter {
    pub fn new(stopwords: impl IntoIterator<Item = String>, lexicon: Option<HashSet<String>>) -> Self {
        Self {
            stopwords: stopwords.into_iter().map(|w| w.to_lowercase()).collect(),
            lexicon: lexicon.map(|l| l.into_iter().map(|w| w.to_lowercase()).collect()),
            spec: TokenizerSpec {
                lowercase: true,
                ..TokenizerSpec::default()
            },
        }
    }

    pub fn words<'a>(&'a self, text: &str) -> impl Iterator<Item = String> + 'a {
        self.spec.tokenize(text).into_iter().filter(move |w| {
            w.chars().any(char::is_alphabetic)
                && !self.stopwords.contains(w)
                && self.lexicon.as_ref().is_none_or(|l| l.contains(w))
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct WordAccumulator {
    by_source: BySource<HashMap<String, u64>>,
}

impl WordAccumulator {
    pub fn add(&mut self, entry: &EnhancedEntry, filter: &WordFilter) {
        for (source, text, _) in sources_of(entry) {
            let counts = self.by_source.get_mut(source);
            for w in filter.words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            by_source: self.by_source.merge_with(other.by_source, |a, b| {
                for (w, n) in b {
                    *a.entry(w).or_default() += n;
                }
            }),
        }
    }

    pub fn finish(self, top_n: usize) -> WordFrequencyTable {
        let sources = self
            .by_source
            .into_ordered()
            .into_iter()
            .map(|(source, counts)| {
                let mut words: Vec<(String, u64)> = counts.into_iter().collect();
                words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                words.truncate(top_n);
                SourceWordFrequency { source, words }
            })
            .collect();
        WordFrequencyTable { sources }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceWordFrequency {
    pub source: String,
    /// Descending by count, ties broken lexicographically.
    pub words: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordFrequencyTable {
    pub sources: Vec<SourceWordFrequency>,
}

impl WordFrequencyTable {
    pub fn source(&self, name: &str) -> Option<&SourceWordFrequency> {
        self.sources.iter().find(|s| s.source == name)
    }
}

pub fn word_frequency(entries: &[EnhancedEntry], top_n: usize, filter: &WordFilter) -> WordFrequencyTable {
    word_frequency_partitioned(entries, top_n, filter, 1)
}

pub fn word_frequency_partitioned(
    entries: &[EnhancedEntry],
    top_n: usize,
    filter: &WordFilter,
    partitions: usize,
) -> WordFrequencyTable {
    let chunk = entries.len().div_ceil(partitions.max(1)).max(1);
    entries
        .par_chunks(chunk)
        .map(|part| {
            let mut acc = WordAccumulator::default();
            part.iter().for_each(|e| acc.add(e, filter));
            acc
        })
        .reduce(WordAccumulator::default, WordAccumulator::merge)
        .finish(top_n.max(1))
}

fn csv_name(source: &str) -> String {
    let safe: String = source
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("wordfreq_{safe}.csv")
}

/// Writes one `word,count` CSV per source into `dir`.
pub fn export_wordcloud_counts(table: &WordFrequencyTable, dir: &Path) -> Result<Vec<PathBuf>, StatsError> {
    if table.sources.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    let mut written = Vec::new();
    for src in &table.sources {
        let path = dir.join(csv_name(&src.source));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["word", "count"])?;
        for (word, count) in &src.words {
            w.write_record([word.as_str(), &count.to_string()])?;
        }
        w.flush().map_err(|e| DatasetError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn import_wordcloud_counts(path: &Path) -> Result<Vec<(String, u64)>, StatsError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<(String, u64)>()
        .map(|row| row.map_err(StatsError::from))
        .collect()
}

/// Text/image embedder behind the similarity analysis.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    /// POSTs `{"inputs": [...]}` and expects either a bare array of vectors
    /// or `{"embeddings": [...]}`. Images are sent as data URIs.
    HttpService {
        url: String,
        dimension: usize,
        client: reqwest::Client,
    },
    /// Seeded hashing of tokens / image digests onto fixed-dimension vectors.
    DeterministicHasher { dimension: usize, seed: u64 },
}

fn hashed_vector(dimension: usize, parts: &[&[u8]]) -> Vec<f64> {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    (0..dimension).map(|_| rng.random_range(-1.0..1.0)).collect()
}

impl EmbeddingProvider {
    pub fn hasher(dimension: usize, seed: u64) -> Self {
        EmbeddingProvider::DeterministicHasher { dimension, seed }
    }

    pub fn http(url: impl Into<String>, dimension: usize) -> Self {
        EmbeddingProvider::HttpService {
            url: url.into(),
            dimension,
            client: reqwest::Client::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            EmbeddingProvider::HttpService { dimension, .. }
            | EmbeddingProvider::DeterministicHasher { dimension, .. } => *dimension,
        }
    }

    pub async fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, StatsError> {
        match self {
            EmbeddingProvider::DeterministicHasher { dimension, seed } => {
                let spec = TokenizerSpec {
                    lowercase: true,
                    ..TokenizerSpec::default()
                };
                Ok(texts
                    .iter()
                    .map(|t| {
                        let mut v = vec![0.0; *dimension];
                        for tok in spec.tokenize(t) {
                            let tv = hashed_vector(*dimension, &[&seed.to_le_bytes(), b"text", tok.as_bytes()]);
                            v.iter_mut().zip(tv).for_each(|(a, b)| *a += b);
                        }
                        v
                    })
                    .collect())
            }
            EmbeddingProvider::HttpService { .. } => {
                let inputs: Vec<Value> = texts.iter().map(|t| json!(t)).collect();
                self.post(inputs).await
            }
        }
    }

    pub async fn embed_images(&self, images: &[ImageInput]) -> Result<Vec<Vec<f64>>, StatsError> {
        match self {
            EmbeddingProvider::DeterministicHasher { dimension, seed } => Ok(images
                .iter()
                .map(|img| {
                    hashed_vector(*dimension, &[&seed.to_le_bytes(), b"image", img.digest().as_bytes()])
                })
                .collect()),
            EmbeddingProvider::HttpService { .. } => {
                let inputs: Vec<Value> = images.iter().map(|i| json!(i.data_uri())).collect();
                self.post(inputs).await
            }
        }
    }

    async fn post(&self, inputs: Vec<Value>) -> Result<Vec<Vec<f64>>, StatsError> {
        let EmbeddingProvider::HttpService { url, dimension, client } = self else {
            unreachable!("post is only used by the HTTP provider")
        };
        let n = inputs.len();
        let unavailable = |e: String| StatsError::ProviderUnavailable(e);
        let resp = client
            .post(url)
            .json(&json!({ "inputs": inputs }))
            .send()
            .await
            .map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let body: Value = resp.json().await.map_err(|e| unavailable(e.to_string()))?;
        let rows = match &body {
            Value::Array(_) => &body,
            Value::Object(o) => o
                .get("embeddings")
                .ok_or_else(|| unavailable("response lacks `embeddings`".into()))?,
            _ => return Err(unavailable("unexpected response shape".into())),
        };
        let vectors: Vec<Vec<f64>> =
            serde_json::from_value(rows.clone()).map_err(|e| unavailable(e.to_string()))?;
        if vectors.len() != n {
            return Err(unavailable(format!("expected {n} vectors, got {}", vectors.len())));
        }
        for v in &vectors {
            if v.len() != *dimension {
                return Err(StatsError::DimensionMismatch {
                    expected: *dimension,
                    got: v.len(),
                });
            }
        }
        Ok(vectors)
    }
}

/// Cosine similarity clamped to [-1, 1]; zero vectors have similarity 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Image vs. its raw caption.
    RawOnly,
    /// Image vs. each of its generated captions.
    AllGenerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDistribution {
    pub pairing: Pairing,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub bucket_width: f64,
    /// Buckets over [-1, 1]; 1.0 falls in the last one.
    pub histogram: Vec<u64>,
    pub per_source_mean: BTreeMap<String, f64>,
}

impl SimilarityDistribution {
    pub fn from_samples(pairing: Pairing, samples: &[(String, f64)]) -> Result<Self, StatsError> {
        if samples.is_empty() {
            return Err(StatsError::EmptyCorpus);
        }
        let mut histogram = vec![0u64; SIMILARITY_BUCKETS];
        let mut per_source: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (source, s) in samples {
            let idx = (((s + 1.0) / SIMILARITY_BUCKET_WIDTH).floor() as usize).min(SIMILARITY_BUCKETS - 1);
            histogram[idx] += 1;
            let e = per_source.entry(source.clone()).or_default();
            e.0 += s;
            e.1 += 1;
        }
        let mut sorted: Vec<f64> = samples.iter().map(|(_, s)| *s).collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Ok(Self {
            pairing,
            count: n,
            mean: samples.iter().map(|(_, s)| s).sum::<f64>() / n as f64,
            median,
            bucket_width: SIMILARITY_BUCKET_WIDTH,
            histogram,
            per_source_mean: per_source
                .into_iter()
                .map(|(k, (sum, c))| (k, sum / c as f64))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub kind: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimilarityRun {
    pub distribution: SimilarityDistribution,
    /// Image vectors (`id`) and caption vectors (`id#source`), in dataset order.
    pub embeddings: Vec<EmbeddingRecord>,
}

/// Embeds each image and its selected captions and summarizes the cosine
/// similarities of the pairs.
pub async fn similarity_distribution(
    entries: &[EnhancedEntry],
    image_root: &Path,
    provider: &EmbeddingProvider,
    pairing: Pairing,
) -> Result<SimilarityRun, StatsError> {
    let http = reqwest::Client::new();
    let dim = provider.dimension();
    let mut samples = Vec::new();
    let mut embeddings = Vec::new();
    for entry in entries {
        let image = load_image(image_root, &entry.image, &http).await?;
        let image_vec = provider
            .embed_images(std::slice::from_ref(&image))
            .await?
            .pop()
            .ok_or_else(|| StatsError::ProviderUnavailable("no image vector".into()))?;
        check_dim(dim, &image_vec)?;

        let texts: Vec<(String, String)> = match pairing {
            Pairing::RawOnly => vec![(RAW_SOURCE.to_string(), entry.caption.clone())],
            Pairing::AllGenerated => entry
                .generated
                .iter()
                .filter(|g| !g.is_placeholder())
                .map(|g| (g.model_id.clone(), g.text.clone()))
                .collect(),
        };
        if texts.is_empty() {
            continue;
        }
        let bodies: Vec<String> = texts.iter().map(|(_, t)| t.clone()).collect();
        let text_vecs = provider.embed_texts(&bodies).await?;
        for ((source, _), tv) in texts.into_iter().zip(text_vecs) {
            check_dim(dim, &tv)?;
            samples.push((source.clone(), cosine(&image_vec, &tv)?));
            embeddings.push(EmbeddingRecord {
                id: format!("{}#{source}", entry.id),
                kind: "text".into(),
                vector: tv,
            });
        }
        embeddings.push(EmbeddingRecord {
            id: entry.id.clone(),
            kind: "image".into(),
            vector: image_vec,
        });
    }
    Ok(SimilarityRun {
        distribution: SimilarityDistribution::from_samples(pairing, &samples)?,
        embeddings,
    })
}

fn check_dim(expected: usize, v: &[f64]) -> Result<(), StatsError> {
    if v.len() != expected {
        return Err(StatsError::DimensionMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

/// Writes `embeddings.jsonl`-style records, one per line.
pub fn export_embeddings(records: &[EmbeddingRecord], path: &Path) -> Result<(), StatsError> {
    let mut file = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    for r in records {
        let mut line = serde_json::to_string(r).expect("record serializes");
        line.push('\n');
        file.write_all(line.as_bytes())
            .map_err(|e| DatasetError::io(path, e))?;
    }
    Ok(())
}

/// Everything `stats` can emit, serialized as `stats.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengths: Option<LengthStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word_frequency: Option<WordFrequencyTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<SimilarityDistribution>,
}
