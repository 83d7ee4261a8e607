//! Shard planning, per-shard captioning with checkpoints, and the merge into
//! the enhanced dataset.
//!
//! Run directory layout:
//!
//! ```text
//! <run>/shard_<i>.jsonl       enhanced records of shard i
//! <run>/shard_<i>.ckpt.json   progress of shard i
//! <run>/enhanced.jsonl        merged dataset (+ .manifest.json sidecar)
//! <run>/report.json           run report
//! ```
//!
//! Line numbers in checkpoints and reports are 0-based indexes into the
//! annotation file, matching the shard ranges.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::dataset::{
    self, count_lines, AnnotationEntry, AnnotationReader, DatasetError, DatasetManifest,
    EnhancedEntry, GeneratedCaption,
};
use crate::gateway::CaptionerPool;
use crate::image::load_image;
use crate::shear::{shear_caption, ShearMethod, ShearPolicy};

pub const MERGED_FILE: &str = "enhanced.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("annotation file has no records")]
    EmptyInput,
    #[error("shard_count must be >= 1")]
    InvalidShardCount,
    #[error("shard {0} is not part of the plan")]
    ShardOutOfRange(usize),
    #[error("checkpoint of shard {shard} does not match this run: {reason}")]
    CheckpointMismatch { shard: usize, reason: String },
    #[error("shard {0} is missing or incomplete")]
    MissingShard(usize),
    #[error("shard {0} was produced with a different pool")]
    InconsistentPool(usize),
    #[error("shard {0} was produced with a different shear policy")]
    MixedShearPolicy(usize),
    #[error("run interrupted; resume to continue")]
    Interrupted,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("worker failed: {0}")]
    Worker(String),
}

type Result<T, E = OrchestratorError> = std::result::Result<T, E>;

/// Contiguous half-open line ranges covering the input exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub total_lines: usize,
    pub boundaries: Vec<(usize, usize)>,
}

impl ShardPlan {
    /// Balanced split: the first `total % count` shards get one extra line.
    pub fn balanced(total_lines: usize, shard_count: usize) -> Result<Self> {
        if shard_count == 0 {
            return Err(OrchestratorError::InvalidShardCount);
        }
        if total_lines == 0 {
            return Err(OrchestratorError::EmptyInput);
        }
        let base = total_lines / shard_count;
        let extra = total_lines % shard_count;
        let mut start = 0;
        let boundaries = (0..shard_count)
            .map(|i| {
                let len = base + usize::from(i < extra);
                let range = (start, start + len);
                start += len;
                range
            })
            .collect();
        Ok(Self {
            total_lines,
            boundaries,
        })
    }

    pub fn shard_count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn range(&self, shard: usize) -> Result<(usize, usize)> {
        self.boundaries
            .get(shard)
            .copied()
            .ok_or(OrchestratorError::ShardOutOfRange(shard))
    }
}

pub fn plan_shards(annotation_path: &Path, shard_count: usize) -> Result<ShardPlan> {
    if shard_count == 0 {
        return Err(OrchestratorError::InvalidShardCount);
    }
    ShardPlan::balanced(count_lines(annotation_path)?, shard_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DropPolicy {
    /// Images with any failed slot are left out and itemized in the report.
    #[default]
    Drop,
    /// Images are kept; failed slots become empty-slot markers.
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFailure {
    pub line: usize,
    pub model_id: String,
    pub error_kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedEntry {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardCounters {
    pub images_total: usize,
    pub images_enhanced: usize,
    pub captions_generated: usize,
    pub captions_sheared_by_fallback: usize,
    pub per_model_failures: BTreeMap<String, usize>,
}

impl ShardCounters {
    fn absorb(&mut self, other: &ShardCounters) {
        self.images_total += other.images_total;
        self.images_enhanced += other.images_enhanced;
        self.captions_generated += other.captions_generated;
        self.captions_sheared_by_fallback += other.captions_sheared_by_fallback;
        for (k, v) in &other.per_model_failures {
            *self.per_model_failures.entry(k.clone()).or_default() += v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardCheckpoint {
    pub shard_index: usize,
    pub start_line: usize,
    pub end_line: usize,
    /// `start_line - 1` before any line is done.
    pub last_completed_line: i64,
    /// Length of the shard output covering exactly the completed lines.
    pub output_bytes: u64,
    pub complete: bool,
    pub pool_ids: Vec<String>,
    pub shear_policy_digest: String,
    pub started_at_ms: u64,
    pub failures: Vec<SlotFailure>,
    pub dropped: Vec<DroppedEntry>,
    pub counters: ShardCounters,
}

impl ShardCheckpoint {
    fn fresh(shard: usize, range: (usize, usize), pool_ids: Vec<String>, digest: String) -> Self {
        Self {
            shard_index: shard,
            start_line: range.0,
            end_line: range.1,
            last_completed_line: range.0 as i64 - 1,
            output_bytes: 0,
            complete: false,
            pool_ids,
            shear_policy_digest: digest,
            started_at_ms: now_ms(),
            failures: Vec::new(),
            dropped: Vec::new(),
            counters: ShardCounters::default(),
        }
    }

    pub fn next_line(&self) -> usize {
        (self.last_completed_line + 1) as usize
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            OrchestratorError::Dataset(DatasetError::MalformedLine {
                line: 1,
                reason: format!("{}: {e}", path.display()),
            })
        })
    }

    fn store(&self, path: &Path) -> Result<()> {
        Ok(dataset::write_json_atomic(path, self)?)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn shard_data_path(run_dir: &Path, shard: usize) -> PathBuf {
    run_dir.join(format!("shard_{shard}.jsonl"))
}

pub fn shard_checkpoint_path(run_dir: &Path, shard: usize) -> PathBuf {
    run_dir.join(format!("shard_{shard}.ckpt.json"))
}

/// Everything a shard worker needs; cheap to share behind an `Arc`.
#[derive(Debug, Clone)]
pub struct EnhanceContext {
    pub input: PathBuf,
    /// Base directory for relative image references.
    pub image_root: PathBuf,
    pub run_dir: PathBuf,
    pub pool: CaptionerPool,
    pub shear: ShearPolicy,
    pub drop_policy: DropPolicy,
    pub http: reqwest::Client,
}

impl EnhanceContext {
    pub fn new(
        input: impl Into<PathBuf>,
        run_dir: impl Into<PathBuf>,
        pool: CaptionerPool,
        shear: ShearPolicy,
        drop_policy: DropPolicy,
    ) -> Self {
        let input = input.into();
        let image_root = input
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self {
            input,
            image_root,
            run_dir: run_dir.into(),
            pool,
            shear,
            drop_policy,
            http: reqwest::Client::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ShardOptions {
    /// Continue from an existing checkpoint instead of starting over.
    pub resume: bool,
    /// Stop after this many lines in this call (the shard stays resumable).
    pub max_lines: Option<usize>,
    /// Checked between entries; when set the shard stops cleanly.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl ShardOptions {
    fn cancelled(&self) -> bool {
        self.cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::SeqCst))
    }
}

enum EntryOutcome {
    Kept(EnhancedEntry),
    Dropped(String),
}

async fn enhance_entry(
    ctx: &EnhanceContext,
    line: usize,
    entry: &AnnotationEntry,
    ckpt: &mut ShardCheckpoint,
) -> EntryOutcome {
    let ids = ctx.pool.model_ids();
    let image = match load_image(&ctx.image_root, &entry.image, &ctx.http).await {
        Ok(img) => img,
        Err(e) => {
            tracing::warn!(line, image = %entry.image, error = %e, "image unreadable");
            return match ctx.drop_policy {
                DropPolicy::Drop => EntryOutcome::Dropped(format!("image_unreadable: {e}")),
                DropPolicy::Keep => EntryOutcome::Kept(EnhancedEntry::from_annotation(
                    entry.clone(),
                    ids.iter()
                        .map(|m| GeneratedCaption::placeholder(m.clone(), "image_unreadable"))
                        .collect(),
                )),
            };
        }
    };

    let results = ctx.pool.caption_multiview(&image).await;
    let mut generated = Vec::with_capacity(results.len());
    let mut failed_models = Vec::new();
    let mut fallbacks = 0;
    for (model_id, result) in ids.iter().zip(results) {
        let slot = match result {
            Ok(caption) => shear_caption(&caption.text, &ctx.shear)
                .map(|s| {
                    if s.method == ShearMethod::HardTruncate {
                        fallbacks += 1;
                    }
                    GeneratedCaption {
                        text: s.text,
                        model_id: model_id.clone(),
                        sheared: s.sheared,
                        raw_token_count: s.raw_token_count,
                        error: None,
                    }
                })
                .map_err(|_| "no_valid_clause".to_string()),
            Err(failure) => Err(failure.error.kind().to_string()),
        };
        match slot {
            Ok(g) => generated.push(g),
            Err(kind) => {
                ckpt.failures.push(SlotFailure {
                    line,
                    model_id: model_id.clone(),
                    error_kind: kind.clone(),
                });
                *ckpt
                    .counters
                    .per_model_failures
                    .entry(model_id.clone())
                    .or_default() += 1;
                failed_models.push(model_id.clone());
                generated.push(GeneratedCaption::placeholder(model_id.clone(), kind));
            }
        }
    }

    if !failed_models.is_empty() && ctx.drop_policy == DropPolicy::Drop {
        return EntryOutcome::Dropped(format!("caption_failed: {}", failed_models.join(",")));
    }
    ckpt.counters.captions_generated += generated.iter().filter(|g| !g.is_placeholder()).count();
    ckpt.counters.captions_sheared_by_fallback += fallbacks;
    EntryOutcome::Kept(EnhancedEntry::from_annotation(entry.clone(), generated))
}

fn open_shard_output(path: &Path, keep_bytes: Option<u64>) -> Result<File> {
    let io = |e| OrchestratorError::Dataset(DatasetError::io(path, e));
    match keep_bytes {
        Some(len) => {
            let file = OpenOptions::new().write(true).open(path).map_err(io)?;
            // drop any record written after the last checkpoint
            file.set_len(len).map_err(io)?;
            let mut file = OpenOptions::new().append(true).open(path).map_err(io)?;
            file.flush().map_err(io)?;
            Ok(file)
        }
        None => File::create(path).map_err(io),
    }
}

/// Captions every line of one shard, appending enhanced records to
/// `shard_<i>.jsonl` and atomically rewriting the checkpoint after each line.
pub async fn process_shard(
    ctx: &EnhanceContext,
    plan: &ShardPlan,
    shard: usize,
    opts: &ShardOptions,
) -> Result<ShardCheckpoint> {
    let range = plan.range(shard)?;
    let data_path = shard_data_path(&ctx.run_dir, shard);
    let ckpt_path = shard_checkpoint_path(&ctx.run_dir, shard);
    let pool_ids = ctx.pool.model_ids();
    let digest = ctx.shear.digest();

    let existing = if opts.resume && ckpt_path.exists() && data_path.exists() {
        Some(ShardCheckpoint::load(&ckpt_path)?)
    } else {
        None
    };
    let (mut ckpt, mut out) = match existing {
        Some(ckpt) => {
            let mismatch = |reason: &str| OrchestratorError::CheckpointMismatch {
                shard,
                reason: reason.to_string(),
            };
            if ckpt.shard_index != shard || (ckpt.start_line, ckpt.end_line) != range {
                return Err(mismatch("shard range differs"));
            }
            if ckpt.pool_ids != pool_ids {
                return Err(mismatch("pool differs"));
            }
            if ckpt.shear_policy_digest != digest {
                return Err(mismatch("shear policy differs"));
            }
            if ckpt.complete {
                return Ok(ckpt);
            }
            let out = open_shard_output(&data_path, Some(ckpt.output_bytes))?;
            (ckpt, out)
        }
        None => {
            let ckpt = ShardCheckpoint::fresh(shard, range, pool_ids.clone(), digest);
            let out = open_shard_output(&data_path, None)?;
            ckpt.store(&ckpt_path)?;
            (ckpt, out)
        }
    };

    let start = ckpt.next_line();
    let reader = AnnotationReader::open_at(&ctx.input, start)?;
    let mut processed = 0usize;
    for (line, item) in (start..range.1).zip(reader) {
        if opts.cancelled() || opts.max_lines.is_some_and(|m| processed >= m) {
            return Ok(ckpt);
        }
        let (_, entry) = item?;
        ckpt.counters.images_total += 1;
        match enhance_entry(ctx, line, &entry, &mut ckpt).await {
            EntryOutcome::Kept(enhanced) => {
                let mut record = enhanced.to_line();
                record.push('\n');
                out.write_all(record.as_bytes())
                    .and_then(|_| out.flush())
                    .map_err(|e| DatasetError::io(&data_path, e))?;
                ckpt.output_bytes += record.len() as u64;
                ckpt.counters.images_enhanced += 1;
            }
            EntryOutcome::Dropped(reason) => ckpt.dropped.push(DroppedEntry {
                line,
                id: entry.id.clone(),
                reason,
            }),
        }
        ckpt.last_completed_line = line as i64;
        ckpt.store(&ckpt_path)?;
        processed += 1;
    }
    if ckpt.next_line() < range.1 {
        return Err(OrchestratorError::Dataset(DatasetError::MalformedLine {
            line: ckpt.next_line() + 1,
            reason: "annotation file shorter than planned".into(),
        }));
    }
    ckpt.complete = true;
    ckpt.store(&ckpt_path)?;
    Ok(ckpt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub images_total: usize,
    pub images_enhanced: usize,
    pub images_dropped: usize,
    pub captions_generated: usize,
    pub captions_sheared_by_fallback: usize,
    pub per_model_failures: BTreeMap<String, usize>,
    pub pool_ids: Vec<String>,
    pub shear_policy_digest: String,
    pub dropped: Vec<DroppedEntry>,
    pub failures: Vec<SlotFailure>,
    pub wall_time_ms: u64,
    /// Absolute base of the image references, so later tools reading the
    /// merged file can find the images. Unknown when only merging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
}

/// Concatenates complete shard outputs `0..shard_count` of `run_dir` in
/// shard order into `output_path`, writing the manifest sidecar and
/// `<run_dir>/report.json`.
pub fn merge_shards(
    run_dir: &Path,
    shard_count: usize,
    output_path: &Path,
) -> Result<(DatasetManifest, RunReport)> {
    if shard_count == 0 {
        return Err(OrchestratorError::InvalidShardCount);
    }
    let mut checkpoints = Vec::with_capacity(shard_count);
    for shard in 0..shard_count {
        let ckpt_path = shard_checkpoint_path(run_dir, shard);
        let data_path = shard_data_path(run_dir, shard);
        if !ckpt_path.exists() || !data_path.exists() {
            return Err(OrchestratorError::MissingShard(shard));
        }
        let ckpt = ShardCheckpoint::load(&ckpt_path)?;
        if !ckpt.complete || ckpt.shard_index != shard {
            return Err(OrchestratorError::MissingShard(shard));
        }
        checkpoints.push(ckpt);
    }
    let first = &checkpoints[0];
    for c in &checkpoints[1..] {
        if c.pool_ids != first.pool_ids {
            return Err(OrchestratorError::InconsistentPool(c.shard_index));
        }
        if c.shear_policy_digest != first.shear_policy_digest {
            return Err(OrchestratorError::MixedShearPolicy(c.shard_index));
        }
    }

    let mut entries = Vec::new();
    for c in &checkpoints {
        let path = shard_data_path(run_dir, c.shard_index);
        let file = File::open(&path).map_err(|e| DatasetError::io(&path, e))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| DatasetError::io(&path, e))?;
            entries.push(EnhancedEntry::parse_line(&line, i + 1)?);
        }
    }
    let pool_ids = first.pool_ids.clone();
    let digest = first.shear_policy_digest.clone();
    let manifest = dataset::write_enhanced(entries, output_path, &pool_ids, &digest)
        .map_err(|e| match e {
            DatasetError::InconsistentPool(_) => OrchestratorError::InconsistentPool(0),
            other => other.into(),
        })?;

    let mut counters = ShardCounters::default();
    let mut dropped = Vec::new();
    let mut failures = Vec::new();
    for c in &checkpoints {
        counters.absorb(&c.counters);
        dropped.extend(c.dropped.iter().cloned());
        failures.extend(c.failures.iter().cloned());
    }
    let started = checkpoints.iter().map(|c| c.started_at_ms).min().unwrap_or(0);
    let report = RunReport {
        images_total: counters.images_total,
        images_enhanced: counters.images_enhanced,
        images_dropped: dropped.len(),
        captions_generated: counters.captions_generated,
        captions_sheared_by_fallback: counters.captions_sheared_by_fallback,
        per_model_failures: counters.per_model_failures,
        pool_ids,
        shear_policy_digest: digest,
        dropped,
        failures,
        wall_time_ms: now_ms().saturating_sub(started),
        image_root: None,
    };
    dataset::write_json_atomic(&run_dir.join(REPORT_FILE), &report)?;
    Ok((manifest, report))
}

#[derive(Debug, Clone)]
pub struct EnhanceOptions {
    pub shards: usize,
    pub workers: usize,
    pub resume: bool,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self {
            shards: 1,
            workers: 1,
            resume: false,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnhanceSummary {
    pub plan: ShardPlan,
    pub output: PathBuf,
    pub manifest: DatasetManifest,
    pub report: RunReport,
}

/// plan -> process every shard (at most `workers` at a time) -> merge.
pub async fn enhance(ctx: EnhanceContext, opts: EnhanceOptions) -> Result<EnhanceSummary> {
    let plan = plan_shards(&ctx.input, opts.shards)?;
    fs::create_dir_all(&ctx.run_dir).map_err(|e| DatasetError::io(&ctx.run_dir, e))?;

    let ctx = Arc::new(ctx);
    let plan = Arc::new(plan);
    let workers = Arc::new(Semaphore::new(opts.workers.max(1)));
    let shard_opts = ShardOptions {
        resume: opts.resume,
        max_lines: None,
        cancel: opts.cancel.clone(),
    };
    let mut tasks = JoinSet::new();
    for shard in 0..plan.shard_count() {
        let (ctx, plan, workers, shard_opts) =
            (ctx.clone(), plan.clone(), workers.clone(), shard_opts.clone());
        tasks.spawn(async move {
            let _slot = workers.acquire_owned().await.expect("semaphore never closed");
            process_shard(&ctx, &plan, shard, &shard_opts).await
        });
    }
    let mut first_error = None;
    let mut incomplete = false;
    while let Some(joined) = tasks.join_next().await {
        match joined {
            Ok(Ok(ckpt)) => incomplete |= !ckpt.complete,
            Ok(Err(e)) => {
                first_error.get_or_insert(e);
            }
            Err(e) => {
                first_error.get_or_insert(OrchestratorError::Worker(e.to_string()));
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    if incomplete {
        return Err(OrchestratorError::Interrupted);
    }

    let output = ctx.run_dir.join(MERGED_FILE);
    let (manifest, mut report) = merge_shards(&ctx.run_dir, plan.shard_count(), &output)?;
    report.image_root = Some(std::path::absolute(&ctx.image_root).unwrap_or_else(|_| ctx.image_root.clone()));
    dataset::write_json_atomic(&ctx.run_dir.join(REPORT_FILE), &report)?;
    Ok(EnhanceSummary {
        plan: (*plan).clone(),
        output,
        manifest,
        report,
    })
}
