use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticCorpusConfig;
use crate::retrieval::{eval_retrieval, Direction, RetrievalReport};
use crate::train::{train, TrainConfig, ViewPolicy};
use crate::ToyClipError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    /// Generated caption length in tokens; only the first
    /// `grounded_tokens` of a caption describe the image.
    CaptionNoiseLength,
    BatchSize,
    /// Number of generated views; `0` trains on raw captions only.
    NumViews,
    Epochs,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::CaptionNoiseLength => "caption-noise-length",
            AblationAxis::BatchSize => "batch-size",
            AblationAxis::NumViews => "num-views",
            AblationAxis::Epochs => "epochs",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = ToyClipError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "caption-noise-length" => AblationAxis::CaptionNoiseLength,
            "batch-size" => AblationAxis::BatchSize,
            "num-views" => AblationAxis::NumViews,
            "epochs" => AblationAxis::Epochs,
            other => return Err(ToyClipError::InvalidConfig(format!("unknown axis `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationBase {
    pub corpus: SyntheticCorpusConfig,
    pub train: TrainConfig,
    pub views: ViewPolicy,
}

impl Default for AblationBase {
    fn default() -> Self {
        Self {
            corpus: SyntheticCorpusConfig::default(),
            train: TrainConfig::default(),
            views: ViewPolicy::MultiView(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub setting: usize,
    pub seed: u64,
    pub report: RetrievalReport,
}

impl AblationBase {
    /// Configuration of one grid point. The corpus seed and training seed
    /// both follow `seed`, so every setting sees the same data for a seed.
    pub fn point(
        &self,
        axis: AblationAxis,
        setting: usize,
        grid: &[usize],
        seed: u64,
    ) -> (SyntheticCorpusConfig, TrainConfig, ViewPolicy) {
        let mut corpus = SyntheticCorpusConfig { seed, ..self.corpus.clone() };
        let mut train = TrainConfig { seed, ..self.train.clone() };
        let mut views = self.views;
        match axis {
            AblationAxis::CaptionNoiseLength => corpus.view_tokens = setting,
            AblationAxis::BatchSize => train.batch_size = setting,
            AblationAxis::Epochs => train.epochs = setting,
            AblationAxis::NumViews => {
                let max = grid.iter().copied().max().unwrap_or(0);
                corpus.k_views = corpus.k_views.max(max);
                views = if setting == 0 {
                    ViewPolicy::RawOnly
                } else {
                    ViewPolicy::MultiView(setting)
                };
            }
        }
        (corpus, train, views)
    }
}

/// Train and evaluate every `(setting, seed)` point. Points run in parallel;
/// rows come back in grid order, then seed order, then I2T before T2I.
pub fn ablation_sweep(
    axis: AblationAxis,
    grid: &[usize],
    seeds: &[u64],
    base: &AblationBase,
) -> Result<Vec<AblationRow>, ToyClipError> {
    if grid.is_empty() {
        return Err(ToyClipError::InvalidConfig("ablation grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(ToyClipError::InvalidConfig("no seeds given".into()));
    }
    let points: Vec<(usize, u64)> = grid
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Vec<Result<Vec<AblationRow>, ToyClipError>> = points
        .par_iter()
        .map(|&(setting, seed)| {
            let (corpus_cfg, train_cfg, views) = base.point(axis, setting, grid, seed);
            let (corpus, eval) = corpus_cfg.generate()?;
            let outcome = train(&corpus, &train_cfg, views)?;
            [Direction::ImageToText, Direction::TextToImage]
                .into_iter()
                .map(|d| {
                    Ok(AblationRow {
                        axis,
                        setting,
                        seed,
                        report: eval_retrieval(&outcome.params, &eval, d)?,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(points.len() * 2);
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<(), ToyClipError> {
    let io = |e: csv::Error| ToyClipError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis", "setting", "seed", "direction", "r1", "r5", "r10", "mdr"])
        .map_err(io)?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.axis.to_string(),
            row.setting.to_string(),
            row.seed.to_string(),
            r.direction.to_string(),
            r.r1.to_string(),
            r.r5.to_string(),
            r.r10.to_string(),
            r.mdr.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| ToyClipError::Io(e.to_string()))
}

/// I2T R@1 per seed for one setting, in the order of `seeds`.
pub fn r1_by_seed(rows: &[AblationRow], setting: usize, direction: Direction) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.setting == setting && r.report.direction == direction)
        .map(|r| r.report.r1)
        .collect()
}

/// Probability of at least as many positive differences as observed when
/// each nonzero difference is positive with probability 1/2. Ties are
/// dropped. Returns 1 when every difference is zero.
pub fn sign_test_one_sided(diffs: &[f64]) -> f64 {
    let wins = diffs.iter().filter(|d| **d > 0.0).count();
    let n = diffs.iter().filter(|d| **d != 0.0).count();
    if n == 0 {
        return 1.0;
    }
    let mut tail = 0.0;
    let mut binom = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            binom = binom * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            tail += binom;
        }
    }
    tail / 2f64.powi(n as i32)
}
