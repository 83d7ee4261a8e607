//! Recall@K and median rank for 1:1 image-text retrieval.
//!
//! The rank of a query's ground truth is its 1-based position when all
//! candidates are ordered by descending similarity, equal scores keeping
//! candidate index order.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::PairCorpus;
use crate::encoder::EncoderParams;
use crate::ToyClipError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "i2t")]
    ImageToText,
    #[serde(rename = "t2i")]
    TextToImage,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        })
    }
}

impl FromStr for Direction {
    type Err = ToyClipError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "i2t" => Ok(Direction::ImageToText),
            "t2i" => Ok(Direction::TextToImage),
            other => Err(ToyClipError::InvalidConfig(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub queries: usize,
    /// Percentages in [0, 100].
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    /// Median of the 1-based ground-truth ranks (mean of the middle pair for
    /// an even count).
    pub mdr: f64,
}

/// Ground-truth rank for every query. For `ImageToText` queries are rows of
/// `sim` (image × text); for `TextToImage` they are columns.
pub fn ground_truth_ranks(sim: ArrayView2<f64>, direction: Direction) -> Vec<usize> {
    let sim = match direction {
        Direction::ImageToText => sim,
        Direction::TextToImage => sim.reversed_axes(),
    };
    sim.rows()
        .into_iter()
        .enumerate()
        .map(|(q, row)| {
            let truth = row[q];
            1 + row
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > truth || (s == truth && j < q))
                .count()
        })
        .collect()
}

pub fn report_from_ranks(ranks: &[usize], direction: Direction) -> Result<RetrievalReport, ToyClipError> {
    if ranks.is_empty() {
        return Err(ToyClipError::EmptyEvalSet);
    }
    let m = ranks.len() as f64;
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / m;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mdr = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    Ok(RetrievalReport {
        direction,
        queries: n,
        r1: recall(1),
        r5: recall(5),
        r10: recall(10),
        mdr,
    })
}

pub fn retrieval_from_similarity(
    sim: ArrayView2<f64>,
    direction: Direction,
) -> Result<RetrievalReport, ToyClipError> {
    if sim.nrows() != sim.ncols() {
        return Err(ToyClipError::ShapeMismatch(format!(
            "similarity matrix must be square, got {:?}",
            sim.dim()
        )));
    }
    report_from_ranks(&ground_truth_ranks(sim, direction), direction)
}

/// Cosine similarity of encoded eval images (rows) and raw captions
/// (columns).
pub fn similarity_matrix(params: &EncoderParams, eval: &PairCorpus) -> Array2<f64> {
    let img = params.encode_images(eval.images.view());
    let txt = params.encode_texts(eval.texts[0].view());
    img.unit.dot(&txt.unit.t())
}

pub fn eval_retrieval(
    params: &EncoderParams,
    eval: &PairCorpus,
    direction: Direction,
) -> Result<RetrievalReport, ToyClipError> {
    if eval.is_empty() {
        return Err(ToyClipError::EmptyEvalSet);
    }
    retrieval_from_similarity(similarity_matrix(params, eval).view(), direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn perfect_retrieval() {
        let sim = Array2::<f64>::eye(12);
        for d in [Direction::ImageToText, Direction::TextToImage] {
            let r = retrieval_from_similarity(sim.view(), d).unwrap();
            assert_eq!((r.r1, r.r5, r.r10, r.mdr), (100.0, 100.0, 100.0, 1.0));
        }
    }

    #[test]
    fn truth_ranked_last() {
        // every off-diagonal beats the diagonal
        let sim = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let r = retrieval_from_similarity(sim.view(), Direction::ImageToText).unwrap();
        assert_eq!(ground_truth_ranks(sim.view(), Direction::ImageToText), vec![5; 5]);
        assert_eq!((r.r1, r.r5, r.r10, r.mdr), (0.0, 100.0, 100.0, 5.0));
    }

    #[test]
    fn ties_resolve_by_index() {
        let sim = array![[1.0, 1.0], [1.0, 1.0]];
        assert_eq!(ground_truth_ranks(sim.view(), Direction::ImageToText), vec![1, 2]);
    }

    #[test]
    fn directions_read_rows_or_columns() {
        let sim = array![[0.9, 0.1, 0.0], [0.95, 0.5, 0.2], [0.0, 0.0, 0.1]];
        assert_eq!(ground_truth_ranks(sim.view(), Direction::ImageToText), vec![1, 2, 1]);
        assert_eq!(ground_truth_ranks(sim.view(), Direction::TextToImage), vec![2, 1, 2]);
    }

    #[test]
    fn even_count_median() {
        let r = report_from_ranks(&[1, 2, 3, 10], Direction::ImageToText).unwrap();
        assert_eq!(r.mdr, 2.5);
        assert_eq!(r.r1, 25.0);
        assert_eq!(r.r5, 75.0);
        assert!(matches!(
            report_from_ranks(&[], Direction::ImageToText),
            Err(ToyClipError::EmptyEvalSet)
        ));
    }

    #[test]
    fn direction_text_forms() {
        assert_eq!("i2t".parse::<Direction>().unwrap(), Direction::ImageToText);
        assert_eq!(Direction::TextToImage.to_string(), "t2i");
        assert!("x".parse::<Direction>().is_err());
    }
}
