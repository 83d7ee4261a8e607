//! Paired feature corpora: synthetic generation and the line-delimited
//! feature file format `{"id","image_vec":[...],"text_vecs":[[...],...]}`.
//!
//! `text_vecs[0]` is the raw caption; the remaining entries are the
//! generated views in pool order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ToyClipError;

/// Image features with a raw caption and `views` generated captions each.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCorpus {
    pub ids: Vec<String>,
    pub images: Array2<f64>,
    /// `texts[0]` raw captions, `texts[k]` view `k`; all `n × d_txt`.
    pub texts: Vec<Array2<f64>>,
}

impl PairCorpus {
    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn views(&self) -> usize {
        self.texts.len().saturating_sub(1)
    }

    pub fn d_img(&self) -> usize {
        self.images.ncols()
    }

    pub fn d_txt(&self) -> usize {
        self.texts.first().map(|t| t.ncols()).unwrap_or(0)
    }

    /// Ground-truth pairs (image, raw caption) used for evaluation.
    pub fn raw_pairs(&self) -> (Array2<f64>, Array2<f64>) {
        (self.images.clone(), self.texts[0].clone())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, ToyClipError> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            image_vec: Vec<f64>,
            text_vecs: Vec<Vec<f64>>,
        }
        let io = |e: std::io::Error| ToyClipError::Io(format!("{}: {e}", path.display()));
        let file = File::open(path).map_err(io)?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line)
                .map_err(|e| ToyClipError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?;
            rows.push(row);
        }
        let first = rows.first().ok_or(ToyClipError::EmptyCorpus)?;
        let (d_img, n_texts) = (first.image_vec.len(), first.text_vecs.len());
        let d_txt = first.text_vecs.first().map(Vec::len).unwrap_or(0);
        if n_texts == 0 || d_img == 0 || d_txt == 0 {
            return Err(ToyClipError::ShapeMismatch("empty feature vectors".into()));
        }
        let n = rows.len();
        let mut images = Array2::zeros((n, d_img));
        let mut texts = vec![Array2::zeros((n, d_txt)); n_texts];
        let mut ids = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.image_vec.len() != d_img || row.text_vecs.len() != n_texts {
                return Err(ToyClipError::ShapeMismatch(format!("row `{}`", row.id)));
            }
            images.row_mut(i).assign(&Array1::from(row.image_vec));
            for (k, tv) in row.text_vecs.into_iter().enumerate() {
                if tv.len() != d_txt {
                    return Err(ToyClipError::ShapeMismatch(format!("row `{}`", row.id)));
                }
                texts[k].row_mut(i).assign(&Array1::from(tv));
            }
            ids.push(row.id);
        }
        Ok(Self { ids, images, texts })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), ToyClipError> {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            image_vec: Vec<f64>,
            text_vecs: Vec<Vec<f64>>,
        }
        let io = |e: std::io::Error| ToyClipError::Io(format!("{}: {e}", path.display()));
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        for i in 0..self.len() {
            let row = Row {
                id: &self.ids[i],
                image_vec: self.images.row(i).to_vec(),
                text_vecs: self.texts.iter().map(|t| t.row(i).to_vec()).collect(),
            };
            serde_json::to_writer(&mut out, &row).map_err(|e| ToyClipError::Io(e.to_string()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Desk-scale stand-in for a web image-text corpus.
///
/// Every item has a latent content vector `z`. Images observe `z` through a
/// fixed projection plus noise. Raw captions observe it through another
/// projection with heavy noise. Generated view `k` describes
/// `min(view_tokens, grounded_tokens) / view_tokens` of the content and
/// fills the rest with unrelated (hallucinated) content, carries a fixed
/// per-view style offset, and has moderate noise. Evaluation captions are
/// clean observations of `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    pub n_items: usize,
    pub n_eval: usize,
    pub latent_dim: usize,
    pub d_img: usize,
    pub d_txt: usize,
    pub k_views: usize,
    pub image_noise_sigma: f64,
    pub raw_noise_sigma: f64,
    /// Noise on generated views.
    pub noise_sigma: f64,
    pub eval_noise_sigma: f64,
    pub style_bias_magnitude: f64,
    pub view_tokens: usize,
    pub grounded_tokens: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            n_items: 1000,
            n_eval: 200,
            latent_dim: 16,
            d_img: 32,
            d_txt: 32,
            k_views: 4,
            image_noise_sigma: 0.5,
            raw_noise_sigma: 1.5,
            noise_sigma: 0.7,
            eval_noise_sigma: 0.8,
            style_bias_magnitude: 0.5,
            view_tokens: 15,
            grounded_tokens: 15,
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<(), ToyClipError> {
        let dims = [self.n_items, self.n_eval, self.latent_dim, self.d_img, self.d_txt];
        if dims.contains(&0) || self.view_tokens == 0 {
            return Err(ToyClipError::InvalidConfig(
                "corpus sizes and dimensions must be >= 1".into(),
            ));
        }
        let sigmas = [
            self.image_noise_sigma,
            self.raw_noise_sigma,
            self.noise_sigma,
            self.eval_noise_sigma,
            self.style_bias_magnitude,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(ToyClipError::InvalidConfig(
                "noise levels must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn grounded_fraction(&self) -> f64 {
        self.view_tokens.min(self.grounded_tokens) as f64 / self.view_tokens as f64
    }

    /// `(train, eval)` corpora. The eval corpus has no generated views.
    pub fn generate(&self) -> Result<(PairCorpus, PairCorpus), ToyClipError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let gauss = |r: usize, c: usize, scale: f64, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal) * scale)
        };
        let proj_scale = 1.0 / (self.latent_dim as f64).sqrt();
        let a_img = gauss(self.d_img, self.latent_dim, proj_scale, &mut rng);
        let a_txt = gauss(self.d_txt, self.latent_dim, proj_scale, &mut rng);
        let styles: Vec<Array1<f64>> = (0..self.k_views)
            .map(|_| {
                Array1::from_shape_fn(self.d_txt, |_| {
                    rng.sample::<f64, _>(StandardNormal) * self.style_bias_magnitude
                })
            })
            .collect();

        let noise = |n: usize, d: usize, sigma: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, sigma.max(0.0)).expect("valid sigma");
            Array2::from_shape_fn((n, d), |_| if sigma > 0.0 { normal.sample(rng) } else { 0.0 })
        };

        let n = self.n_items;
        let z = gauss(n, self.latent_dim, 1.0, &mut rng);
        let images = z.dot(&a_img.t()) + noise(n, self.d_img, self.image_noise_sigma, &mut rng);
        let clean_txt = z.dot(&a_txt.t());
        let mut texts = vec![&clean_txt + &noise(n, self.d_txt, self.raw_noise_sigma, &mut rng)];
        let g = self.grounded_fraction();
        for style in &styles {
            let hallucinated = gauss(n, self.latent_dim, 1.0, &mut rng).dot(&a_txt.t());
            let view = &clean_txt * g
                + hallucinated * (1.0 - g)
                + style.view().insert_axis(Axis(0))
                + noise(n, self.d_txt, self.noise_sigma, &mut rng);
            texts.push(view);
        }
        let train = PairCorpus {
            ids: (0..n).map(|i| format!("train-{i}")).collect(),
            images,
            texts,
        };

        let m = self.n_eval;
        let z_eval = gauss(m, self.latent_dim, 1.0, &mut rng);
        let eval = PairCorpus {
            ids: (0..m).map(|i| format!("eval-{i}")).collect(),
            images: z_eval.dot(&a_img.t()) + noise(m, self.d_img, self.image_noise_sigma, &mut rng),
            texts: vec![z_eval.dot(&a_txt.t()) + noise(m, self.d_txt, self.eval_noise_sigma, &mut rng)],
        };
        Ok((train, eval))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_shapes_and_determinism() {
        let cfg = SyntheticCorpusConfig {
            n_items: 20,
            n_eval: 5,
            ..SyntheticCorpusConfig::default()
        };
        let (train, eval) = cfg.generate().unwrap();
        assert_eq!(train.len(), 20);
        assert_eq!(train.views(), 4);
        assert_eq!(train.d_img(), 32);
        assert_eq!(eval.len(), 5);
        assert_eq!(eval.views(), 0);
        assert_eq!(cfg.generate().unwrap().0, train);
        let other = SyntheticCorpusConfig { seed: 1, ..cfg }.generate().unwrap().0;
        assert_ne!(other, train);
    }

    #[test]
    fn grounded_fraction_shrinks_with_length() {
        let mut cfg = SyntheticCorpusConfig::default();
        assert_eq!(cfg.grounded_fraction(), 1.0);
        cfg.view_tokens = 60;
        assert_eq!(cfg.grounded_fraction(), 0.25);
    }

    #[test]
    fn invalid_configs() {
        let bad = SyntheticCorpusConfig {
            latent_dim: 0,
            ..SyntheticCorpusConfig::default()
        };
        assert!(bad.generate().is_err());
        let bad = SyntheticCorpusConfig {
            noise_sigma: -1.0,
            ..SyntheticCorpusConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn feature_file_round_trip() {
        let cfg = SyntheticCorpusConfig {
            n_items: 3,
            n_eval: 2,
            d_img: 4,
            d_txt: 3,
            ..SyntheticCorpusConfig::default()
        };
        let (train, _) = cfg.generate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        train.write_jsonl(&path).unwrap();
        assert_eq!(PairCorpus::read_jsonl(&path).unwrap(), train);
    }
}
