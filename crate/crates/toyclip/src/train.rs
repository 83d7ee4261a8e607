use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PairCorpus;
use crate::encoder::EncoderParams;
use crate::loss::contrastive_loss;
use crate::optim::{Optimizer, OptimizerKind};
use crate::ToyClipError;

/// Which captions of each image take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewPolicy {
    RawOnly,
    /// Raw caption plus the first `K` generated views, each paired with the
    /// image as an independent pair.
    MultiView(usize),
}

impl ViewPolicy {
    pub fn texts_per_image(self) -> usize {
        match self {
            ViewPolicy::RawOnly => 1,
            ViewPolicy::MultiView(k) => k + 1,
        }
    }
}

impl std::str::FromStr for ViewPolicy {
    type Err = ToyClipError;

    /// `raw-only` or `multi:K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "raw-only" {
            return Ok(ViewPolicy::RawOnly);
        }
        s.strip_prefix("multi:")
            .and_then(|k| k.parse().ok())
            .map(ViewPolicy::MultiView)
            .ok_or_else(|| ToyClipError::InvalidConfig(format!("unknown view policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSampling {
    /// Every (image, caption) pair once per epoch.
    #[default]
    Enumerate,
    /// One randomly chosen caption per image per epoch.
    SampleOnePerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub d_out: usize,
    pub bias: bool,
    pub max_steps: Option<usize>,
    pub sampling: ViewSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            temperature: 0.07,
            learning_rate: 0.005,
            epochs: 8,
            seed: 0,
            optimizer: OptimizerKind::default(),
            d_out: 16,
            bias: false,
            max_steps: None,
            sampling: ViewSampling::Enumerate,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ToyClipError> {
        let bad = |m: &str| Err(ToyClipError::InvalidConfig(m.into()));
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be > 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.d_out == 0 {
            return bad("d_out must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Loss of each optimizer step's batch.
    pub step_losses: Vec<f64>,
    /// Loss over a fixed probe set of raw pairs, measured before training,
    /// after each epoch and at an early stop.
    pub trace: Vec<TracePoint>,
    pub steps: usize,
    pub temperature: f64,
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

fn gather_texts(corpus: &PairCorpus, pairs: &[(usize, usize)]) -> Array2<f64> {
    let mut out = Array2::zeros((pairs.len(), corpus.d_txt()));
    for (r, &(i, v)) in pairs.iter().enumerate() {
        out.row_mut(r).assign(&corpus.texts[v].row(i));
    }
    out
}

fn gather_images(corpus: &PairCorpus, pairs: &[(usize, usize)]) -> Array2<f64> {
    let idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    corpus.images.select(Axis(0), &idx)
}

fn batch_loss(
    params: &EncoderParams,
    corpus: &PairCorpus,
    pairs: &[(usize, usize)],
    temperature: f64,
) -> Result<f64, ToyClipError> {
    let img = params.encode_images(gather_images(corpus, pairs).view());
    let txt = params.encode_texts(gather_texts(corpus, pairs).view());
    Ok(contrastive_loss(img.unit.view(), txt.unit.view(), temperature)?.loss)
}

fn probe_loss(
    params: &EncoderParams,
    corpus: &PairCorpus,
    probe: &[Vec<(usize, usize)>],
    temperature: f64,
) -> Result<f64, ToyClipError> {
    let mut total = 0.0;
    for chunk in probe {
        total += batch_loss(params, corpus, chunk, temperature)?;
    }
    Ok(total / probe.len() as f64)
}

pub fn train(
    corpus: &PairCorpus,
    config: &TrainConfig,
    views: ViewPolicy,
) -> Result<TrainOutcome, ToyClipError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(ToyClipError::EmptyCorpus);
    }
    let per_image = views.texts_per_image();
    if per_image > corpus.texts.len() {
        return Err(ToyClipError::InvalidConfig(format!(
            "{} generated views requested, corpus has {}",
            per_image - 1,
            corpus.views()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = EncoderParams::init(corpus.d_img(), corpus.d_txt(), config.d_out, config.bias, &mut rng);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let tau = config.temperature;

    let n = corpus.len();
    let probe: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| (i, 0))
        .collect::<Vec<_>>()
        .chunks(config.batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[_]>::to_vec)
        .collect();
    if probe.is_empty() {
        return Err(ToyClipError::InvalidConfig("corpus needs at least 2 items".into()));
    }

    let mut trace = vec![TracePoint {
        step: 0,
        loss: probe_loss(&params, corpus, &probe, tau)?,
    }];
    let mut step_losses = Vec::new();
    let mut steps = 0;
    let max_steps = config.max_steps.unwrap_or(usize::MAX);

    'epochs: for _ in 0..config.epochs {
        let mut pairs: Vec<(usize, usize)> = match config.sampling {
            ViewSampling::Enumerate => (0..n)
                .flat_map(|i| (0..per_image).map(move |v| (i, v)))
                .collect(),
            ViewSampling::SampleOnePerImage => {
                (0..n).map(|i| (i, rng.random_range(0..per_image))).collect()
            }
        };
        pairs.shuffle(&mut rng);
        for batch in pairs.chunks(config.batch_size) {
            if steps >= max_steps {
                break 'epochs;
            }
            if batch.len() < 2 {
                continue;
            }
            let x_img = gather_images(corpus, batch);
            let x_txt = gather_texts(corpus, batch);
            let img = params.encode_images(x_img.view());
            let txt = params.encode_texts(x_txt.view());
            let out = contrastive_loss(img.unit.view(), txt.unit.view(), tau)
                .map_err(|_| ToyClipError::DivergenceDetected { step: steps })?;
            if !out.loss.is_finite() {
                return Err(ToyClipError::DivergenceDetected { step: steps });
            }
            let grads = params.backward(x_img.view(), &img, &out.grad_image, x_txt.view(), &txt, &out.grad_text);
            optimizer.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(ToyClipError::DivergenceDetected { step: steps });
            }
            step_losses.push(out.loss);
            steps += 1;
        }
        trace.push(TracePoint {
            step: steps,
            loss: probe_loss(&params, corpus, &probe, tau)?,
        });
    }
    if trace.last().map(|t| t.step) != Some(steps) {
        trace.push(TracePoint {
            step: steps,
            loss: probe_loss(&params, corpus, &probe, tau)?,
        });
    }

    Ok(TrainOutcome {
        params,
        step_losses,
        trace,
        steps,
        temperature: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticCorpusConfig;

    fn small_corpus() -> PairCorpus {
        SyntheticCorpusConfig {
            n_items: 120,
            n_eval: 10,
            ..SyntheticCorpusConfig::default()
        }
        .generate()
        .unwrap()
        .0
    }

    #[test]
    fn view_policy_parsing() {
        assert_eq!("raw-only".parse::<ViewPolicy>().unwrap(), ViewPolicy::RawOnly);
        assert_eq!("multi:4".parse::<ViewPolicy>().unwrap(), ViewPolicy::MultiView(4));
        assert!("multi:x".parse::<ViewPolicy>().is_err());
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn step_count_follows_epoch_accounting() {
        let corpus = small_corpus();
        let cfg = TrainConfig {
            batch_size: 50,
            epochs: 2,
            ..TrainConfig::default()
        };
        // 120 pairs -> 50, 50, 20
        assert_eq!(train(&corpus, &cfg, ViewPolicy::RawOnly).unwrap().steps, 6);
        // 600 pairs -> 12 batches per epoch
        let multi = train(&corpus, &cfg, ViewPolicy::MultiView(4)).unwrap();
        assert_eq!(multi.steps, 24);
        assert_eq!(multi.trace.len(), 3);
        let sampled = TrainConfig {
            sampling: ViewSampling::SampleOnePerImage,
            ..cfg
        };
        assert_eq!(train(&corpus, &sampled, ViewPolicy::MultiView(4)).unwrap().steps, 6);
    }

    #[test]
    fn rejects_missing_views_and_bad_config() {
        let corpus = small_corpus();
        let cfg = TrainConfig::default();
        assert!(train(&corpus, &cfg, ViewPolicy::MultiView(9)).is_err());
        let bad = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(train(&corpus, &bad, ViewPolicy::RawOnly).is_err());
    }

    #[test]
    fn huge_learning_rate_diverges_or_stays_finite() {
        let corpus = small_corpus();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e300,
            epochs: 3,
            ..TrainConfig::default()
        };
        match train(&corpus, &cfg, ViewPolicy::RawOnly) {
            Ok(out) => assert!(out.params.is_finite()),
            Err(e) => assert!(matches!(e, ToyClipError::DivergenceDetected { .. })),
        }
    }
}
