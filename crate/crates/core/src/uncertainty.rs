//! Anomaly classifier and entropy-based uncertainty scores.

use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, Sample};
use crate::error::{Error, Result};
use crate::nn::{self, clip_prob, softmax, softmax_cross_entropy, ModelSpec, Network, TrainConfig};
use crate::{exec, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub train: TrainConfig,
    /// Lower bound on optimizer steps; small training sets get extra epochs to reach it.
    pub min_steps: usize,
    /// Continue from the previous cycle's parameters instead of a fresh initialization.
    pub warm_start: bool,
    /// Mini-batch steps of a fit that continues from earlier parameters, rounded up to whole
    /// epochs.
    pub warm_steps: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let mut train = TrainConfig::new(30);
        train.adam.lr = 1e-2;
        Self {
            train,
            min_steps: 4000,
            warm_start: false,
            warm_steps: 100,
        }
    }
}

impl ClassifierConfig {
    /// Training schedule for `n` samples. A fresh fit runs the configured epochs, raised until
    /// `min_steps` mini-batch steps are taken; a continued fit runs `warm_steps`.
    pub fn effective_train(&self, n: usize, continued: bool) -> TrainConfig {
        let batches = n.div_ceil(self.train.batch_size.max(1)).max(1);
        let epochs = if continued {
            self.warm_steps.div_ceil(batches).max(1)
        } else {
            self.train.epochs.max(self.min_steps.div_ceil(batches))
        };
        TrainConfig {
            epochs,
            ..self.train
        }
    }
}

/// Trains a fresh classifier (or continues from `init` when given) with cross-entropy and Adam.
pub fn train_classifier(
    samples: &[&Sample],
    labels: &[ClassLabel],
    cfg: &ClassifierConfig,
    seed: u64,
    init: Option<&Network>,
) -> Result<Network> {
    if samples.len() != labels.len() {
        return Err(Error::LengthMismatch(samples.len(), labels.len()));
    }
    let abnormal = labels
        .iter()
        .filter(|&&l| l == ClassLabel::Abnormal)
        .count();
    if abnormal == 0 || abnormal == labels.len() {
        return Err(Error::SingleClass);
    }
    let window = samples[0].len();
    let mut net = match init {
        Some(prev) => prev.clone(),
        None => Network::new(
            ModelSpec::classifier(window),
            rng::derive_seed(seed, "classifier/init", 0),
        )?,
    };
    let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let mut shuffle = rng::stream(seed, "classifier/order", 0);
    let train = cfg.effective_train(samples.len(), init.is_some());
    nn::fit(
        &mut net,
        samples.len(),
        &train,
        &mut shuffle,
        |net, _, i, grads| {
            let trace = net.forward(samples[i].values())?;
            let (loss, g) = softmax_cross_entropy(trace.output(), targets[i])?;
            net.backward(&trace, &g, grads, false);
            Ok(loss)
        },
    )?;
    Ok(net)
}

/// Softmax class probabilities `[p(normal), p(abnormal)]` per sample.
pub fn predict_proba(net: &Network, samples: &[&Sample]) -> Result<Vec<[f64; 2]>> {
    exec::map_slice(samples, |s| {
        let p = softmax(&net.predict(s.values())?);
        Ok([p[0], p[1]])
    })
    .into_iter()
    .collect()
}

/// Shannon entropy in bits of one probability row, with probabilities clipped away from 0 and 1.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .map(|&v| {
            let q = clip_prob(v);
            -q * q.log2()
        })
        .sum()
}

pub fn entropy_scores(rows: &[[f64; 2]]) -> Vec<f64> {
    rows.iter().map(|r| entropy(r)).collect()
}

/// Confusion counts with abnormal as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[ClassLabel], actual: &[ClassLabel]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::LengthMismatch(predicted.len(), actual.len()));
        }
        let mut c = Confusion::default();
        for (p, a) in predicted.iter().zip(actual) {
            match (p, a) {
                (ClassLabel::Abnormal, ClassLabel::Abnormal) => c.tp += 1,
                (ClassLabel::Abnormal, ClassLabel::Normal) => c.fp += 1,
                (ClassLabel::Normal, ClassLabel::Abnormal) => c.fn_ += 1,
                (ClassLabel::Normal, ClassLabel::Normal) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total().max(1) as f64
    }

    /// F1 of the abnormal class; 0 when there are no true positives.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

impl From<Confusion> for Evaluation {
    fn from(confusion: Confusion) -> Self {
        Self {
            accuracy: confusion.accuracy(),
            f1: confusion.f1(),
            confusion,
        }
    }
}

pub fn predict_labels(net: &Network, samples: &[&Sample]) -> Result<Vec<ClassLabel>> {
    Ok(predict_proba(net, samples)?
        .into_iter()
        .map(|p| {
            if p[1] > p[0] {
                ClassLabel::Abnormal
            } else {
                ClassLabel::Normal
            }
        })
        .collect())
}

pub fn evaluate(net: &Network, samples: &[&Sample], labels: &[ClassLabel]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let predicted = predict_labels(net, samples)?;
    Ok(Confusion::from_predictions(&predicted, labels)?.into())
}
