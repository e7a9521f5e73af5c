//! Similarity model trained on triplets, similarity scores against the labeled pool and
//! their top-w binarization.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{self, cosine_similarity, triplet_cosine_loss, ModelSpec, Network, TrainConfig};
use crate::wta::{augment, Augmentation, WtaState};
use crate::{exec, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub embedding_dim: usize,
    pub margin: f64,
    pub train: TrainConfig,
    /// Draw fresh augmentations and negatives every epoch.
    pub resample_each_epoch: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            margin: 0.2,
            train: TrainConfig::new(40),
            resample_each_epoch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: Sample,
    pub positive: Sample,
    pub negative: Sample,
}

/// Deterministic triplet construction over fixed anchor and negative sets.
///
/// Triplet `i` of round `r` uses anchor `i mod |anchors|`; the augmentation alternates between
/// Gaussian and threshold with each pass over the anchors (and with the round), and the
/// negative is drawn uniformly.
pub struct TripletSource<'a> {
    anchors: Vec<&'a Sample>,
    negatives: Vec<&'a Sample>,
    wta: &'a WtaState,
    count: usize,
    seed: u64,
}

impl<'a> TripletSource<'a> {
    pub fn new(
        anchors: &[&'a Sample],
        negatives: &[&'a Sample],
        wta: &'a WtaState,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::EmptyNegativePool);
        }
        if anchors.is_empty() && count > 0 {
            return Err(Error::InsufficientData("no anchors for triplets".into()));
        }
        Ok(Self {
            anchors: anchors.to_vec(),
            negatives: negatives.to_vec(),
            wta,
            count,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn anchor_index(&self, i: usize) -> usize {
        i % self.anchors.len()
    }

    pub fn augmentation(&self, round: usize, i: usize) -> Augmentation {
        if (i / self.anchors.len() + round).is_multiple_of(2) {
            Augmentation::Gaussian
        } else {
            Augmentation::Threshold
        }
    }

    pub fn triplet(&self, round: usize, i: usize) -> Result<Triplet> {
        let anchor = self.anchors[self.anchor_index(i)];
        let item_seed = rng::derive_seed(self.seed, "triplet", ((round as u64) << 32) | i as u64);
        let mut pick = rng::stream(item_seed, "negative", 0);
        let negative = self.negatives[pick.random_range(0..self.negatives.len())];
        let positive = augment(self.wta, anchor, self.augmentation(round, i), item_seed)?;
        Ok(Triplet {
            anchor: anchor.clone(),
            positive,
            negative: negative.clone(),
        })
    }
}

/// Materializes the first round of a [`TripletSource`].
pub fn build_triplets(
    labeled_s: &[&Sample],
    labeled_l: &[&Sample],
    wta: &WtaState,
    count: usize,
    seed: u64,
) -> Result<Vec<Triplet>> {
    let source = TripletSource::new(labeled_s, labeled_l, wta, count, seed)?;
    exec::map_range(count, |i| source.triplet(0, i))
        .into_iter()
        .collect()
}

fn triplet_step(net: &Network, t: &Triplet, margin: f64, grads: &mut [f64]) -> Result<f64> {
    let traces = [
        net.forward(t.anchor.values())?,
        net.forward(t.positive.values())?,
        net.forward(t.negative.values())?,
    ];
    let g = triplet_cosine_loss(
        traces[0].output(),
        traces[1].output(),
        traces[2].output(),
        margin,
    )?;
    if g.loss > 0.0 {
        net.backward(&traces[0], &g.anchor, grads, false);
        net.backward(&traces[1], &g.positive, grads, false);
        net.backward(&traces[2], &g.negative, grads, false);
    }
    Ok(g.loss)
}

#[derive(Debug, Clone)]
pub struct SimilarityModel {
    pub net: Network,
    /// Mean triplet loss per epoch.
    pub history: Vec<f64>,
}

fn fresh_network(window: usize, cfg: &SimilarityConfig, seed: u64) -> Result<Network> {
    Network::new(
        ModelSpec::embedding(window, cfg.embedding_dim),
        rng::derive_seed(seed, "similarity/init", 0),
    )
}

/// Trains on a fixed list of triplets.
pub fn train_similarity_model(
    triplets: &[Triplet],
    cfg: &SimilarityConfig,
    seed: u64,
) -> Result<SimilarityModel> {
    if triplets.is_empty() {
        return Err(Error::InsufficientData("no triplets".into()));
    }
    let mut net = fresh_network(triplets[0].anchor.len(), cfg, seed)?;
    let mut order = rng::stream(seed, "similarity/order", 0);
    let history = nn::fit(
        &mut net,
        triplets.len(),
        &cfg.train,
        &mut order,
        |net, _, i, grads| triplet_step(net, &triplets[i], cfg.margin, grads),
    )?;
    Ok(SimilarityModel { net, history })
}

/// Trains on triplets drawn from `source`, one round per epoch when resampling is on.
pub fn train_similarity_resampled(
    source: &TripletSource<'_>,
    cfg: &SimilarityConfig,
    seed: u64,
) -> Result<SimilarityModel> {
    if source.is_empty() {
        return Err(Error::InsufficientData("no triplets".into()));
    }
    let window = source.anchors[0].len();
    let mut net = fresh_network(window, cfg, seed)?;
    let mut order = rng::stream(seed, "similarity/order", 0);
    let history = nn::fit(
        &mut net,
        source.len(),
        &cfg.train,
        &mut order,
        |net, epoch, i, grads| {
            let round = if cfg.resample_each_epoch { epoch } else { 0 };
            triplet_step(net, &source.triplet(round, i)?, cfg.margin, grads)
        },
    )?;
    Ok(SimilarityModel { net, history })
}

pub fn embed(net: &Network, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
    exec::map_slice(samples, |s| net.predict(s.values()))
        .into_iter()
        .collect()
}

/// `s_i = max_j cos(f_j, g_i)` for every unlabeled embedding `g_i` over labeled embeddings `f_j`.
pub fn max_cosine_scores(labeled: &[Vec<f64>], unlabeled: &[Vec<f64>]) -> Result<Vec<f64>> {
    if labeled.is_empty() {
        return Err(Error::EmptyLabeledPool);
    }
    exec::map_slice(unlabeled, |u| {
        labeled.iter().try_fold(f64::NEG_INFINITY, |best, f| {
            Ok(best.max(cosine_similarity(f, u)?))
        })
    })
    .into_iter()
    .collect()
}

/// Similarity of every unlabeled sample to its closest labeled sample in embedding space.
pub fn similarity_scores(
    net: &Network,
    labeled: &[&Sample],
    unlabeled: &[&Sample],
) -> Result<Vec<f64>> {
    if labeled.is_empty() {
        return Err(Error::EmptyLabeledPool);
    }
    let fl = embed(net, labeled)?;
    let fu = embed(net, unlabeled)?;
    max_cosine_scores(&fl, &fu)
}

/// Indicator of the `n` largest entries; ties go to the lowest index.
pub fn locmax(values: &[f64], n: usize) -> Vec<u8> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut out = vec![0u8; values.len()];
    for &i in order.iter().take(n) {
        out[i] = 1;
    }
    out
}

/// `⌊w · d_u⌋`, robust to representation error in `w`.
pub fn binarization_budget(w: f64, d_u: usize) -> usize {
    (w * d_u as f64 + 1e-9).floor() as usize
}

pub fn binarize_topw(s_prime: &[f64], w: f64) -> Result<Vec<u8>> {
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "w must lie in (0, 1], got {w}"
        )));
    }
    let n = binarization_budget(w, s_prime.len());
    if n == 0 {
        return Err(Error::ZeroBudget {
            w,
            pool: s_prime.len(),
        });
    }
    Ok(locmax(s_prime, n))
}

/// Smallest `w' ≥ w` whose budget covers `per_cycle` queries on a pool of `d_u` samples.
pub fn effective_w(w: f64, d_u: usize, per_cycle: usize) -> f64 {
    if d_u == 0 || binarization_budget(w, d_u) >= per_cycle.min(d_u) {
        return w;
    }
    let raised = (per_cycle.min(d_u) as f64 / d_u as f64).min(1.0);
    tracing::info!(
        w,
        raised,
        d_u,
        per_cycle,
        "raising binarization rate to cover the query budget"
    );
    raised
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn locmax_examples() {
        assert_eq!(locmax(&[0.1, 0.9, 0.5], 1), vec![0, 1, 0]);
        assert_eq!(locmax(&[0.7, 0.7, 0.2], 1), vec![1, 0, 0]);
        assert_eq!(binarize_topw(&[0.3, 0.1, 0.2], 1.0).unwrap(), vec![1, 1, 1]);
        assert!(matches!(
            binarize_topw(&[0.3, 0.1], 0.25),
            Err(Error::ZeroBudget { .. })
        ));
    }

    #[test]
    fn budget_arithmetic() {
        assert_eq!(binarization_budget(0.25, 1472), 368);
        assert_eq!(binarization_budget(0.29, 100), 29);
        assert_eq!(effective_w(0.25, 100, 20), 0.25);
        let w = effective_w(0.25, 100, 40);
        assert_eq!(binarization_budget(w, 100), 40);
    }

    #[test]
    fn brute_force_max_cosine() {
        let mut rng = rng::stream(1, "emb", 0);
        let labeled: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let unlabeled: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let got = max_cosine_scores(&labeled, &unlabeled).unwrap();
        for (i, u) in unlabeled.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for f in &labeled {
                let dot: f64 = f.iter().zip(u).map(|(a, b)| a * b).sum();
                let nf: f64 = f.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
                best = best.max((dot / (nf * nu)).clamp(-1.0, 1.0));
            }
            assert_eq!(got[i], best);
        }
        let copy = max_cosine_scores(&labeled, &labeled[2..3]).unwrap();
        assert!((copy[0] - 1.0).abs() < 1e-12);
        assert!(matches!(
            max_cosine_scores(&[], &unlabeled),
            Err(Error::EmptyLabeledPool)
        ));
    }

    proptest! {
        #[test]
        fn locmax_matches_sort_oracle(values in prop::collection::vec(-1.0f64..1.0, 1..200), frac in 0.0f64..1.0) {
            let n = ((values.len() as f64) * frac) as usize;
            let flags = locmax(&values, n);
            prop_assert_eq!(flags.iter().filter(|&&f| f == 1).count(), n);
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            if n > 0 {
                let threshold = sorted[n - 1];
                for (v, f) in values.iter().zip(&flags) {
                    if *v > threshold { prop_assert_eq!(*f, 1); }
                    if *v < threshold { prop_assert_eq!(*f, 0); }
                }
            }
        }

        #[test]
        fn locmax_is_monotone(values in prop::collection::vec(-1.0f64..1.0, 2..100), k in 0usize..100, bump in 0.0f64..1.0) {
            let n = (values.len() / 3).max(1);
            let k = k % values.len();
            let flags = locmax(&values, n);
            let mut moved = values.clone();
            if flags[k] == 1 {
                moved[k] += bump;
                prop_assert_eq!(locmax(&moved, n)[k], 1);
            } else {
                moved[k] -= bump;
                prop_assert_eq!(locmax(&moved, n)[k], 0);
            }
        }
    }
}
