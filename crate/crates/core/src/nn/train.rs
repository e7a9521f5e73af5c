use serde::{Deserialize, Serialize};

use super::{accumulate_gradients, adam_step, AdamConfig, AdamState, Network};
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

/// Mini-batch Adam over `n` items for `cfg.epochs` epochs, reshuffling every epoch.
///
/// `per_item(net, epoch, i, grads)` adds item `i`'s loss gradient into `grads` and returns its
/// loss. Batch gradients are averaged. Returns the mean loss of every epoch.
pub fn fit<F>(
    net: &mut Network,
    n: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
    per_item: F,
) -> Result<Vec<f64>>
where
    F: Fn(&Network, usize, usize, &mut [f64]) -> Result<f64> + Sync + Send,
{
    let mut state = AdamState::new(net.param_count());
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let (loss, mut grads) = {
                let net: &Network = net;
                accumulate_gradients(net.param_count(), batch.len(), |k, buf| {
                    per_item(net, epoch, batch[k], buf)
                })?
            };
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite loss or gradient in epoch {epoch}"
                )));
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam_step(net.params_mut(), &grads, &mut state, &cfg.adam);
            total += loss;
        }
        history.push(total / n.max(1) as f64);
    }
    Ok(history)
}
