//! Small differentiable-model engine: 1-D convolutional and dense layers, the losses the
//! framework trains with, Adam, finite-difference gradient checks and checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod network;
mod spec;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, tensor_entries, CheckpointMeta, TensorEntry,
};
pub use gradcheck::{grad_check, grad_check_piecewise, GradCheckReport, FD_STEP};
pub use loss::{
    batched_triplet_loss, clip_prob, cosine_similarity, cosine_with_grad, cross_entropy_loss, mse,
    softmax, softmax_cross_entropy, triplet_cosine_loss, TripletGrad, PROB_CLIP,
};
pub use network::{Network, ParamTensor, Trace};
pub use spec::{LayerSpec, ModelSpec, Shape};
pub use train::{fit, TrainConfig};

use crate::exec;

/// Items per gradient-accumulation chunk. Chunk boundaries are fixed so the summation
/// order, and therefore the result, is independent of the number of worker threads.
pub const GRAD_CHUNK: usize = 8;

/// Sums `per_item(i, grads)` over `0..n` with a deterministic chunked reduction.
///
/// `per_item` must add item `i`'s gradient into the buffer and return its loss term.
pub fn accumulate_gradients<F>(
    param_len: usize,
    n: usize,
    per_item: F,
) -> crate::Result<(f64, Vec<f64>)>
where
    F: Fn(usize, &mut [f64]) -> crate::Result<f64> + Sync + Send,
{
    let chunks = n.div_ceil(GRAD_CHUNK);
    let partials = exec::map_range(chunks, |c| -> crate::Result<(f64, Vec<f64>)> {
        let mut buf = vec![0.0; param_len];
        let mut loss = 0.0;
        for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n) {
            loss += per_item(i, &mut buf)?;
        }
        Ok((loss, buf))
    });
    let mut total = 0.0;
    let mut grads = vec![0.0; param_len];
    for part in partials {
        let (l, g) = part?;
        total += l;
        for (acc, v) in grads.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    Ok((total, grads))
}

/// Builds mini-batches over a shuffled index order.
pub fn minibatches(order: &[usize], batch: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch.max(1))
}
