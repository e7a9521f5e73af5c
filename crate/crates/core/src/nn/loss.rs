//! Losses with analytic gradients.

use super::network::dot;
use crate::error::{Error, Result};

/// Probabilities are clipped into `[PROB_CLIP, 1 - PROB_CLIP]` before any logarithm.
pub const PROB_CLIP: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// `-ln softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    if label >= logits.len() {
        return Err(Error::shape(format!("label < {}", logits.len()), label));
    }
    // log-sum-exp form of -ln(clip(p[label])), accurate when p[label] is close to 1.
    let (imax, zmax) =
        logits
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, z)| {
                if z > best.1 {
                    (i, z)
                } else {
                    best
                }
            });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != imax)
        .map(|(_, z)| (z - zmax).exp())
        .sum();
    let loss =
        (rest.ln_1p() + (zmax - logits[label])).clamp(-(-PROB_CLIP).ln_1p(), -PROB_CLIP.ln());
    let mut p = softmax(logits);
    p[label] -= 1.0;
    Ok((loss, p))
}

/// Batch-mean cross-entropy. Returns the loss and the gradient for each row.
pub fn cross_entropy_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch(logits.len(), labels.len()));
    }
    if logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let scale = 1.0 / logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &label) in logits.iter().zip(labels) {
        let (l, mut g) = softmax_cross_entropy(row, label)?;
        total += l;
        g.iter_mut().for_each(|v| *v *= scale);
        grads.push(g);
    }
    Ok((total * scale, grads))
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine similarity with its gradients with respect to both arguments.
pub fn cosine_with_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let c = dot(u, v) / (nu * nv);
    let du = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - c * a / (nu * nu))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(a, b)| a / (nu * nv) - c * b / (nv * nv))
        .collect();
    Ok((c, du, dv))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// `max(cos(a, n) - cos(a, p) + margin, 0)` with gradients; zero gradient when clamped.
pub fn triplet_cosine_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<TripletGrad> {
    let (c_ap, da_p, dp) = cosine_with_grad(anchor, positive)?;
    let (c_an, da_n, dn) = cosine_with_grad(anchor, negative)?;
    let raw = c_an - c_ap + margin;
    if raw <= 0.0 {
        let z = vec![0.0; anchor.len()];
        return Ok(TripletGrad {
            loss: 0.0,
            anchor: z.clone(),
            positive: z.clone(),
            negative: z,
        });
    }
    Ok(TripletGrad {
        loss: raw,
        anchor: da_n.iter().zip(&da_p).map(|(n, p)| n - p).collect(),
        positive: dp.into_iter().map(|v| -v).collect(),
        negative: dn,
    })
}

/// Batch mean of [`triplet_cosine_loss`]; gradients are scaled by `1 / batch`.
pub fn batched_triplet_loss(
    triplets: &[(&[f64], &[f64], &[f64])],
    margin: f64,
) -> Result<(f64, Vec<TripletGrad>)> {
    if triplets.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(triplets.len());
    for (a, p, n) in triplets {
        let mut g = triplet_cosine_loss(a, p, n, margin)?;
        total += g.loss;
        for v in g
            .anchor
            .iter_mut()
            .chain(g.positive.iter_mut())
            .chain(g.negative.iter_mut())
        {
            *v *= scale;
        }
        grads.push(g);
    }
    Ok((total * scale, grads))
}

/// Mean squared error and its gradient.
pub fn mse(prediction: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = prediction.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let (l, _) = softmax_cross_entropy(&[10.0, -10.0], 0).unwrap();
        let exact = (-20.0f64).exp().ln_1p();
        assert!(close(l, exact, 1e-22));
        assert!(close(l, 2.061e-9, 1e-12));

        for label in 0..2 {
            let (l, g) = softmax_cross_entropy(&[0.0, 0.0], label).unwrap();
            assert!(close(l, std::f64::consts::LN_2, 1e-15));
            assert!(close(g[label], -0.5, 1e-15));
        }
        assert!(matches!(
            softmax_cross_entropy(&[f64::NAN, 0.0], 0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_central_differences() {
        let rows = vec![vec![0.3, -1.2], vec![2.0, 0.5], vec![-0.7, -0.1]];
        let labels = vec![0, 1, 1];
        let (_, grads) = cross_entropy_loss(&rows, &labels).unwrap();
        let h = 1e-6;
        for r in 0..rows.len() {
            for k in 0..2 {
                let mut plus = rows.clone();
                let mut minus = rows.clone();
                plus[r][k] += h;
                minus[r][k] -= h;
                let fd = (cross_entropy_loss(&plus, &labels).unwrap().0
                    - cross_entropy_loss(&minus, &labels).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - grads[r][k]).abs() / grads[r][k].abs().max(1e-12);
                assert!(rel < 1e-5, "row {r} col {k}: {fd} vs {}", grads[r][k]);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        for logits in [[50.0, -50.0], [0.1, 0.2], [-700.0, 700.0]] {
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 5.0];
        assert!(close(cosine_similarity(&v, &v).unwrap(), 1.0, 1e-15));
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(close(
            cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(),
            0.974631846,
            1e-9
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn triplet_examples() {
        // cos(a,p) = 1, cos(a,n) = -1: clamped.
        let g = triplet_cosine_loss(&[1.0, 0.0], &[2.0, 0.0], &[-1.0, 0.0], 0.1).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.anchor.iter().all(|v| *v == 0.0));

        // Identical inputs: the cosine terms cancel.
        let a = [0.4, 0.1, -0.3];
        let g = triplet_cosine_loss(&a, &a, &a, 0.2).unwrap();
        assert!(close(g.loss, 0.2, 1e-15));

        // cos(a,n) = 0.8, cos(a,p) = 0.3, margin 0.2.
        let a = [1.0, 0.0];
        let p = [0.3, (1.0f64 - 0.09).sqrt()];
        let n = [0.8, 0.6];
        let g = triplet_cosine_loss(&a, &p, &n, 0.2).unwrap();
        assert!(close(g.loss, 0.7, 1e-12));
    }

    #[test]
    fn mse_gradient() {
        let (l, g) = mse(&[1.0, 2.0], &[0.0, 4.0]);
        assert!(close(l, 2.5, 1e-15));
        assert_eq!(g, vec![1.0, -2.0]);
    }
}
