//! Finite-difference audit of every layer and loss the framework trains with.

use rand_distr::{Distribution, Uniform};

use crate::data::CHANNELS;
use crate::error::Result;
use crate::nn::{
    grad_check_piecewise, mse, softmax_cross_entropy, triplet_cosine_loss, GradCheckReport,
    LayerSpec, ModelSpec, Network, Shape,
};
use crate::rng;

pub const AUDIT_TOL: f64 = 1e-3;

/// Loss, parameter gradient and activation-pattern signature of `net` on a fixed batch.
type LossFn = dyn Fn(&Network) -> Result<(f64, Vec<f64>, u64)>;
type Case = (Network, Box<LossFn>);

fn combine(sig: u64, next: u64) -> u64 {
    sig.rotate_left(7) ^ next
}

fn random_inputs(shape: Shape, n: usize, seed: u64, tag: &str) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, tag, 0);
    let dist = Uniform::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| (0..shape.size()).map(|_| dist.sample(&mut rng)).collect())
        .collect()
}

fn check(name: &str, net: &Network, loss: &LossFn) -> Result<GradCheckReport> {
    let (_, analytic, _) = loss(net)?;
    let mut probe = net.clone();
    Ok(grad_check_piecewise(
        name,
        net.params(),
        &analytic,
        |p| {
            probe.params_mut().copy_from_slice(p);
            loss(&probe)
                .map(|(l, _, sig)| (l, sig))
                .unwrap_or((f64::NAN, 0))
        },
        AUDIT_TOL,
    ))
}

/// A network at a generic parameter point. Freshly initialized biases are exactly zero, which
/// puts every dead-input unit on a ReLU kink where finite differences are meaningless.
fn generic_network(spec: &ModelSpec, seed: u64) -> Result<Network> {
    let mut net = Network::new(spec.clone(), seed)?;
    let mut rng = rng::stream(seed, "audit/jitter", 0);
    let dist = Uniform::new(-0.05, 0.05).unwrap();
    for p in net.params_mut() {
        *p += dist.sample(&mut rng);
    }
    Ok(net)
}

fn cross_entropy_case(spec: ModelSpec, seed: u64) -> Result<(Network, Box<LossFn>)> {
    let net = generic_network(&spec, seed)?;
    let inputs = random_inputs(spec.input, 4, seed, "audit/ce");
    let loss = move |net: &Network| -> Result<(f64, Vec<f64>, u64)> {
        let mut grads = vec![0.0; net.param_count()];
        let mut total = 0.0;
        let mut sig = 0u64;
        for (k, x) in inputs.iter().enumerate() {
            let trace = net.forward(x)?;
            sig = combine(sig, net.activation_pattern(&trace));
            let (l, g) = softmax_cross_entropy(trace.output(), k % 2)?;
            net.backward(&trace, &g, &mut grads, false);
            total += l;
        }
        Ok((total, grads, sig))
    };
    Ok((net, Box::new(loss)))
}

fn mse_case(spec: ModelSpec, seed: u64) -> Result<(Network, Box<LossFn>)> {
    let net = generic_network(&spec, seed)?;
    let inputs = random_inputs(spec.input, 3, seed, "audit/mse-in");
    let targets = random_inputs(spec.output()?, 3, seed, "audit/mse-target");
    let loss = move |net: &Network| -> Result<(f64, Vec<f64>, u64)> {
        let mut grads = vec![0.0; net.param_count()];
        let mut total = 0.0;
        let mut sig = 0u64;
        for (x, t) in inputs.iter().zip(&targets) {
            let trace = net.forward(x)?;
            sig = combine(sig, net.activation_pattern(&trace));
            let (l, g) = mse(trace.output(), t);
            net.backward(&trace, &g, &mut grads, false);
            total += l;
        }
        Ok((total, grads, sig))
    };
    Ok((net, Box::new(loss)))
}

/// Triplet loss through an embedding network. The margin keeps every triplet off the clamp.
fn triplet_case(spec: ModelSpec, seed: u64) -> Result<(Network, Box<LossFn>)> {
    let net = generic_network(&spec, seed)?;
    let inputs = random_inputs(spec.input, 9, seed, "audit/triplet");
    let margin = 2.5;
    let loss = move |net: &Network| -> Result<(f64, Vec<f64>, u64)> {
        let mut grads = vec![0.0; net.param_count()];
        let mut total = 0.0;
        let mut sig = 0u64;
        for t in inputs.chunks(3) {
            let traces = [
                net.forward(&t[0])?,
                net.forward(&t[1])?,
                net.forward(&t[2])?,
            ];
            for tr in &traces {
                sig = combine(sig, net.activation_pattern(tr));
            }
            let g = triplet_cosine_loss(
                traces[0].output(),
                traces[1].output(),
                traces[2].output(),
                margin,
            )?;
            net.backward(&traces[0], &g.anchor, &mut grads, false);
            net.backward(&traces[1], &g.positive, &mut grads, false);
            net.backward(&traces[2], &g.negative, &mut grads, false);
            total += g.loss;
        }
        Ok((total, grads, sig))
    };
    Ok((net, Box::new(loss)))
}

/// Decoder-shaped stack exercising the upsampling layers.
pub fn decoder_probe_spec() -> ModelSpec {
    ModelSpec {
        input: Shape::vector(6),
        layers: vec![
            LayerSpec::Dense {
                inputs: 6,
                outputs: 16,
            },
            LayerSpec::Relu,
            LayerSpec::Reshape {
                channels: 4,
                len: 4,
            },
            LayerSpec::ConvTranspose1d {
                in_channels: 4,
                out_channels: 3,
                kernel: 3,
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Upsample { factor: 2 },
            LayerSpec::ConvTranspose1d {
                in_channels: 3,
                out_channels: CHANNELS,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Sigmoid,
        ],
    }
}

/// Runs the full suite and returns one report per case.
pub fn gradient_audit(seed: u64) -> Result<Vec<GradCheckReport>> {
    let small = Shape::new(CHANNELS, 12);
    let cases: Vec<(&str, Result<Case>)> = vec![
        (
            "dense+cross_entropy",
            cross_entropy_case(
                ModelSpec {
                    input: small,
                    layers: vec![LayerSpec::Dense {
                        inputs: small.size(),
                        outputs: 2,
                    }],
                },
                seed,
            ),
        ),
        (
            "conv1d(stride 2)+relu+maxpool+gap+dense+cross_entropy",
            cross_entropy_case(
                ModelSpec {
                    input: small,
                    layers: vec![
                        LayerSpec::Conv1d {
                            in_channels: CHANNELS,
                            out_channels: 4,
                            kernel: 3,
                            stride: 2,
                        },
                        LayerSpec::Relu,
                        LayerSpec::MaxPool { size: 2 },
                        LayerSpec::GlobalAvgPool,
                        LayerSpec::Dense {
                            inputs: 4,
                            outputs: 2,
                        },
                    ],
                },
                seed,
            ),
        ),
        (
            "classifier+cross_entropy",
            cross_entropy_case(ModelSpec::classifier(32), seed),
        ),
        (
            "embedding+l2norm+triplet",
            triplet_case(ModelSpec::embedding(32, 16), seed),
        ),
        (
            "dense+reshape+conv_transpose+upsample+sigmoid+mse",
            mse_case(decoder_probe_spec(), seed),
        ),
        (
            "wta_autoencoder+mse",
            crate::wta::autoencoder_spec(32, 16, 4).and_then(|spec| mse_case(spec, seed)),
        ),
        (
            "conv1d+sigmoid+dense+mse",
            mse_case(
                ModelSpec {
                    input: small,
                    layers: vec![
                        LayerSpec::Conv1d {
                            in_channels: CHANNELS,
                            out_channels: 2,
                            kernel: 5,
                            stride: 1,
                        },
                        LayerSpec::Sigmoid,
                        LayerSpec::Dense {
                            inputs: 16,
                            outputs: 5,
                        },
                    ],
                },
                seed,
            ),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, case)| {
            let (net, loss) = case?;
            check(name, &net, loss.as_ref())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        for seed in 0..3 {
            for report in gradient_audit(seed).unwrap() {
                assert!(report.passed, "{report:?}");
                assert!(report.skipped * 10 < report.checked, "{report:?}");
            }
        }
    }
}
