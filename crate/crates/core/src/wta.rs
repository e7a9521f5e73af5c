//! Winner-take-all autoencoder and the two latent-space augmentations used to build
//! positive pairs for contrastive training.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Sample, CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{self, mse, LayerSpec, ModelSpec, Network, Shape, TrainConfig};
use crate::{exec, rng};

/// Which latent components receive Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// `y_j > σ_e`.
    #[default]
    Printed,
    /// `|y_j − mean(y)| > σ_e`, components outside one standard deviation.
    Prose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WtaConfig {
    pub latent: usize,
    /// Fraction of latent units kept per sample.
    pub k_wta: f64,
    pub mask_mode: MaskMode,
    pub train: TrainConfig,
}

impl Default for WtaConfig {
    fn default() -> Self {
        Self {
            latent: 32,
            k_wta: 0.1,
            mask_mode: MaskMode::Printed,
            train: TrainConfig::new(30),
        }
    }
}

impl WtaConfig {
    pub fn winners(&self) -> usize {
        ((self.k_wta * self.latent as f64) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Encoder (conv trunk → dense → ReLU → WTA) followed by the transposed decoder.
pub fn autoencoder_spec(window: usize, latent: usize, winners: usize) -> Result<ModelSpec> {
    let trunk = ModelSpec {
        input: Shape::new(CHANNELS, window),
        layers: ModelSpec::conv_trunk(),
    };
    let feat = trunk.output()?;
    let mut layers = ModelSpec::conv_trunk();
    layers.extend([
        LayerSpec::Dense {
            inputs: feat.size(),
            outputs: latent,
        },
        LayerSpec::Relu,
        LayerSpec::WinnerTakeAll { keep: winners },
        LayerSpec::Dense {
            inputs: latent,
            outputs: feat.size(),
        },
        LayerSpec::Relu,
        LayerSpec::Reshape {
            channels: feat.channels,
            len: feat.len,
        },
        LayerSpec::ConvTranspose1d {
            in_channels: 16,
            out_channels: 8,
            kernel: 5,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Upsample { factor: 2 },
        LayerSpec::ConvTranspose1d {
            in_channels: 8,
            out_channels: CHANNELS,
            kernel: 5,
            stride: 1,
        },
        LayerSpec::Sigmoid,
    ]);
    let spec = ModelSpec {
        input: Shape::new(CHANNELS, window),
        layers,
    };
    if spec.output()? != spec.input {
        return Err(Error::InvalidConfig(format!(
            "window {window} does not survive the encoder/decoder round trip"
        )));
    }
    Ok(spec)
}

/// Number of layers up to and including the WTA layer.
fn encoder_len() -> usize {
    ModelSpec::conv_trunk().len() + 3
}

#[derive(Debug, Clone, PartialEq)]
pub struct WtaState {
    pub autoencoder: Network,
    pub encoder: Network,
    pub decoder: Network,
    pub k_wta: f64,
    pub latent: usize,
    pub mask_mode: MaskMode,
}

impl WtaState {
    pub fn from_autoencoder(autoencoder: Network, cfg: &WtaConfig) -> Result<Self> {
        let (encoder, decoder) = autoencoder.split_at(encoder_len())?;
        Ok(Self {
            autoencoder,
            encoder,
            decoder,
            k_wta: cfg.k_wta,
            latent: cfg.latent,
            mask_mode: cfg.mask_mode,
        })
    }

    /// Sparse latent code `y_e`.
    pub fn encode(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.encoder.predict(sample.values())
    }

    pub fn decode(&self, latent: &[f64], id: u32) -> Result<Sample> {
        let values = self.decoder.predict(latent)?;
        Sample::from_channel_major(id, values.len() / CHANNELS, values)
    }

    pub fn reconstruct(&self, sample: &Sample) -> Result<Sample> {
        self.decode(&self.encode(sample)?, sample.id)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut sections = serde_json::Map::new();
        sections.insert(
            "wta".into(),
            serde_json::json!({ "k_wta": self.k_wta, "n": self.latent, "mask_mode": self.mask_mode }),
        );
        nn::save_checkpoint(&self.autoencoder, stem, sections)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (net, meta) = nn::load_checkpoint(stem)?;
        let wta = meta
            .sections
            .get("wta")
            .ok_or_else(|| Error::Malformed("checkpoint has no wta section".into()))?;
        let cfg = WtaConfig {
            latent: wta["n"]
                .as_u64()
                .ok_or_else(|| Error::Malformed("wta.n".into()))? as usize,
            k_wta: wta["k_wta"]
                .as_f64()
                .ok_or_else(|| Error::Malformed("wta.k_wta".into()))?,
            mask_mode: serde_json::from_value(wta["mask_mode"].clone()).unwrap_or_default(),
            ..WtaConfig::default()
        };
        Self::from_autoencoder(net, &cfg)
    }
}

/// Trains the autoencoder to reconstruct `samples` under mean-squared error.
pub fn train_wta(samples: &[&Sample], cfg: &WtaConfig, seed: u64) -> Result<WtaState> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(
            "no samples to train the autoencoder".into(),
        ));
    }
    if !(cfg.k_wta > 0.0 && cfg.k_wta <= 1.0) || cfg.latent == 0 {
        return Err(Error::InvalidConfig(format!(
            "k_wta {} / latent {}",
            cfg.k_wta, cfg.latent
        )));
    }
    let spec = autoencoder_spec(samples[0].len(), cfg.latent, cfg.winners())?;
    let mut net = Network::new(spec, rng::derive_seed(seed, "wta/init", 0))?;
    let mut order = rng::stream(seed, "wta/order", 0);
    nn::fit(
        &mut net,
        samples.len(),
        &cfg.train,
        &mut order,
        |net, _, i, grads| {
            let x = samples[i].values();
            let trace = net.forward(x)?;
            let (loss, g) = mse(trace.output(), x);
            net.backward(&trace, &g, grads, false);
            Ok(loss)
        },
    )?;
    WtaState::from_autoencoder(net, cfg)
}

/// Mean reconstruction error over `samples`.
pub fn reconstruction_error(state: &WtaState, samples: &[&Sample]) -> Result<f64> {
    let errs: Result<Vec<f64>> = exec::map_slice(samples, |s| {
        let out = state.autoencoder.predict(s.values())?;
        Ok(mse(&out, s.values()).0)
    })
    .into_iter()
    .collect();
    Ok(errs?.iter().sum::<f64>() / samples.len().max(1) as f64)
}

/// Population standard deviation of the components.
pub fn latent_sd(y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    let mean = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `y + n` with `n_j = r_j · σ_e / 5 · M_j`, `r_j ~ N(0, 1)` drawn per component.
pub fn augment_gaussian(y: &[f64], mode: MaskMode, rng: &mut rng::Rng) -> Vec<f64> {
    let sd = latent_sd(y);
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    y.iter()
        .map(|&v| {
            let r: f64 = StandardNormal.sample(rng);
            let masked = match mode {
                MaskMode::Printed => v > sd,
                MaskMode::Prose => (v - mean).abs() > sd,
            };
            if masked {
                v + r * sd / 5.0
            } else {
                v
            }
        })
        .collect()
}

/// Binary code: 1 where `y_j · |y_j| > σ_e`.
pub fn augment_threshold(y: &[f64]) -> Vec<f64> {
    let sd = latent_sd(y);
    y.iter()
        .map(|&v| if v * v.abs() > sd { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    Gaussian,
    Threshold,
}

/// Encodes, applies one augmentation in latent space and decodes.
pub fn augment(state: &WtaState, sample: &Sample, kind: Augmentation, seed: u64) -> Result<Sample> {
    let y = state.encode(sample)?;
    let z = match kind {
        Augmentation::Gaussian => augment_gaussian(
            &y,
            state.mask_mode,
            &mut rng::stream(seed, "wta/gaussian", sample.id as u64),
        ),
        Augmentation::Threshold => augment_threshold(&y),
    };
    state.decode(&z, sample.id)
}

/// Both augmentations of one sample.
pub fn make_positive_pair(
    sample: &Sample,
    state: &WtaState,
    seed: u64,
) -> Result<(Sample, Sample)> {
    Ok((
        augment(state, sample, Augmentation::Gaussian, seed)?,
        augment(state, sample, Augmentation::Threshold, seed)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::normalize_minmax;
    use crate::synth::{generate_benchmark, GeneratorConfig};

    fn small_set(n: usize) -> Vec<Sample> {
        let mut cfg = GeneratorConfig::default().scaled(0.05);
        cfg.seed = 2;
        let mut bench = generate_benchmark(&cfg).unwrap();
        normalize_minmax(&mut bench.samples).unwrap();
        bench.samples.truncate(n);
        bench.samples
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(augment_threshold(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(
            augment_threshold(&[10.0, 0.1, -0.1, 0.05]),
            vec![1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn gaussian_leaves_unmasked_components_alone() {
        let mut rng = rng::stream(1, "t", 0);
        assert_eq!(
            augment_gaussian(&[0.3; 8], MaskMode::Printed, &mut rng),
            vec![0.3; 8]
        );
        let y = [0.0, 0.0, 2.0, 0.1, 0.0, 3.0, 0.0, 0.0];
        let sd = latent_sd(&y);
        let out = augment_gaussian(&y, MaskMode::Printed, &mut rng);
        for (a, b) in y.iter().zip(&out) {
            if *a <= sd {
                assert_eq!(a.to_bits(), b.to_bits());
            } else {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn gaussian_noise_scale_matches_monte_carlo() {
        let y = [0.0, 0.0, 2.0, 0.1, 0.0, 3.0, 0.0, 0.0];
        let sd = latent_sd(&y);
        let mut rng = rng::stream(7, "mc", 0);
        let draws = 10_000;
        let mut sum_sq = [0.0; 2];
        let mut sum = [0.0; 2];
        for _ in 0..draws {
            let out = augment_gaussian(&y, MaskMode::Printed, &mut rng);
            for (k, idx) in [2usize, 5].into_iter().enumerate() {
                let d = out[idx] - y[idx];
                sum[k] += d;
                sum_sq[k] += d * d;
            }
        }
        for k in 0..2 {
            let mean = sum[k] / draws as f64;
            let est = (sum_sq[k] / draws as f64 - mean * mean).sqrt();
            assert!((est / (sd / 5.0) - 1.0).abs() < 0.05, "sd estimate {est}");
        }
    }

    #[test]
    fn prose_mask_uses_distance_from_mean() {
        let y = [-3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut rng = rng::stream(3, "t", 0);
        let printed = augment_gaussian(&y, MaskMode::Printed, &mut rng);
        let prose = augment_gaussian(&y, MaskMode::Prose, &mut rng);
        assert_eq!(printed[0], -3.0);
        assert_ne!(prose[0], -3.0);
    }

    #[test]
    fn sparsity_bound_and_shapes() {
        let samples = small_set(12);
        let refs: Vec<&Sample> = samples.iter().collect();
        let cfg = WtaConfig {
            train: TrainConfig::new(1),
            ..WtaConfig::default()
        };
        let state = train_wta(&refs, &cfg, 1).unwrap();
        for s in &samples {
            let y = state.encode(s).unwrap();
            assert_eq!(y.len(), 32);
            assert!(y.iter().filter(|v| **v != 0.0).count() <= 4);
            let (a, b) = make_positive_pair(s, &state, 5).unwrap();
            assert_eq!((a.len(), b.len()), (s.len(), s.len()));
            assert_eq!(make_positive_pair(s, &state, 5).unwrap(), (a, b));
        }
    }

    #[test]
    fn full_keep_rate_is_a_plain_autoencoder() {
        let samples = small_set(6);
        let refs: Vec<&Sample> = samples.iter().collect();
        let cfg = WtaConfig {
            k_wta: 1.0,
            train: TrainConfig::new(1),
            ..WtaConfig::default()
        };
        let state = train_wta(&refs, &cfg, 1).unwrap();
        assert_eq!(cfg.winners(), 32);
        let plain = {
            let mut spec = state.autoencoder.spec().clone();
            spec.layers
                .retain(|l| !matches!(l, LayerSpec::WinnerTakeAll { .. }));
            let mut net = Network::zeros(spec).unwrap();
            net.set_params(state.autoencoder.params().to_vec()).unwrap();
            net
        };
        for s in &samples {
            assert_eq!(
                state.autoencoder.predict(s.values()).unwrap(),
                plain.predict(s.values()).unwrap()
            );
        }
    }

    #[test]
    fn training_reduces_reconstruction_error() {
        let samples = small_set(100);
        let (train, held) = samples.split_at(80);
        let train: Vec<&Sample> = train.iter().collect();
        let held: Vec<&Sample> = held.iter().collect();
        let untrained = train_wta(
            &train,
            &WtaConfig {
                train: TrainConfig::new(0),
                ..Default::default()
            },
            4,
        )
        .unwrap();
        let trained = train_wta(&train, &WtaConfig::default(), 4).unwrap();
        let before = reconstruction_error(&untrained, &held).unwrap();
        let after = reconstruction_error(&trained, &held).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let samples = small_set(4);
        let refs: Vec<&Sample> = samples.iter().collect();
        let state = train_wta(
            &refs,
            &WtaConfig {
                train: TrainConfig::new(1),
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("wta");
        state.save(&stem).unwrap();
        assert_eq!(WtaState::load(&stem).unwrap(), state);
    }
}
