//! Synthetic three-machine monitoring benchmark.
//!
//! Two small machines (S1, S2) of the same model and one large machine (L1) run the same
//! periodic toolpath. Each sample is a window of the (x, y, z) position signal starting at a
//! random point of the path. S1 and S2 differ only by noise level and a small phase offset;
//! L1 is shifted in level and runs the path at a different rate. Abnormal samples carry one
//! square pulse on the z channel, standing in for a void in the printed part.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    self, ClassLabel, Dataset, DatasetMeta, Machine, Normalization, Provenance, ProvenanceStore,
    Sample, SampleId, CHANNELS, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::{exec, rng};

/// Two-tone sinusoid for one channel. Frequencies are in cycles per window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub level: f64,
    pub amp1: f64,
    pub freq1: f64,
    pub phase1: f64,
    pub amp2: f64,
    pub freq2: f64,
    pub phase2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub offset: [f64; CHANNELS],
    pub freq_scale: f64,
}

impl Shift {
    pub const NONE: Shift = Shift {
        offset: [0.0; CHANNELS],
        freq_scale: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub machine: Machine,
    pub profile: [ChannelProfile; CHANNELS],
    pub noise_sd: f64,
    /// Constant phase added to every channel (machine-level offset).
    pub phase_offset: f64,
    /// Per-sample, per-channel phase jitter (standard deviation, radians).
    pub phase_jitter: f64,
    pub shift: Shift,
}

/// The shared toolpath: circular x/y motion with a slow z drift.
pub fn base_profile() -> [ChannelProfile; CHANNELS] {
    [
        ChannelProfile {
            level: 0.45,
            amp1: 0.25,
            freq1: 2.0,
            phase1: 0.0,
            amp2: 0.05,
            freq2: 6.0,
            phase2: 0.0,
        },
        ChannelProfile {
            level: 0.45,
            amp1: 0.25,
            freq1: 2.0,
            phase1: PI / 2.0,
            amp2: 0.05,
            freq2: 6.0,
            phase2: PI / 2.0,
        },
        ChannelProfile {
            level: 0.30,
            amp1: 0.03,
            freq1: 1.0,
            phase1: 0.0,
            amp2: 0.0,
            freq2: 0.0,
            phase2: 0.0,
        },
    ]
}

impl MachineSpec {
    pub fn default_for(machine: Machine) -> Self {
        let profile = base_profile();
        match machine {
            Machine::S1 => Self {
                machine,
                profile,
                noise_sd: 0.020,
                phase_offset: 0.0,
                phase_jitter: 0.05,
                shift: Shift::NONE,
            },
            Machine::S2 => Self {
                machine,
                profile,
                noise_sd: 0.024,
                phase_offset: 0.1,
                phase_jitter: 0.05,
                shift: Shift::NONE,
            },
            Machine::L1 => Self {
                machine,
                profile,
                noise_sd: 0.045,
                phase_offset: 0.0,
                phase_jitter: 0.05,
                shift: Shift {
                    offset: [0.15; CHANNELS],
                    freq_scale: 1.3,
                },
            },
        }
    }

    /// Shift and noise settings of the `hard` preset: a milder mismatch.
    pub fn hard_for(machine: Machine) -> Self {
        let mut spec = Self::default_for(machine);
        if machine == Machine::L1 {
            spec.noise_sd = 0.035;
            spec.shift = Shift {
                offset: [0.07; CHANNELS],
                freq_scale: 1.15,
            };
        }
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    /// Pulse length as a fraction of the window.
    pub segment_fraction: f64,
    /// Pulse amplitude in units of the machine's noise standard deviation.
    pub amplitude_factor: f64,
    pub channel: usize,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        Self {
            segment_fraction: 0.125,
            amplitude_factor: 3.0,
            channel: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub abnormal: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.normal + self.abnormal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub window: usize,
    pub s1: ClassCounts,
    pub s2: ClassCounts,
    pub l1: ClassCounts,
    pub anomaly: AnomalySpec,
    /// Require more L1 samples than S1 and S2 combined.
    pub require_large_ratio: bool,
    pub machines: Vec<MachineSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Default,
    Hard,
    /// Default machines with a pool large enough for 800 queries of similar-machine data.
    Ablation,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Preset::Default),
            "hard" => Ok(Preset::Hard),
            "ablation" => Ok(Preset::Ablation),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::preset(Preset::Default, 0)
    }
}

impl GeneratorConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let spec = match preset {
            Preset::Default | Preset::Ablation => MachineSpec::default_for,
            Preset::Hard => MachineSpec::hard_for,
        };
        let (s, l) = match preset {
            Preset::Ablation => (
                ClassCounts {
                    normal: 720,
                    abnormal: 480,
                },
                ClassCounts {
                    normal: 1300,
                    abnormal: 1300,
                },
            ),
            _ => (
                ClassCounts {
                    normal: 240,
                    abnormal: 160,
                },
                ClassCounts {
                    normal: 600,
                    abnormal: 600,
                },
            ),
        };
        Self {
            window: DEFAULT_WINDOW,
            s1: s,
            s2: s,
            l1: l,
            anomaly: AnomalySpec::default(),
            require_large_ratio: true,
            machines: Machine::ALL.iter().map(|&m| spec(m)).collect(),
            seed,
        }
    }

    /// Same machines and anomaly model with every count multiplied by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for c in [&mut self.s1, &mut self.s2, &mut self.l1] {
            c.normal = (c.normal as f64 * factor).round() as usize;
            c.abnormal = (c.abnormal as f64 * factor).round() as usize;
        }
        self
    }

    pub fn counts(&self, machine: Machine) -> ClassCounts {
        match machine {
            Machine::S1 => self.s1,
            Machine::S2 => self.s2,
            Machine::L1 => self.l1,
        }
    }

    pub fn machine_spec(&self, machine: Machine) -> Result<&MachineSpec> {
        self.machines
            .iter()
            .find(|m| m.machine == machine)
            .ok_or_else(|| Error::InvalidConfig(format!("no spec for machine {machine}")))
    }

    pub fn total(&self) -> usize {
        self.s1.total() + self.s2.total() + self.l1.total()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 16 {
            return Err(Error::InvalidConfig(format!(
                "window {} is too short",
                self.window
            )));
        }
        if self.require_large_ratio && self.l1.total() <= self.s1.total() + self.s2.total() {
            return Err(Error::InvalidConfig(format!(
                "L1 count {} must exceed S1 + S2 = {}",
                self.l1.total(),
                self.s1.total() + self.s2.total()
            )));
        }
        let a = &self.anomaly;
        if !(a.segment_fraction > 0.0 && a.segment_fraction <= 1.0) || a.channel >= CHANNELS {
            return Err(Error::InvalidConfig("bad anomaly segment".into()));
        }
        for m in Machine::ALL {
            let spec = self.machine_spec(m)?;
            if spec.noise_sd.is_nan()
                || spec.noise_sd < 0.0
                || spec.shift.freq_scale.is_nan()
                || spec.shift.freq_scale <= 0.0
            {
                return Err(Error::InvalidConfig(format!("bad spec for {m}")));
            }
        }
        Ok(())
    }
}

fn render(spec: &MachineSpec, window: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, spec.noise_sd.max(f64::MIN_POSITIVE)).unwrap();
    let jitter = Normal::new(0.0, spec.phase_jitter.max(f64::MIN_POSITIVE)).unwrap();
    // Where along the periodic toolpath this window starts.
    let start = rng.random_range(0.0..2.0 * PI);
    let mut values = vec![0.0; window * CHANNELS];
    for ch in 0..CHANNELS {
        let p = &spec.profile[ch];
        let j = jitter.sample(rng);
        let fs = spec.shift.freq_scale;
        for t in 0..window {
            let u = t as f64 / window as f64;
            let v = p.level
                + spec.shift.offset[ch]
                + p.amp1
                    * (2.0 * PI * p.freq1 * fs * u + start + p.phase1 + spec.phase_offset + j)
                        .sin()
                + p.amp2
                    * (2.0 * PI * p.freq2 * fs * u
                        + 3.0 * start
                        + p.phase2
                        + spec.phase_offset
                        + j)
                        .sin();
            values[ch * window + t] = v + if spec.noise_sd > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
        }
    }
    values
}

fn add_pulse(
    values: &mut [f64],
    window: usize,
    spec: &MachineSpec,
    anomaly: &AnomalySpec,
    rng: &mut rng::Rng,
) {
    let len = ((anomaly.segment_fraction * window as f64).round() as usize).clamp(1, window);
    let start = rng.random_range(0..=window - len);
    let amp = anomaly.amplitude_factor * spec.noise_sd;
    let row = &mut values[anomaly.channel * window..(anomaly.channel + 1) * window];
    for v in &mut row[start..start + len] {
        *v += amp;
    }
}

/// Generates `n_normal` then `n_abnormal` windows for one machine.
///
/// Sample `k` draws from its own stream, so output does not depend on evaluation order.
/// Ids are `first_id..first_id + n_normal + n_abnormal`.
pub fn generate_machine_data(
    spec: &MachineSpec,
    n_normal: usize,
    n_abnormal: usize,
    anomaly: &AnomalySpec,
    window: usize,
    first_id: SampleId,
    seed: u64,
) -> Vec<(Sample, Provenance)> {
    let tag = format!("synth/{}", spec.machine);
    exec::map_range(n_normal + n_abnormal, |k| {
        let mut rng = rng::stream(seed, &tag, k as u64);
        let mut values = render(spec, window, &mut rng);
        let class_label = if k < n_normal {
            ClassLabel::Normal
        } else {
            add_pulse(&mut values, window, spec, anomaly, &mut rng);
            ClassLabel::Abnormal
        };
        let sample = Sample::from_channel_major(first_id + k as SampleId, window, values)
            .expect("rendered window has the configured length");
        (
            sample,
            Provenance {
                machine: spec.machine,
                class_label,
            },
        )
    })
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    /// Raw (un-normalized) samples in ascending id order.
    pub samples: Vec<Sample>,
    pub provenance: ProvenanceStore,
}

impl Benchmark {
    /// Min-max normalizes the samples and wraps them in a [`Dataset`].
    pub fn into_dataset(self) -> Result<(Dataset, ProvenanceStore, Normalization)> {
        let mut samples = self.samples;
        let norm = data::normalize_minmax(&mut samples)?;
        Ok((Dataset::new(samples)?, self.provenance, norm))
    }
}

/// Generates every machine's data and assigns ids through a seeded permutation, so an id
/// reveals nothing about machine or class.
pub fn generate_benchmark(config: &GeneratorConfig) -> Result<Benchmark> {
    config.validate()?;
    let mut all = Vec::with_capacity(config.total());
    for m in Machine::ALL {
        let c = config.counts(m);
        all.extend(generate_machine_data(
            config.machine_spec(m)?,
            c.normal,
            c.abnormal,
            &config.anomaly,
            config.window,
            0,
            config.seed,
        ));
    }
    let mut ids: Vec<SampleId> = (0..all.len() as SampleId).collect();
    ids.shuffle(&mut rng::stream(config.seed, "synth/ids", 0));
    let mut provenance = ProvenanceStore::new();
    let mut samples: Vec<Sample> = all
        .into_iter()
        .zip(ids)
        .map(|((s, p), id)| {
            provenance.insert(id, p);
            Sample::from_channel_major(id, s.len(), s.values().to_vec()).unwrap()
        })
        .collect();
    samples.sort_by_key(|s| s.id);
    Ok(Benchmark {
        samples,
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub total: usize,
    pub per_machine: Vec<(Machine, ClassCounts)>,
    pub large_fraction: f64,
}

/// Generates the benchmark and writes it in the dataset directory format.
pub fn build_benchmark(config: &GeneratorConfig, dir: &Path) -> Result<BenchmarkSummary> {
    let bench = generate_benchmark(config)?;
    let meta = DatasetMeta {
        window: config.window,
        channels: vec!["x".into(), "y".into(), "z".into()],
        normalization: Normalization::fit(&bench.samples)?,
    };
    data::write_dataset(dir, &bench.samples, &bench.provenance, &meta)?;
    let per_machine: Vec<_> = Machine::ALL
        .iter()
        .map(|&m| (m, config.counts(m)))
        .collect();
    Ok(BenchmarkSummary {
        total: config.total(),
        large_fraction: config.l1.total() as f64 / config.total().max(1) as f64,
        per_machine,
    })
}
