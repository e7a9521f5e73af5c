use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{Sample, CHANNELS};
use crate::error::{Error, Result};

/// Global per-channel min/max used for scaling, with a flag for degenerate channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: [f64; CHANNELS],
    pub max: [f64; CHANNELS],
    /// Channels whose max equals their min; those map to all-zeros.
    pub constant_channel: [bool; CHANNELS],
}

impl Normalization {
    pub fn fit(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData(
                "cannot normalize an empty dataset".into(),
            ));
        }
        let mut min = [f64::INFINITY; CHANNELS];
        let mut max = [f64::NEG_INFINITY; CHANNELS];
        for s in samples {
            for ch in 0..CHANNELS {
                for &v in s.channel(ch) {
                    if !v.is_finite() {
                        return Err(Error::NonFinite("sample signal"));
                    }
                    min[ch] = min[ch].min(v);
                    max[ch] = max[ch].max(v);
                }
            }
        }
        let mut constant_channel = [false; CHANNELS];
        for ch in 0..CHANNELS {
            constant_channel[ch] = max[ch] == min[ch];
        }
        Ok(Self {
            min,
            max,
            constant_channel,
        })
    }

    pub fn has_constant_channel(&self) -> bool {
        self.constant_channel.iter().any(|&c| c)
    }

    pub fn apply(&self, sample: &mut Sample) {
        for ch in 0..CHANNELS {
            let (lo, hi) = (self.min[ch], self.max[ch]);
            let constant = self.constant_channel[ch];
            for v in sample.channel_mut(ch) {
                *v = if constant {
                    0.0
                } else {
                    ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
                };
            }
        }
    }

    pub fn invert(&self, sample: &mut Sample) {
        for ch in 0..CHANNELS {
            let (lo, hi) = (self.min[ch], self.max[ch]);
            for v in sample.channel_mut(ch) {
                *v = if self.constant_channel[ch] {
                    lo
                } else {
                    lo + *v * (hi - lo)
                };
            }
        }
    }
}

/// Rescales every channel to `[0, 1]` using the global per-channel extremes of `samples`.
///
/// Constant channels are not an error: they are zeroed and reported through
/// [`Normalization::constant_channel`].
pub fn normalize_minmax(samples: &mut [Sample]) -> Result<Normalization> {
    let norm = Normalization::fit(samples)?;
    if norm.has_constant_channel() {
        warn!(channels = ?norm.constant_channel, "constant channel(s) mapped to zero");
    }
    for s in samples.iter_mut() {
        norm.apply(s);
    }
    Ok(norm)
}
