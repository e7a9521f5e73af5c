//! Dataset representation, normalization, pool bookkeeping and initial sampling.
//!
//! Class labels and machine identity live in [`ProvenanceStore`], which only the oracle and
//! evaluation layers are handed. Nothing that trains or scores a model takes one.

mod io;
mod lhs;
mod normalize;
mod pool;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, load_normalized, load_provenance, write_dataset, DatasetMeta};
pub use lhs::{lhs_initial_sample, summary_features, LhsSelection, DEFAULT_STRATA};
pub use normalize::{normalize_minmax, Normalization};
pub use pool::Pool;

pub type SampleId = u32;

pub const CHANNELS: usize = 3;
pub const DEFAULT_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Machine {
    S1,
    S2,
    L1,
}

impl Machine {
    pub const ALL: [Machine; 3] = [Machine::S1, Machine::S2, Machine::L1];

    pub fn source(self) -> SourceTag {
        match self {
            Machine::S1 | Machine::S2 => SourceTag::Similar,
            Machine::L1 => SourceTag::Dissimilar,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Machine::S1 => "S1",
            Machine::S2 => "S2",
            Machine::L1 => "L1",
        }
    }
}

impl fmt::Display for Machine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Machine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "S1" => Ok(Machine::S1),
            "S2" => Ok(Machine::S2),
            "L1" => Ok(Machine::L1),
            other => Err(Error::Malformed(format!("unknown machine {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Normal,
    Abnormal,
}

impl ClassLabel {
    /// Class index used by the classifier head (abnormal is the positive class).
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Normal => 0,
            ClassLabel::Abnormal => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            ClassLabel::Normal
        } else {
            ClassLabel::Abnormal
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Normal => "normal",
            ClassLabel::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "normal" => Ok(ClassLabel::Normal),
            "abnormal" => Ok(ClassLabel::Abnormal),
            other => Err(Error::BadLabel(other.to_string())),
        }
    }
}

/// Source identification supplied with the initial annotations only: similar (S) or
/// dissimilar (L) machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceTag {
    #[serde(rename = "S")]
    Similar,
    #[serde(rename = "L")]
    Dissimilar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub machine: Machine,
    pub class_label: ClassLabel,
}

/// One fixed-length window of the 3-channel monitoring signal.
///
/// Values are stored channel-major (`values[ch * len + t]`), the layout the convolution
/// layers consume directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: SampleId,
    len: usize,
    values: Vec<f64>,
}

impl Sample {
    pub fn from_channel_major(id: SampleId, len: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != len * CHANNELS {
            return Err(Error::shape(len * CHANNELS, values.len()));
        }
        Ok(Self { id, len, values })
    }

    /// Builds a sample from `(t, ch)` rows.
    pub fn from_rows(id: SampleId, rows: &[[f64; CHANNELS]]) -> Self {
        let len = rows.len();
        let mut values = vec![0.0; len * CHANNELS];
        for (t, row) in rows.iter().enumerate() {
            for (ch, v) in row.iter().enumerate() {
                values[ch * len + t] = *v;
            }
        }
        Self { id, len, values }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn at(&self, t: usize, ch: usize) -> f64 {
        self.values[ch * self.len + t]
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.values[ch * self.len..(ch + 1) * self.len]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
        let len = self.len;
        &mut self.values[ch * len..(ch + 1) * len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> Vec<[f64; CHANNELS]> {
        (0..self.len)
            .map(|t| [self.at(t, 0), self.at(t, 1), self.at(t, 2)])
            .collect()
    }
}

/// The sample matrix. Carries no labels and no machine identity.
#[derive(Debug, Clone)]
pub struct Dataset {
    window: usize,
    samples: Vec<Sample>,
    index: HashMap<SampleId, usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let window = samples.first().map(Sample::len).unwrap_or(DEFAULT_WINDOW);
        let mut index = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if s.len() != window {
                return Err(Error::shape(
                    format!("window {window}"),
                    format!("sample {} with window {}", s.id, s.len()),
                ));
            }
            if index.insert(s.id, pos).is_some() {
                return Err(Error::Malformed(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            window,
            samples,
            index,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Sample] {
        &mut self.samples
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.samples.iter().map(|s| s.id)
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: SampleId) -> Result<&Sample> {
        self.index
            .get(&id)
            .map(|&i| &self.samples[i])
            .ok_or(Error::UnknownId(id))
    }

    pub fn gather(&self, ids: &[SampleId]) -> Result<Vec<&Sample>> {
        ids.iter().map(|&id| self.get(id)).collect()
    }
}

/// Hidden ground truth. Read by oracles and metric computation, never by training code.
#[derive(Debug, Clone, Default)]
pub struct ProvenanceStore {
    entries: HashMap<SampleId, Provenance>,
}

impl ProvenanceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: SampleId, provenance: Provenance) {
        self.entries.insert(id, provenance);
    }

    pub fn get(&self, id: SampleId) -> Result<Provenance> {
        self.entries.get(&id).copied().ok_or(Error::UnknownId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SampleId, Provenance)> + '_ {
        self.entries.iter().map(|(&id, &p)| (id, p))
    }

    /// Ids sorted ascending, optionally restricted to one machine.
    pub fn ids_where(&self, pred: impl Fn(&Provenance) -> bool) -> Vec<SampleId> {
        let mut ids: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, p)| pred(p))
            .map(|(&id, _)| id)
            .collect();
        ids.sort_unstable();
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_through_channel_major_storage() {
        let rows = vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let s = Sample::from_rows(9, &rows);
        assert_eq!(s.values(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(s.rows(), rows);
        assert_eq!(s.at(1, 2), 6.0);
    }

    #[test]
    fn dataset_rejects_mixed_windows_and_duplicates() {
        let a = Sample::from_rows(0, &[[0.0; 3]; 4]);
        let b = Sample::from_rows(1, &[[0.0; 3]; 5]);
        assert!(matches!(
            Dataset::new(vec![a.clone(), b]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Dataset::new(vec![a.clone(), a]),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn label_parsing() {
        assert_eq!(
            "abnormal".parse::<ClassLabel>().unwrap(),
            ClassLabel::Abnormal
        );
        assert!(matches!(
            "maybe".parse::<ClassLabel>(),
            Err(Error::BadLabel(_))
        ));
        assert_eq!(
            "L1".parse::<Machine>().unwrap().source(),
            SourceTag::Dissimilar
        );
    }
}
