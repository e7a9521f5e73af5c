use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, ProvenanceStore, SampleId};
use crate::error::Result;

/// One queried sample with the scores that selected it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    pub sample_id: SampleId,
    pub s_prime: Option<f64>,
    pub s_binary: u8,
    pub u: f64,
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    /// 1-based cycle that issued the queries.
    pub cycle: usize,
    pub items: Vec<QueryItem>,
}

impl QueryBatch {
    pub fn ids(&self) -> Vec<SampleId> {
        self.items.iter().map(|q| q.sample_id).collect()
    }
}

/// Supplies class labels for queried samples.
pub trait Oracle {
    fn annotate(&mut self, batch: &QueryBatch) -> Result<Vec<(SampleId, ClassLabel)>>;
}

/// Answers from the hidden ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    store: ProvenanceStore,
    answered: usize,
}

impl SimulatedOracle {
    pub fn new(store: ProvenanceStore) -> Self {
        Self { store, answered: 0 }
    }

    pub fn label(&self, ids: &[SampleId]) -> Result<Vec<(SampleId, ClassLabel)>> {
        ids.iter()
            .map(|&id| Ok((id, self.store.get(id)?.class_label)))
            .collect()
    }

    /// Labels handed out so far.
    pub fn answered(&self) -> usize {
        self.answered
    }
}

impl Oracle for SimulatedOracle {
    fn annotate(&mut self, batch: &QueryBatch) -> Result<Vec<(SampleId, ClassLabel)>> {
        let out = self.label(&batch.ids())?;
        self.answered += out.len();
        Ok(out)
    }
}
