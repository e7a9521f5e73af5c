use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::data::{
    lhs_initial_sample, ClassLabel, Dataset, Machine, ProvenanceStore, SampleId, SourceTag,
};
use crate::error::{Error, Result};
use crate::rng;

/// One initially annotated sample: class label plus source identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialAnnotation {
    pub sample_id: SampleId,
    pub class_label: ClassLabel,
    pub source: SourceTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSet {
    pub ids: Vec<SampleId>,
    pub labels: Vec<ClassLabel>,
}

/// Everything provenance decides before a run starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub test: TestSet,
    /// Training pool (everything not held out), ascending.
    pub pool: Vec<SampleId>,
    pub initial: Vec<InitialAnnotation>,
    /// Every S-machine pool sample with its label, for the fully supervised baseline.
    pub supervised: Vec<(SampleId, ClassLabel)>,
    /// S-machine pool samples outside the initial annotation, for the S-only random baseline.
    pub random_s_candidates: Vec<SampleId>,
}

impl Split {
    pub fn initial_ids(&self) -> BTreeSet<SampleId> {
        self.initial.iter().map(|a| a.sample_id).collect()
    }

    /// Initial annotation from S machines.
    pub fn similar_initial(&self) -> Vec<SampleId> {
        self.initial
            .iter()
            .filter(|a| a.source == SourceTag::Similar)
            .map(|a| a.sample_id)
            .collect()
    }

    pub fn dissimilar_initial(&self) -> Vec<SampleId> {
        self.initial
            .iter()
            .filter(|a| a.source == SourceTag::Dissimilar)
            .map(|a| a.sample_id)
            .collect()
    }
}

/// Holds out `test_fraction` of every S machine, stratified by class and drawn with
/// `split_seed`, then picks the initial annotation from the remaining pool by LHS with `seed`.
pub fn prepare_split(
    dataset: &Dataset,
    provenance: &ProvenanceStore,
    cfg: &ExperimentConfig,
) -> Result<Split> {
    cfg.validate()?;
    let mut test = BTreeSet::new();
    for machine in [Machine::S1, Machine::S2] {
        for class in [ClassLabel::Normal, ClassLabel::Abnormal] {
            let mut ids = provenance.ids_where(|p| p.machine == machine && p.class_label == class);
            ids.retain(|&id| dataset.contains(id));
            ids.sort_unstable();
            let tag = format!("split/{machine}/{class}");
            ids.shuffle(&mut rng::stream(cfg.split_seed, &tag, 0));
            let take = (cfg.test_fraction * ids.len() as f64).round() as usize;
            test.extend(ids.into_iter().take(take));
        }
    }
    if test.is_empty() {
        return Err(Error::InsufficientData(
            "no S-machine samples to hold out".into(),
        ));
    }
    let test_ids: Vec<SampleId> = test.iter().copied().collect();
    let test_labels = test_ids
        .iter()
        .map(|&id| provenance.get(id).map(|p| p.class_label))
        .collect::<Result<Vec<_>>>()?;

    let pool: Vec<SampleId> = dataset.ids().filter(|id| !test.contains(id)).collect();
    let pool_samples = dataset.gather(&pool)?;
    let lhs = lhs_initial_sample(
        &pool_samples,
        cfg.init_fraction,
        cfg.lhs_strata,
        rng::derive_seed(cfg.seed, "lhs", 0),
    )?;
    if !lhs.balanced {
        tracing::warn!("initial annotation strata are not perfectly balanced");
    }
    let initial = lhs
        .ids
        .iter()
        .map(|&id| {
            let p = provenance.get(id)?;
            Ok(InitialAnnotation {
                sample_id: id,
                class_label: p.class_label,
                source: p.machine.source(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let initial_ids: BTreeSet<SampleId> = lhs.ids.iter().copied().collect();

    let mut supervised = Vec::new();
    let mut random_s_candidates = Vec::new();
    for &id in &pool {
        let p = provenance.get(id)?;
        if p.machine.source() == SourceTag::Similar {
            supervised.push((id, p.class_label));
            if !initial_ids.contains(&id) {
                random_s_candidates.push(id);
            }
        }
    }
    Ok(Split {
        test: TestSet {
            ids: test_ids,
            labels: test_labels,
        },
        pool,
        initial,
        supervised,
        random_s_candidates,
    })
}
