use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::report::{RunOutcome, ScoreTable};
use super::{
    ClassifierData, ExperimentConfig, FilterMode, LoopPolicy, Oracle, QueryBatch, QueryItem,
    Setting, Split, TestSet,
};
use crate::acquisition::{joint_scores, select_queries};
use crate::contrastive::{
    binarize_topw, effective_w, embed, train_similarity_resampled, TripletSource,
};
use crate::data::{ClassLabel, Dataset, Pool, SampleId};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{self, cosine_similarity, Network};
use crate::rng;
use crate::uncertainty::{entropy_scores, evaluate, predict_proba, train_classifier, Evaluation};
use crate::wta::train_wta;

pub const RUN_STATE_FILE: &str = "run.json";
const SIMILARITY_STEM: &str = "similarity";
const CLASSIFIER_STEM: &str = "classifier";

/// One completed cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// 1-based.
    pub cycle: usize,
    pub queried: Vec<SampleId>,
    /// Queried samples whose joint score was zero.
    pub shortfall: usize,
    /// Binarization rate actually applied, when the filter was on.
    pub w_effective: Option<f64>,
    pub labeled_after: usize,
    /// Held-out performance of the classifier trained after this cycle's labels arrived.
    pub eval: Option<Evaluation>,
}

/// Queries waiting for labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingCycle {
    pub batch: QueryBatch,
    pub scores: ScoreTable,
    pub shortfall: usize,
    pub w_effective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Query(PendingCycle),
    Finished(Evaluation),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunState {
    config: ExperimentConfig,
    policy: LoopPolicy,
    schedule: Vec<usize>,
    pool: Pool,
    similar_initial: Vec<SampleId>,
    dissimilar_initial: Vec<SampleId>,
    queried: Vec<SampleId>,
    test: TestSet,
    /// Completed cycles.
    cycle: usize,
    /// Cycle index the current classifier was trained for.
    classifier_cycle: Option<usize>,
    records: Vec<CycleRecord>,
    scores: Vec<ScoreTable>,
    pending: Option<PendingCycle>,
    initial_eval: Option<Evaluation>,
    final_eval: Option<Evaluation>,
}

/// Trains the augmentation autoencoder on `anchors`, then the similarity model on triplets
/// with `anchors` as anchors and `negatives` as negatives.
pub fn train_similarity_for(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    anchors: &[SampleId],
    negatives: &[SampleId],
    seed: u64,
) -> Result<Network> {
    let anchor_samples = dataset.gather(anchors)?;
    let negative_samples = dataset.gather(negatives)?;
    let wta = train_wta(&anchor_samples, &cfg.wta, rng::derive_seed(seed, "wta", 0))?;
    let source = TripletSource::new(
        &anchor_samples,
        &negative_samples,
        &wta,
        cfg.triplets_per_anchor * anchor_samples.len(),
        rng::derive_seed(seed, "triplets", 0),
    )?;
    let model = train_similarity_resampled(
        &source,
        &cfg.similarity,
        rng::derive_seed(seed, "similarity", 0),
    )?;
    Ok(model.net)
}

/// The active-learning loop as a resumable state machine.
///
/// [`AdsRun::next`] trains the classifier for the current cycle and either returns the queries
/// of that cycle or, after the last cycle, the final evaluation. [`AdsRun::submit`] takes the
/// labels for the pending queries. The state between the two calls can be saved and restored.
#[derive(Debug, Clone)]
pub struct AdsRun {
    state: RunState,
    similarity: Option<Network>,
    classifier: Option<Network>,
    cache: SimilarityCache,
}

/// Embeddings and running similarity maxima under the current similarity model.
///
/// The reference set only grows while the model is fixed, so each unlabeled sample's best
/// cosine can be extended with the new references instead of recomputed. Rebuilt on demand
/// after a restore; the results are identical either way.
#[derive(Debug, Clone, Default)]
struct SimilarityCache {
    embeddings: BTreeMap<SampleId, Vec<f64>>,
    best: BTreeMap<SampleId, f64>,
    covered: BTreeSet<SampleId>,
}

impl SimilarityCache {
    fn scores(
        &mut self,
        net: &Network,
        dataset: &Dataset,
        refs: &[SampleId],
        ids: &[SampleId],
    ) -> Result<Vec<f64>> {
        if refs.is_empty() {
            return Err(Error::EmptyLabeledPool);
        }
        let missing: Vec<SampleId> = refs
            .iter()
            .chain(ids)
            .copied()
            .filter(|id| !self.embeddings.contains_key(id))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for (id, e) in missing.iter().zip(embed(net, &dataset.gather(&missing)?)?) {
            self.embeddings.insert(*id, e);
        }
        let fresh: Vec<&[f64]> = refs
            .iter()
            .filter(|id| !self.covered.contains(id))
            .map(|id| self.embeddings[id].as_slice())
            .collect();
        let all: Vec<&[f64]> = refs
            .iter()
            .map(|id| self.embeddings[id].as_slice())
            .collect();
        let (embeddings, best) = (&self.embeddings, &self.best);
        let scores: Vec<f64> = exec::map_slice(ids, |id| {
            let (start, against) = match best.get(id) {
                Some(&b) => (b, &fresh),
                None => (f64::NEG_INFINITY, &all),
            };
            let u = &embeddings[id];
            against
                .iter()
                .try_fold(start, |acc, f| Ok(acc.max(cosine_similarity(f, u)?)))
        })
        .into_iter()
        .collect::<Result<_>>()?;
        for (id, &v) in ids.iter().zip(&scores) {
            self.best.insert(*id, v);
        }
        self.covered.extend(refs.iter().copied());
        Ok(scores)
    }
}

impl AdsRun {
    /// Applies the initial annotation and trains the similarity model unless one is given.
    pub fn new(
        cfg: &ExperimentConfig,
        dataset: &Dataset,
        split: &Split,
        similarity: Option<Network>,
    ) -> Result<Self> {
        let policy = cfg.loop_policy().ok_or_else(|| {
            Error::InvalidConfig(format!("{} is not an active-learning setting", cfg.setting))
        })?;
        let schedule = cfg.query_schedule()?;
        let mut pool = Pool::new(split.pool.iter().copied());
        let initial: Vec<(SampleId, ClassLabel)> = split
            .initial
            .iter()
            .map(|a| (a.sample_id, a.class_label))
            .collect();
        pool.reveal_labels(&initial)?;
        let similar_initial = split.similar_initial();
        let dissimilar_initial = split.dissimilar_initial();
        let similarity = match (policy.filter, similarity) {
            (FilterMode::Off, _) => None,
            (_, Some(net)) => Some(net),
            (_, None) => Some(train_similarity_for(
                cfg,
                dataset,
                &similar_initial,
                &dissimilar_initial,
                cfg.seed,
            )?),
        };
        Ok(Self {
            state: RunState {
                config: cfg.clone(),
                policy,
                schedule,
                pool,
                similar_initial,
                dissimilar_initial,
                queried: Vec::new(),
                test: split.test.clone(),
                cycle: 0,
                classifier_cycle: None,
                records: Vec::new(),
                scores: Vec::new(),
                pending: None,
                initial_eval: None,
                final_eval: None,
            },
            similarity,
            classifier: None,
            cache: SimilarityCache::default(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.state.config
    }

    pub fn pool(&self) -> &Pool {
        &self.state.pool
    }

    /// Completed cycles.
    pub fn cycle(&self) -> usize {
        self.state.cycle
    }

    pub fn total_cycles(&self) -> usize {
        self.state.schedule.len()
    }

    pub fn pending(&self) -> Option<&PendingCycle> {
        self.state.pending.as_ref()
    }

    pub fn records(&self) -> &[CycleRecord] {
        &self.state.records
    }

    pub fn scores(&self) -> &[ScoreTable] {
        &self.state.scores
    }

    pub fn is_finished(&self) -> bool {
        self.state.final_eval.is_some()
    }

    pub fn similarity_model(&self) -> Option<&Network> {
        self.similarity.as_ref()
    }

    /// D^S_label: initially S-tagged samples plus everything queried so far.
    fn reference_ids(&self) -> Vec<SampleId> {
        let mut ids: BTreeSet<SampleId> = self.state.similar_initial.iter().copied().collect();
        ids.extend(self.state.queried.iter().copied());
        ids.into_iter().collect()
    }

    fn training_ids(&self) -> Vec<SampleId> {
        match self.state.policy.classifier_data {
            ClassifierData::SimilarLabeled => self.reference_ids(),
            ClassifierData::AllLabeled => self.state.pool.labeled_ids().iter().copied().collect(),
        }
    }

    fn train_current_classifier(&mut self, dataset: &Dataset) -> Result<Evaluation> {
        let ids = self.training_ids();
        let samples = dataset.gather(&ids)?;
        let labels: Vec<ClassLabel> = ids
            .iter()
            .map(|&id| self.state.pool.label(id).ok_or(Error::UnknownId(id)))
            .collect::<Result<_>>()?;
        let cfg = &self.state.config;
        let seed = rng::derive_seed(cfg.seed, "cycle/classifier", self.state.cycle as u64);
        let init = if cfg.classifier.warm_start {
            self.classifier.as_ref()
        } else {
            None
        };
        let net = train_classifier(&samples, &labels, &cfg.classifier, seed, init)?;
        let eval = evaluate(
            &net,
            &dataset.gather(&self.state.test.ids)?,
            &self.state.test.labels,
        )?;
        self.classifier = Some(net);
        self.state.classifier_cycle = Some(self.state.cycle);
        Ok(eval)
    }

    fn score_pool(&mut self, dataset: &Dataset, t: usize) -> Result<PendingCycle> {
        let ids = self.state.pool.unlabeled_vec();
        if ids.is_empty() {
            return Err(Error::EmptyPool);
        }
        let unlabeled = dataset.gather(&ids)?;
        let classifier = self
            .classifier
            .as_ref()
            .ok_or(Error::InsufficientData("no classifier".into()))?;
        let u = entropy_scores(&predict_proba(classifier, &unlabeled)?);

        let cfg = self.state.config.clone();
        if cfg.retrain_similarity_each_cycle && self.state.cycle > 0 && self.similarity.is_some() {
            let seed = rng::derive_seed(cfg.seed, "cycle/similarity", self.state.cycle as u64);
            let anchors = self.reference_ids();
            self.similarity = Some(train_similarity_for(
                &cfg,
                dataset,
                &anchors,
                &self.state.dissimilar_initial,
                seed,
            )?);
            self.cache = SimilarityCache::default();
        }
        let refs = self.reference_ids();
        let s_prime = match &self.similarity {
            Some(net) => Some(self.cache.scores(net, dataset, &refs, &ids)?),
            None => None,
        };
        let (s_binary, w_effective) = match (self.state.policy.filter, &s_prime) {
            (FilterMode::Contrastive, Some(s)) => {
                let w = effective_w(cfg.w, s.len(), t);
                (binarize_topw(s, w)?, Some(w))
            }
            _ => (vec![1u8; ids.len()], None),
        };
        let j = joint_scores(&s_binary, &u)?;
        let selection = select_queries(&j, &s_binary, &u, t)?;
        let items = selection
            .indices
            .iter()
            .map(|&i| QueryItem {
                sample_id: ids[i],
                s_prime: s_prime.as_ref().map(|s| s[i]),
                s_binary: s_binary[i],
                u: u[i],
                j: j[i],
            })
            .collect();
        Ok(PendingCycle {
            batch: QueryBatch {
                cycle: self.state.cycle + 1,
                items,
            },
            scores: ScoreTable {
                ids,
                s_prime,
                s_binary,
                u,
                j,
            },
            shortfall: selection.shortfall,
            w_effective,
        })
    }

    /// Advances to the next label request, or to the end of the run.
    pub fn next(&mut self, dataset: &Dataset) -> Result<Step> {
        if let Some(eval) = self.state.final_eval {
            return Ok(Step::Finished(eval));
        }
        if let Some(p) = &self.state.pending {
            return Ok(Step::Query(p.clone()));
        }
        if self.state.classifier_cycle != Some(self.state.cycle) || self.classifier.is_none() {
            let eval = self.train_current_classifier(dataset)?;
            match self.state.records.last_mut() {
                Some(rec) if rec.cycle == self.state.cycle => rec.eval = Some(eval),
                _ => self.state.initial_eval = Some(eval),
            }
        }
        let eval = match self.state.records.last() {
            Some(rec) => rec.eval,
            None => self.state.initial_eval,
        }
        .ok_or_else(|| Error::InsufficientData("missing evaluation".into()))?;
        if self.state.cycle >= self.state.schedule.len()
            || self.state.pool.unlabeled_ids().is_empty()
        {
            self.state.final_eval = Some(eval);
            return Ok(Step::Finished(eval));
        }
        let t = self.state.schedule[self.state.cycle];
        let pending = self.score_pool(dataset, t)?;
        self.state.pending = Some(pending.clone());
        Ok(Step::Query(pending))
    }

    /// Records the labels for the pending queries; every pending id exactly once.
    pub fn submit(&mut self, labels: &[(SampleId, ClassLabel)]) -> Result<()> {
        let pending = self
            .state
            .pending
            .as_ref()
            .ok_or(Error::InsufficientData("nothing is pending".into()))?;
        let order = pending.batch.ids();
        let wanted: BTreeSet<SampleId> = order.iter().copied().collect();
        let mut given = std::collections::BTreeMap::new();
        for &(id, label) in labels {
            if !wanted.contains(&id) || given.insert(id, label).is_some() {
                return Err(Error::NotPending(id));
            }
        }
        if given.len() != wanted.len() {
            return Err(Error::InsufficientData(format!(
                "{} of {} pending labels supplied",
                given.len(),
                wanted.len()
            )));
        }
        let ordered: Vec<(SampleId, ClassLabel)> =
            order.iter().map(|id| (*id, given[id])).collect();
        self.state.pool.reveal_labels(&ordered)?;
        let pending = self.state.pending.take().expect("checked above");
        self.state.queried.extend(order.iter().copied());
        self.state.cycle += 1;
        self.state.records.push(CycleRecord {
            cycle: self.state.cycle,
            queried: order,
            shortfall: pending.shortfall,
            w_effective: pending.w_effective,
            labeled_after: self.state.pool.labeled_ids().len(),
            eval: None,
        });
        self.state.scores.push(pending.scores);
        Ok(())
    }

    pub fn outcome(&self) -> Result<RunOutcome> {
        let final_eval = self
            .state
            .final_eval
            .ok_or_else(|| Error::InsufficientData("run has not finished".into()))?;
        Ok(RunOutcome {
            config: self.state.config.clone(),
            initial_labeled: self.state.similar_initial.len() + self.state.dissimilar_initial.len(),
            initial_similar: self.state.similar_initial.len(),
            initial_eval: self.state.initial_eval,
            cycles: self.state.records.clone(),
            final_eval,
            training_size: self.training_ids().len(),
            labeled_total: self.state.pool.labeled_ids().len(),
            scores: self.state.scores.clone(),
        })
    }

    /// Writes the run state and model checkpoints into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUN_STATE_FILE);
        fs::write(&path, serde_json::to_vec(&self.state)?).map_err(|e| Error::io(&path, e))?;
        if let Some(net) = &self.similarity {
            nn::save_checkpoint(net, &dir.join(SIMILARITY_STEM), Default::default())?;
        }
        if let Some(net) = &self.classifier {
            nn::save_checkpoint(net, &dir.join(CLASSIFIER_STEM), Default::default())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_STATE_FILE);
        let state: RunState =
            serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        let load = |stem: &str| -> Result<Option<Network>> {
            if dir.join(stem).with_extension("json").exists() {
                Ok(Some(nn::load_checkpoint(&dir.join(stem))?.0))
            } else {
                Ok(None)
            }
        };
        let similarity = load(SIMILARITY_STEM)?;
        if state.policy.filter != FilterMode::Off && similarity.is_none() {
            return Err(Error::Malformed(
                "checkpoint lacks the similarity model".into(),
            ));
        }
        Ok(Self {
            similarity,
            classifier: load(CLASSIFIER_STEM)?,
            state,
            cache: SimilarityCache::default(),
        })
    }
}

/// Drives `run` to completion with `oracle`.
pub fn run_with_oracle(
    run: &mut AdsRun,
    dataset: &Dataset,
    oracle: &mut dyn Oracle,
) -> Result<RunOutcome> {
    while let Step::Query(pending) = run.next(dataset)? {
        let labels = oracle.annotate(&pending.batch)?;
        run.submit(&labels)?;
    }
    run.outcome()
}

fn train_and_evaluate(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    split: &Split,
    training: &[(SampleId, ClassLabel)],
) -> Result<Evaluation> {
    let ids: Vec<SampleId> = training.iter().map(|p| p.0).collect();
    let labels: Vec<ClassLabel> = training.iter().map(|p| p.1).collect();
    let seed = rng::derive_seed(cfg.seed, "cycle/classifier", 0);
    let net = train_classifier(&dataset.gather(&ids)?, &labels, &cfg.classifier, seed, None)?;
    evaluate(&net, &dataset.gather(&split.test.ids)?, &split.test.labels)
}

fn run_random(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    split: &Split,
    oracle: &mut dyn Oracle,
) -> Result<RunOutcome> {
    let initial_ids = split.initial_ids();
    let (mut candidates, mut training): (Vec<SampleId>, Vec<(SampleId, ClassLabel)>) =
        match cfg.setting {
            Setting::RandomS => (
                split.random_s_candidates.clone(),
                split
                    .initial
                    .iter()
                    .filter(|a| a.source == crate::data::SourceTag::Similar)
                    .map(|a| (a.sample_id, a.class_label))
                    .collect(),
            ),
            _ => (
                split
                    .pool
                    .iter()
                    .copied()
                    .filter(|id| !initial_ids.contains(id))
                    .collect(),
                split
                    .initial
                    .iter()
                    .map(|a| (a.sample_id, a.class_label))
                    .collect(),
            ),
        };
    candidates.shuffle(&mut rng::stream(cfg.seed, "random/picks", 0));
    candidates.truncate(cfg.total_query_budget);
    let batch = QueryBatch {
        cycle: 1,
        items: candidates
            .iter()
            .map(|&id| QueryItem {
                sample_id: id,
                s_prime: None,
                s_binary: 1,
                u: 0.0,
                j: 0.0,
            })
            .collect(),
    };
    let labels = oracle.annotate(&batch)?;
    training.extend(labels.iter().copied());
    training.sort_unstable_by_key(|p| p.0);
    let eval = train_and_evaluate(cfg, dataset, split, &training)?;
    Ok(RunOutcome {
        config: cfg.clone(),
        initial_labeled: split.initial.len(),
        initial_similar: split.similar_initial().len(),
        initial_eval: None,
        cycles: vec![CycleRecord {
            cycle: 1,
            queried: candidates,
            shortfall: 0,
            w_effective: None,
            labeled_after: split.initial.len() + labels.len(),
            eval: Some(eval),
        }],
        final_eval: eval,
        training_size: training.len(),
        labeled_total: split.initial.len() + labels.len(),
        scores: Vec::new(),
    })
}

/// Runs one setting end to end.
pub fn run_setting(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    split: &Split,
    oracle: &mut dyn Oracle,
) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.setting {
        Setting::Supervised => {
            let eval = train_and_evaluate(cfg, dataset, split, &split.supervised)?;
            Ok(RunOutcome {
                config: cfg.clone(),
                initial_labeled: split.initial.len(),
                initial_similar: split.similar_initial().len(),
                initial_eval: None,
                cycles: Vec::new(),
                final_eval: eval,
                training_size: split.supervised.len(),
                labeled_total: split.supervised.len(),
                scores: Vec::new(),
            })
        }
        Setting::RandomS | Setting::RandomSL => run_random(cfg, dataset, split, oracle),
        Setting::Ads | Setting::AdsNoCl => {
            let mut run = AdsRun::new(cfg, dataset, split, None)?;
            run_with_oracle(&mut run, dataset, oracle)
        }
    }
}
