use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contrastive::SimilarityConfig;
use crate::error::{Error, Result};
use crate::uncertainty::ClassifierConfig;
use crate::wta::WtaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "supervised")]
    Supervised,
    #[serde(rename = "random-s")]
    RandomS,
    #[serde(rename = "random-s+l")]
    RandomSL,
    #[serde(rename = "ads-no-cl")]
    AdsNoCl,
    #[serde(rename = "ads")]
    Ads,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::Supervised,
        Setting::RandomS,
        Setting::RandomSL,
        Setting::AdsNoCl,
        Setting::Ads,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Supervised => "supervised",
            Setting::RandomS => "random-s",
            Setting::RandomSL => "random-s+l",
            Setting::AdsNoCl => "ads-no-cl",
            Setting::Ads => "ads",
        }
    }

    /// Loop behaviour for the two active-learning settings.
    pub fn policy(self) -> Option<LoopPolicy> {
        match self {
            Setting::Ads => Some(LoopPolicy {
                filter: FilterMode::Contrastive,
                classifier_data: ClassifierData::SimilarLabeled,
            }),
            Setting::AdsNoCl => Some(LoopPolicy {
                filter: FilterMode::Off,
                classifier_data: ClassifierData::AllLabeled,
            }),
            _ => None,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|setting| setting.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown setting {s:?}")))
    }
}

/// How the binarized similarity vector is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Top-w of the contrastive similarity scores.
    Contrastive,
    /// Similarity model is trained and scored, but every sample passes.
    ForcedOnes,
    /// No similarity model; every sample passes.
    Off,
}

/// Which labeled samples the classifier trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierData {
    /// Initially S-tagged samples plus every queried sample.
    SimilarLabeled,
    /// Every labeled sample.
    AllLabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopPolicy {
    pub filter: FilterMode,
    pub classifier_data: ClassifierData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub seed: u64,
    /// Seed of the held-out test split, shared by every setting and run seed.
    pub split_seed: u64,
    pub test_fraction: f64,
    pub init_fraction: f64,
    pub lhs_strata: usize,
    pub total_query_budget: usize,
    pub cycles: usize,
    pub samples_per_cycle: usize,
    pub w: f64,
    pub triplets_per_anchor: usize,
    pub retrain_similarity_each_cycle: bool,
    /// Overrides the setting's loop behaviour when present.
    pub policy: Option<LoopPolicy>,
    pub classifier: ClassifierConfig,
    pub similarity: SimilarityConfig,
    pub wta: WtaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            setting: Setting::Ads,
            seed: 0,
            split_seed: 0,
            test_fraction: 0.2,
            init_fraction: 0.2,
            lhs_strata: crate::data::DEFAULT_STRATA,
            total_query_budget: 400,
            cycles: 5,
            samples_per_cycle: 80,
            w: 0.25,
            triplets_per_anchor: 2,
            retrain_similarity_each_cycle: false,
            policy: None,
            classifier: ClassifierConfig::default(),
            similarity: SimilarityConfig::default(),
            wta: WtaConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for ablation sweeps: the classifier continues from the previous cycle's
    /// parameters for a short schedule instead of a full fresh fit every cycle.
    pub fn sweep_default() -> Self {
        let mut cfg = Self::default();
        cfg.classifier.warm_start = true;
        cfg
    }

    pub fn with_setting(mut self, setting: Setting) -> Self {
        self.setting = setting;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `cycles` rounds of `ceil(budget / cycles)` queries, the last one truncated.
    pub fn with_cycles(mut self, budget: usize, cycles: usize) -> Self {
        self.total_query_budget = budget;
        self.cycles = cycles;
        self.samples_per_cycle = budget.div_ceil(cycles.max(1));
        self
    }

    pub fn loop_policy(&self) -> Option<LoopPolicy> {
        self.setting.policy().map(|p| self.policy.unwrap_or(p))
    }

    /// Queries per cycle. Only the last cycle may be short.
    pub fn query_schedule(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let mut left = self.total_query_budget;
        let mut out = Vec::with_capacity(self.cycles);
        for _ in 0..self.cycles {
            let t = self.samples_per_cycle.min(left);
            out.push(t);
            left -= t;
        }
        if out.last().is_some_and(|&t| t < self.samples_per_cycle) {
            tracing::info!(
                last = out.last().copied().unwrap_or(0),
                per_cycle = self.samples_per_cycle,
                "final cycle truncated to the query budget"
            );
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {v}"
                )))
            }
        };
        frac("test_fraction", self.test_fraction)?;
        frac("init_fraction", self.init_fraction)?;
        if !(self.w > 0.0 && self.w <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "w must lie in (0, 1], got {}",
                self.w
            )));
        }
        if self.cycles > 0 {
            if self.samples_per_cycle == 0 {
                return Err(Error::InvalidConfig(
                    "samples_per_cycle must be at least 1".into(),
                ));
            }
            let capacity = self.cycles * self.samples_per_cycle;
            if capacity < self.total_query_budget
                || capacity - self.total_query_budget >= self.samples_per_cycle
            {
                return Err(Error::InvalidConfig(format!(
                    "{} cycles x {} queries do not fit a budget of {}",
                    self.cycles, self.samples_per_cycle, self.total_query_budget
                )));
            }
        } else if self.total_query_budget > 0 && self.setting.policy().is_some() {
            tracing::info!("zero cycles: the query budget is not spent");
        }
        if self.triplets_per_anchor == 0 {
            return Err(Error::InvalidConfig(
                "triplets_per_anchor must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
