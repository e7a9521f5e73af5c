use std::cmp::Reverse;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::report::{MeanSd, RunReport};
use super::run::{run_with_oracle, train_similarity_for, AdsRun};
use super::{prepare_split, ExperimentConfig, Setting, SimulatedOracle, Split};
use crate::data::{Dataset, ProvenanceStore};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::Network;

/// Samples per cycle swept for a fixed budget.
pub const DEFAULT_PER_CYCLE: [usize; 16] = [
    400, 200, 160, 100, 80, 50, 40, 32, 25, 20, 16, 10, 8, 5, 4, 2,
];

/// One line of the sweep: a fixed budget, initial fraction and filter choice, swept over
/// samples per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub budget: usize,
    pub init_fraction: f64,
    pub cl: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub arms: Vec<Arm>,
    pub per_cycle: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl AblationGrid {
    /// Filter on and off at budget 800, plus budget 600 and a 15% initial annotation with the
    /// filter on.
    pub fn standard(seeds: Vec<u64>) -> Self {
        let arm = |budget, init_fraction, cl| Arm {
            budget,
            init_fraction,
            cl,
        };
        Self {
            arms: vec![
                arm(800, 0.2, true),
                arm(800, 0.2, false),
                arm(600, 0.2, true),
                arm(800, 0.15, true),
            ],
            per_cycle: DEFAULT_PER_CYCLE.to_vec(),
            seeds,
        }
    }

    pub fn cells(&self) -> Vec<(Arm, usize, u64)> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &arm in &self.arms {
                for &per_cycle in &self.per_cycle {
                    out.push((arm, per_cycle, seed));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.arms.len() * self.per_cycle.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: Setting,
    pub cl: bool,
    pub budget: usize,
    pub init_pct: f64,
    pub per_cycle: usize,
    pub cycles: usize,
    pub seed: u64,
    #[serde(rename = "pctL")]
    pub pct_l: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Enough cycles of `per_cycle` queries to spend the arm's budget; the last one may be short.
fn cell_config(base: &ExperimentConfig, arm: Arm, per_cycle: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = base
        .clone()
        .with_setting(if arm.cl {
            Setting::Ads
        } else {
            Setting::AdsNoCl
        })
        .with_seed(seed)
        .with_cycles(arm.budget, arm.budget.div_ceil(per_cycle.max(1)));
    cfg.samples_per_cycle = per_cycle;
    cfg.init_fraction = arm.init_fraction;
    cfg
}

#[cfg(feature = "parallel")]
fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<T: Send>(_jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}

/// Runs every cell of `grid` with a simulated oracle, up to `jobs` at a time.
///
/// The split and the similarity model depend only on the seed and the initial fraction, so
/// they are built once per pair and shared by the cells that need them.
pub fn run_ablation(
    grid: &AblationGrid,
    base: &ExperimentConfig,
    dataset: &Dataset,
    provenance: &ProvenanceStore,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let mut keys: Vec<(u64, u64, bool)> = Vec::new();
    for &seed in &grid.seeds {
        for arm in &grid.arms {
            let key = (seed, arm.init_fraction.to_bits(), arm.cl);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    with_jobs(jobs, || -> Result<Vec<SweepRow>> {
        let prepared = exec::map_slice(
            &keys,
            |&(seed, init_bits, cl)| -> Result<(Split, Option<Network>)> {
                let mut cfg = base.clone().with_seed(seed);
                cfg.init_fraction = f64::from_bits(init_bits);
                let split = prepare_split(dataset, provenance, &cfg)?;
                let net = if cl {
                    Some(train_similarity_for(
                        &cfg,
                        dataset,
                        &split.similar_initial(),
                        &split.dissimilar_initial(),
                        seed,
                    )?)
                } else {
                    None
                };
                Ok((split, net))
            },
        );
        let mut shared = BTreeMap::new();
        for (key, prep) in keys.iter().zip(prepared) {
            shared.insert(*key, prep?);
        }
        let cells = grid.cells();
        exec::map_slice(&cells, |&(arm, per_cycle, seed)| {
            let cfg = cell_config(base, arm, per_cycle, seed);
            let cycles = cfg.cycles;
            let (split, net) = &shared[&(seed, arm.init_fraction.to_bits(), arm.cl)];
            let mut run = AdsRun::new(&cfg, dataset, split, net.clone())?;
            let mut oracle = SimulatedOracle::new(provenance.clone());
            let outcome = run_with_oracle(&mut run, dataset, &mut oracle)?;
            let report = RunReport::from_outcome(&outcome, provenance)?;
            tracing::info!(budget = arm.budget, cl = arm.cl, cycles, seed, pct_l = ?report.pct_l, accuracy = report.accuracy, "ablation cell done");
            Ok(SweepRow {
                setting: cfg.setting,
                cl: arm.cl,
                budget: arm.budget,
                init_pct: 100.0 * arm.init_fraction,
                per_cycle: cfg.samples_per_cycle,
                cycles,
                seed,
                pct_l: report.pct_l.unwrap_or(0.0),
                accuracy: report.accuracy,
                f1: report.f1,
            })
        })
        .into_iter()
        .collect()
    })?
}

/// Runs of one grid cell aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub cl: bool,
    pub budget: usize,
    pub init_pct: f64,
    pub cycles: usize,
    pub per_cycle: usize,
    pub runs: usize,
    pub pct_l: MeanSd,
    pub accuracy: MeanSd,
    pub f1: MeanSd,
}

/// Groups sweep rows by cell, ordered by budget, initial fraction, filter and cycle count.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepCell> {
    let mut groups: BTreeMap<(usize, u64, bool, Reverse<usize>), Vec<&SweepRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((
                row.budget,
                row.init_pct.to_bits(),
                !row.cl,
                Reverse(row.per_cycle),
            ))
            .or_default()
            .push(row);
    }
    groups
        .into_values()
        .filter_map(|group| {
            let first = group[0];
            let stat = |f: fn(&SweepRow) -> f64| {
                MeanSd::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            Some(SweepCell {
                cl: first.cl,
                budget: first.budget,
                init_pct: first.init_pct,
                cycles: first.cycles,
                per_cycle: first.per_cycle,
                runs: group.len(),
                pct_l: stat(|r| r.pct_l)?,
                accuracy: stat(|r| r.accuracy)?,
                f1: stat(|r| r.f1)?,
            })
        })
        .collect()
}

/// Markdown table of the aggregated sweep.
pub fn sweep_table(cells: &[SweepCell]) -> String {
    let mut out = String::from(
        "| CL | Budget | Init % | Cycles | Per cycle | Runs | %L | Accuracy | F1 Score |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for c in cells {
        out.push_str(&format!(
            "| {} | {} | {:.0} | {} | {} | {} | {:.2} | {:.4} | {:.4} |\n",
            if c.cl { "yes" } else { "no" },
            c.budget,
            c.init_pct,
            c.cycles,
            c.per_cycle,
            c.runs,
            c.pct_l.mean,
            c.accuracy.mean,
            c.f1.mean
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cl: bool, cycles: usize, seed: u64, pct_l: f64) -> SweepRow {
        SweepRow {
            setting: if cl { Setting::Ads } else { Setting::AdsNoCl },
            cl,
            budget: 800,
            init_pct: 20.0,
            per_cycle: 800 / cycles,
            cycles,
            seed,
            pct_l,
            accuracy: 0.9,
            f1: 0.8,
        }
    }

    #[test]
    fn standard_grid_shape() {
        let grid = AblationGrid::standard(vec![0]);
        assert_eq!(grid.len(), 64);
        assert_eq!(grid.cells().len(), 64);
        assert_eq!(
            grid.cells()
                .iter()
                .filter(|c| c.0.budget == 800 && c.0.init_fraction == 0.2)
                .count(),
            32
        );
    }

    #[test]
    fn every_standard_cell_spends_its_budget() {
        let grid = AblationGrid::standard(vec![0]);
        for (arm, per_cycle, seed) in grid.cells() {
            let cfg = cell_config(&ExperimentConfig::default(), arm, per_cycle, seed);
            let schedule = cfg.query_schedule().unwrap();
            assert_eq!(schedule.len(), cfg.cycles);
            assert_eq!(schedule.iter().sum::<usize>(), arm.budget);
            assert!(schedule[..schedule.len() - 1]
                .iter()
                .all(|&q| q == per_cycle));
        }
        let cfg = cell_config(&ExperimentConfig::default(), grid.arms[2], 160, 0);
        assert_eq!(
            (cfg.cycles, cfg.query_schedule().unwrap()),
            (4, vec![160, 160, 160, 120])
        );
    }

    #[test]
    fn sweep_cells_average_over_seeds() {
        let rows = vec![
            row(true, 4, 0, 1.0),
            row(false, 4, 0, 10.0),
            row(true, 4, 1, 3.0),
            row(true, 2, 0, 0.0),
        ];
        let cells = summarize_sweep(&rows);
        assert_eq!(cells.len(), 3);
        assert_eq!((cells[0].cl, cells[0].cycles, cells[0].runs), (true, 2, 1));
        assert_eq!(
            (cells[1].cl, cells[1].cycles, cells[1].pct_l.mean),
            (true, 4, 2.0)
        );
        assert_eq!((cells[2].cl, cells[2].pct_l.mean), (false, 10.0));
        assert_eq!(sweep_table(&cells).lines().count(), 5);
    }
}
