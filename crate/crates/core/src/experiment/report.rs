use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CycleRecord, ExperimentConfig, Setting, SweepRow};
use crate::data::{Machine, ProvenanceStore, SampleId};
use crate::error::{Error, Result};
use crate::uncertainty::{Confusion, Evaluation};

/// Every score of one cycle, row-aligned with the unlabeled pool in ascending id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub ids: Vec<SampleId>,
    pub s_prime: Option<Vec<f64>>,
    pub s_binary: Vec<u8>,
    pub u: Vec<f64>,
    pub j: Vec<f64>,
}

impl ScoreTable {
    pub fn position(&self, id: SampleId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }
}

/// What a run produces without looking at provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub initial_labeled: usize,
    pub initial_similar: usize,
    pub initial_eval: Option<Evaluation>,
    pub cycles: Vec<CycleRecord>,
    pub final_eval: Evaluation,
    pub training_size: usize,
    pub labeled_total: usize,
    pub scores: Vec<ScoreTable>,
}

impl RunOutcome {
    pub fn queried(&self) -> Vec<SampleId> {
        self.cycles
            .iter()
            .flat_map(|c| c.queried.iter().copied())
            .collect()
    }
}

/// `100 · |queried from L1| / |queried|`.
pub fn compute_pct_l(queried: &[SampleId], provenance: &ProvenanceStore) -> Result<f64> {
    if queried.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut large = 0usize;
    for &id in queried {
        if provenance.get(id)?.machine == Machine::L1 {
            large += 1;
        }
    }
    Ok(100.0 * large as f64 / queried.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: usize,
    pub queried: Vec<SampleId>,
    pub queried_l: usize,
    pub pct_l: f64,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub shortfall: usize,
    pub w_effective: Option<f64>,
    pub labeled_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub setting: Setting,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
    /// None when nothing was queried.
    pub pct_l: Option<f64>,
    pub queried_total: usize,
    pub labeled_total: usize,
    pub training_size: usize,
    pub initial_labeled: usize,
    pub initial_similar: usize,
    pub initial_eval: Option<Evaluation>,
    pub final_eval: Evaluation,
    pub cycles: Vec<CycleReport>,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn from_outcome(outcome: &RunOutcome, provenance: &ProvenanceStore) -> Result<Self> {
        let cycles = outcome
            .cycles
            .iter()
            .map(|c| {
                let pct = if c.queried.is_empty() {
                    0.0
                } else {
                    compute_pct_l(&c.queried, provenance)?
                };
                Ok(CycleReport {
                    cycle: c.cycle,
                    queried: c.queried.clone(),
                    queried_l: (pct * c.queried.len() as f64 / 100.0).round() as usize,
                    pct_l: pct,
                    accuracy: c.eval.map(|e| e.accuracy),
                    f1: c.eval.map(|e| e.f1),
                    shortfall: c.shortfall,
                    w_effective: c.w_effective,
                    labeled_after: c.labeled_after,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let queried = outcome.queried();
        let pct_l = match compute_pct_l(&queried, provenance) {
            Ok(v) => Some(v),
            Err(Error::EmptyHistory) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            setting: outcome.config.setting,
            seed: outcome.config.seed,
            accuracy: outcome.final_eval.accuracy,
            f1: outcome.final_eval.f1,
            pct_l,
            queried_total: queried.len(),
            labeled_total: outcome.labeled_total,
            training_size: outcome.training_size,
            initial_labeled: outcome.initial_labeled,
            initial_similar: outcome.initial_similar,
            initial_eval: outcome.initial_eval,
            final_eval: outcome.final_eval,
            cycles,
            config: outcome.config.clone(),
        })
    }
}

#[derive(Serialize)]
struct EvalFile<'a> {
    cycle: usize,
    accuracy: f64,
    f1: f64,
    confusion: &'a Confusion,
}

#[derive(Serialize)]
struct CycleRow {
    cycle: usize,
    queried: usize,
    queried_l: usize,
    pct_l: f64,
    accuracy: Option<f64>,
    f1: Option<f64>,
    shortfall: usize,
    w_effective: Option<f64>,
    labeled_after: usize,
}

#[derive(Serialize)]
struct ScoreRow {
    sample_id: SampleId,
    s_prime: Option<f64>,
    s_binary: u8,
    u: f64,
    j: f64,
}

#[derive(Serialize)]
struct QueryRow {
    rank: usize,
    sample_id: SampleId,
    s_prime: Option<f64>,
    s_binary: u8,
    u: f64,
    j: f64,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish_csv(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `eval.json`, `cycles.csv` and the per-cycle score and query tables.
/// Returns the written paths.
pub fn write_run_outputs(
    dir: &Path,
    outcome: &RunOutcome,
    report: &RunReport,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    fs::write(&path, serde_json::to_vec_pretty(report)?).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("eval.json");
    let eval = EvalFile {
        cycle: report.cycles.len(),
        accuracy: report.accuracy,
        f1: report.f1,
        confusion: &report.final_eval.confusion,
    };
    fs::write(&path, serde_json::to_vec_pretty(&eval)?).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("cycles.csv");
    let mut w = csv_writer(&path)?;
    for c in &report.cycles {
        w.serialize(CycleRow {
            cycle: c.cycle,
            queried: c.queried.len(),
            queried_l: c.queried_l,
            pct_l: c.pct_l,
            accuracy: c.accuracy,
            f1: c.f1,
            shortfall: c.shortfall,
            w_effective: c.w_effective,
            labeled_after: c.labeled_after,
        })?;
    }
    finish_csv(w, &path)?;
    written.push(path);

    for (k, (table, record)) in outcome.scores.iter().zip(&outcome.cycles).enumerate() {
        let s_prime = |i: usize| table.s_prime.as_ref().map(|s| s[i]);
        let path = dir.join(format!("scores_cycle_{}.csv", k + 1));
        let mut w = csv_writer(&path)?;
        for (i, &id) in table.ids.iter().enumerate() {
            w.serialize(ScoreRow {
                sample_id: id,
                s_prime: s_prime(i),
                s_binary: table.s_binary[i],
                u: table.u[i],
                j: table.j[i],
            })?;
        }
        finish_csv(w, &path)?;
        written.push(path);

        let path = dir.join(format!("queries_cycle_{}.csv", k + 1));
        let mut w = csv_writer(&path)?;
        for (rank, &id) in record.queried.iter().enumerate() {
            let i = table.position(id).ok_or_else(|| {
                Error::Malformed(format!("queried id {id} missing from the score table"))
            })?;
            w.serialize(QueryRow {
                rank: rank + 1,
                sample_id: id,
                s_prime: s_prime(i),
                s_binary: table.s_binary[i],
                u: table.u[i],
                j: table.j[i],
            })?;
        }
        finish_csv(w, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    finish_csv(w, path)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Mean and sample standard deviation of a set of runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    /// `None` for an empty slice; the deviation of a single value is zero.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }
}

/// Aggregate of all runs of one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub setting: Setting,
    pub runs: usize,
    pub accuracy: MeanSd,
    pub f1: MeanSd,
    /// Over runs that queried anything.
    pub pct_l: Option<MeanSd>,
}

/// Groups reports by setting, in the canonical setting order.
pub fn summarize(reports: &[RunReport]) -> Vec<SettingSummary> {
    Setting::ALL
        .iter()
        .filter_map(|&setting| {
            let runs: Vec<&RunReport> = reports.iter().filter(|r| r.setting == setting).collect();
            let accuracy = MeanSd::of(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>())?;
            let f1 = MeanSd::of(&runs.iter().map(|r| r.f1).collect::<Vec<_>>())?;
            let pct_l = MeanSd::of(&runs.iter().filter_map(|r| r.pct_l).collect::<Vec<_>>());
            Some(SettingSummary {
                setting,
                runs: runs.len(),
                accuracy,
                f1,
                pct_l,
            })
        })
        .collect()
}

/// Markdown table with accuracy, F1 score and %L per setting.
pub fn comparison_table(summaries: &[SettingSummary]) -> String {
    let cell = |m: &MeanSd, digits: usize| {
        if m.n > 1 {
            format!("{:.digits$} ± {:.digits$}", m.mean, m.sd)
        } else {
            format!("{:.digits$}", m.mean)
        }
    };
    let mut out =
        String::from("| Setting | Runs | Accuracy | F1 Score | %L |\n|---|---|---|---|---|\n");
    for s in summaries {
        let pct = s
            .pct_l
            .as_ref()
            .map_or_else(|| "-".to_string(), |m| cell(m, 2));
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            s.setting,
            s.runs,
            cell(&s.accuracy, 4),
            cell(&s.f1, 4),
            pct
        ));
    }
    out
}

#[derive(Serialize)]
struct ComparisonRow {
    setting: Setting,
    runs: usize,
    accuracy_mean: f64,
    accuracy_sd: f64,
    f1_mean: f64,
    f1_sd: f64,
    #[serde(rename = "pctL_mean")]
    pct_l_mean: Option<f64>,
    #[serde(rename = "pctL_sd")]
    pct_l_sd: Option<f64>,
}

pub fn write_comparison_csv(path: &Path, summaries: &[SettingSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for s in summaries {
        w.serialize(ComparisonRow {
            setting: s.setting,
            runs: s.runs,
            accuracy_mean: s.accuracy.mean,
            accuracy_sd: s.accuracy.sd,
            f1_mean: s.f1.mean,
            f1_sd: s.f1.sd,
            pct_l_mean: s.pct_l.map(|m| m.mean),
            pct_l_sd: s.pct_l.map(|m| m.sd),
        })?;
    }
    finish_csv(w, path)
}
