//! One function per subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ads_core::audit::gradient_audit;
use ads_core::data::{load_normalized, load_provenance, Dataset, ProvenanceStore};
use ads_core::experiment::{
    comparison_table, prepare_split, read_sweep_csv, run_ablation, run_setting, summarize,
    summarize_sweep, sweep_table, write_comparison_csv, write_run_outputs, write_sweep_csv,
    AblationGrid, ExperimentConfig, RunReport, Setting, SimulatedOracle, Split, DEFAULT_PER_CYCLE,
};
use ads_core::synth::{build_benchmark, GeneratorConfig, Preset};
use ads_service::{Phase, Service, ServiceConfig};
use anyhow::{bail, Context, Result};

use crate::output::{read_config, write_json, write_manifest, CONFIG_ECHO_FILE};
use crate::{Command, Common};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            config,
            seed,
            preset,
            scale,
            out,
        } => generate(config.as_deref(), seed, preset, scale, &out),
        Command::Run {
            common,
            setting,
            cycles,
            per_cycle,
            budget,
        } => run(&common, setting, cycles, per_cycle, budget),
        Command::Bench {
            common,
            seeds,
            random_seeds,
        } => bench(&common, seeds, random_seeds),
        Command::Ablate {
            common,
            seeds,
            per_cycle,
            jobs,
        } => ablate(&common, seeds, per_cycle, jobs),
        Command::Serve {
            common,
            bind,
            idle_timeout,
        } => serve(&common, bind, idle_timeout),
        Command::Gradcheck { seed, out } => gradcheck(seed, out.as_deref()),
        Command::Report { out } => report(&out),
    }
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    config_or(common, ExperimentConfig::default())
}

fn config_or(common: &Common, fallback: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => read_config(path)?,
        None => fallback,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_data(dir: &Path) -> Result<(Dataset, ProvenanceStore)> {
    let (dataset, _, _) =
        load_normalized(dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    let provenance = load_provenance(dir)
        .with_context(|| format!("loading provenance from {}", dir.display()))?;
    Ok((dataset, provenance))
}

fn generate(
    config: Option<&Path>,
    seed: u64,
    preset: Preset,
    scale: f64,
    out: &Path,
) -> Result<()> {
    let cfg = match config {
        Some(path) => read_config(path)?,
        None => GeneratorConfig::preset(preset, seed).scaled(scale),
    };
    let summary = build_benchmark(&cfg, out)?;
    write_json(&out.join(CONFIG_ECHO_FILE), &cfg)?;
    println!(
        "wrote {} samples to {} ({:.1}% from the dissimilar machine)",
        summary.total,
        out.display(),
        100.0 * summary.large_fraction
    );
    write_manifest(out, "generate")
}

fn run_one(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    provenance: &ProvenanceStore,
    split: &Split,
    out: &Path,
) -> Result<RunReport> {
    let outcome = run_setting(
        cfg,
        dataset,
        split,
        &mut SimulatedOracle::new(provenance.clone()),
    )
    .with_context(|| format!("running {} with seed {}", cfg.setting, cfg.seed))?;
    let report = RunReport::from_outcome(&outcome, provenance)?;
    write_run_outputs(out, &outcome, &report)?;
    Ok(report)
}

fn run(
    common: &Common,
    setting: Option<Setting>,
    cycles: Option<usize>,
    per_cycle: Option<usize>,
    budget: Option<usize>,
) -> Result<()> {
    let mut cfg = base_config(common)?;
    if let Some(setting) = setting {
        cfg.setting = setting;
    }
    let budget = budget
        .or_else(|| cycles.zip(per_cycle).map(|(c, p)| c * p))
        .unwrap_or(cfg.total_query_budget);
    cfg = match (cycles, per_cycle) {
        (Some(c), _) => cfg.with_cycles(budget, c),
        (None, Some(p)) => {
            let mut cfg = cfg.with_cycles(budget, budget.div_ceil(p.max(1)));
            cfg.samples_per_cycle = p;
            cfg
        }
        (None, None) => {
            let c = cfg.cycles;
            cfg.with_cycles(budget, c)
        }
    };
    cfg.validate()?;
    let (dataset, provenance) = load_data(&common.data)?;
    write_json(&common.out.join(CONFIG_ECHO_FILE), &cfg)?;
    let split = prepare_split(&dataset, &provenance, &cfg)?;
    let report = run_one(&cfg, &dataset, &provenance, &split, &common.out)?;
    print!(
        "{}",
        comparison_table(&summarize(std::slice::from_ref(&report)))
    );
    write_manifest(&common.out, "run")
}

fn bench(common: &Common, seeds: u64, random_seeds: u64) -> Result<()> {
    let base = base_config(common)?;
    base.validate()?;
    let (dataset, provenance) = load_data(&common.data)?;
    write_json(&common.out.join(CONFIG_ECHO_FILE), &base)?;
    let mut splits: BTreeMap<u64, Split> = BTreeMap::new();
    let mut reports = Vec::new();
    for setting in Setting::ALL {
        let runs = match setting {
            Setting::RandomS | Setting::RandomSL => seeds.max(random_seeds),
            _ => seeds,
        };
        for k in 0..runs {
            let cfg = base.clone().with_setting(setting).with_seed(base.seed + k);
            if let std::collections::btree_map::Entry::Vacant(slot) = splits.entry(cfg.seed) {
                slot.insert(prepare_split(&dataset, &provenance, &cfg)?);
            }
            let dir = common
                .out
                .join(setting.as_str())
                .join(format!("seed_{}", cfg.seed));
            let report = run_one(&cfg, &dataset, &provenance, &splits[&cfg.seed], &dir)?;
            tracing::info!(%setting, seed = cfg.seed, accuracy = report.accuracy, pct_l = ?report.pct_l, "run finished");
            reports.push(report);
        }
    }
    let summaries = summarize(&reports);
    let table = comparison_table(&summaries);
    write_comparison_csv(&common.out.join("comparison.csv"), &summaries)?;
    fs::write(common.out.join("comparison.md"), &table)?;
    print!("{table}");
    write_manifest(&common.out, "bench")
}

fn ablate(common: &Common, seeds: u64, per_cycle: Option<Vec<usize>>, jobs: usize) -> Result<()> {
    let base = config_or(common, ExperimentConfig::sweep_default())?;
    base.validate()?;
    let mut grid = AblationGrid::standard((base.seed..base.seed + seeds).collect());
    grid.per_cycle = per_cycle.unwrap_or_else(|| DEFAULT_PER_CYCLE.to_vec());
    if grid.is_empty() {
        bail!("the grid is empty");
    }
    let (dataset, provenance) = load_data(&common.data)?;
    write_json(&common.out.join(CONFIG_ECHO_FILE), &base)?;
    write_json(&common.out.join("grid.json"), &grid)?;
    let rows = run_ablation(&grid, &base, &dataset, &provenance, jobs)?;
    write_sweep_csv(&common.out.join("sweep.csv"), &rows)?;
    let table = sweep_table(&summarize_sweep(&rows));
    fs::write(common.out.join("sweep.md"), &table)?;
    print!("{table}");
    write_manifest(&common.out, "ablate")
}

fn serve(common: &Common, bind: SocketAddr, idle_timeout: Option<u64>) -> Result<()> {
    let cfg = base_config(common)?;
    cfg.validate()?;
    let (dataset, provenance) = load_data(&common.data)?;
    write_json(&common.out.join(CONFIG_ECHO_FILE), &cfg)?;
    let runtime = tokio::runtime::Runtime::new()?;
    let outcome = runtime.block_on(async {
        let listener = ads_service::bind(bind).await?;
        let service = Service::start(
            ServiceConfig {
                experiment: cfg,
                checkpoint_dir: common.out.join("checkpoint"),
                out_dir: Some(common.out.clone()),
                idle_timeout: idle_timeout.map(Duration::from_secs),
            },
            dataset,
            provenance,
        )?;
        eprintln!(
            "annotation service listening on http://{}",
            listener.local_addr()?
        );
        let (stopped_tx, stopped_rx) = tokio::sync::oneshot::channel();
        let watcher = Arc::clone(&service);
        std::thread::spawn(move || loop {
            let phase = watcher.wait_until_stopped(Duration::from_secs(3600));
            if matches!(phase, Phase::TimedOut | Phase::Failed) {
                let _ = stopped_tx.send(());
                return;
            }
            if phase == Phase::Finished {
                return;
            }
        });
        let shutdown = async move {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = stopped_rx => {}
            }
        };
        ads_service::serve(listener, Arc::clone(&service), shutdown).await?;
        anyhow::Ok(service.status())
    })?;
    runtime.shutdown_background();
    write_manifest(&common.out, "serve")?;
    match outcome.state {
        Phase::TimedOut | Phase::Failed => bail!(
            "{}; the run is checkpointed under {}",
            outcome.error.unwrap_or_default(),
            common.out.join("checkpoint").display()
        ),
        _ => Ok(()),
    }
}

fn gradcheck(seed: u64, out: Option<&Path>) -> Result<()> {
    let reports = gradient_audit(seed)?;
    for r in &reports {
        println!(
            "{} {:<60} checked {:>4} skipped {:>3} max rel error {:.2e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.checked,
            r.skipped,
            r.max_rel_error
        );
    }
    if let Some(out) = out {
        write_json(&out.join("gradcheck.json"), &reports)?;
        write_manifest(out, "gradcheck")?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} gradient checks failed");
    }
    Ok(())
}

fn find_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            find_files(&path, name, out)?;
        } else if path.file_name().is_some_and(|n| n == name) {
            out.push(path);
        }
    }
    Ok(())
}

fn report(out: &Path) -> Result<()> {
    let mut report_files = Vec::new();
    find_files(out, "report.json", &mut report_files)?;
    let mut sweep_files = Vec::new();
    find_files(out, "sweep.csv", &mut sweep_files)?;
    if report_files.is_empty() && sweep_files.is_empty() {
        bail!("no report.json or sweep.csv under {}", out.display());
    }
    report_files.sort();
    if !report_files.is_empty() {
        let reports = report_files
            .iter()
            .map(|p| -> Result<RunReport> {
                let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        let summaries = summarize(&reports);
        let table = comparison_table(&summaries);
        write_comparison_csv(&out.join("comparison.csv"), &summaries)?;
        fs::write(out.join("comparison.md"), &table)?;
        print!("{table}");
    }
    if !sweep_files.is_empty() {
        let mut rows = Vec::new();
        for p in &sweep_files {
            rows.extend(read_sweep_csv(p)?);
        }
        let table = sweep_table(&summarize_sweep(&rows));
        fs::write(out.join("sweep.md"), &table)?;
        print!("{table}");
    }
    write_manifest(out, "report")
}
