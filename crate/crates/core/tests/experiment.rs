use std::collections::BTreeSet;

use ads_core::data::{ClassLabel, Dataset, Machine, Provenance, ProvenanceStore, SampleId};
use ads_core::experiment::*;
use ads_core::synth::{generate_benchmark, GeneratorConfig};
use ads_core::Error;

fn small_benchmark() -> (Dataset, ProvenanceStore) {
    let gc = GeneratorConfig::default().scaled(0.25);
    let (ds, prov, _) = generate_benchmark(&gc).unwrap().into_dataset().unwrap();
    (ds, prov)
}

/// Short training schedules so the loop runs in seconds.
fn quick(setting: Setting, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default()
        .with_setting(setting)
        .with_seed(seed)
        .with_cycles(40, 4);
    cfg.classifier.train.epochs = 4;
    cfg.classifier.min_steps = 40;
    cfg.similarity.train.epochs = 3;
    cfg.wta.train.epochs = 3;
    cfg
}

fn run(cfg: &ExperimentConfig, ds: &Dataset, prov: &ProvenanceStore) -> RunOutcome {
    let split = prepare_split(ds, prov, cfg).unwrap();
    run_setting(cfg, ds, &split, &mut SimulatedOracle::new(prov.clone())).unwrap()
}

#[test]
fn split_is_stratified_and_shared_across_settings() {
    let (ds, prov) = small_benchmark();
    let a = prepare_split(&ds, &prov, &quick(Setting::Ads, 1)).unwrap();
    let b = prepare_split(&ds, &prov, &quick(Setting::RandomSL, 7)).unwrap();
    assert_eq!(a.test, b.test);
    let test: BTreeSet<SampleId> = a.test.ids.iter().copied().collect();
    for id in &test {
        assert_ne!(prov.get(*id).unwrap().machine, Machine::L1);
    }
    assert_eq!(test.len(), 40);
    assert!(a.pool.iter().all(|id| !test.contains(id)));
    assert_eq!(a.pool.len() + test.len(), ds.len());
    assert_eq!(a.initial.len(), a.pool.len() / 5);
    for ann in &a.initial {
        let p = prov.get(ann.sample_id).unwrap();
        assert_eq!(p.class_label, ann.class_label);
        assert_eq!(p.machine.source(), ann.source);
    }
}

#[test]
fn ads_run_accounts_for_every_label() {
    let (ds, prov) = small_benchmark();
    let cfg = quick(Setting::Ads, 3);
    let out = run(&cfg, &ds, &prov);
    assert_eq!(out.cycles.len(), 4);
    assert_eq!(out.labeled_total, out.initial_labeled + 40);
    assert!(out
        .cycles
        .iter()
        .all(|c| c.queried.len() == 10 && c.eval.is_some()));
    let queried = out.queried();
    assert_eq!(queried.iter().collect::<BTreeSet<_>>().len(), 40);
    assert_eq!(out.training_size, out.initial_similar + 40);
    for (table, record) in out.scores.iter().zip(&out.cycles) {
        assert_eq!(
            table.s_binary.iter().map(|&b| b as usize).sum::<usize>(),
            (cfg.w * table.ids.len() as f64).floor() as usize
        );
        for id in &record.queried {
            let i = table.position(*id).unwrap();
            assert_eq!(table.s_binary[i], 1);
        }
    }
    let report = RunReport::from_outcome(&out, &prov).unwrap();
    assert_eq!(report.queried_total, 40);
    assert!(report.pct_l.is_some());
}

#[test]
fn zero_cycles_reports_the_initial_classifier() {
    let (ds, prov) = small_benchmark();
    let mut cfg = quick(Setting::Ads, 2);
    cfg.cycles = 0;
    cfg.total_query_budget = 0;
    let out = run(&cfg, &ds, &prov);
    assert!(out.cycles.is_empty());
    assert_eq!(Some(out.final_eval), out.initial_eval);
    assert_eq!(out.labeled_total, out.initial_labeled);
    let report = RunReport::from_outcome(&out, &prov).unwrap();
    assert_eq!(report.pct_l, None);
}

#[test]
fn runs_are_deterministic() {
    let (ds, prov) = small_benchmark();
    for setting in [Setting::Ads, Setting::RandomS] {
        let cfg = quick(setting, 5);
        assert_eq!(run(&cfg, &ds, &prov), run(&cfg, &ds, &prov));
    }
}

#[test]
fn no_cl_equals_ads_with_filter_forced_open() {
    let (ds, prov) = small_benchmark();
    let no_cl = run(&quick(Setting::AdsNoCl, 4), &ds, &prov);
    let mut forced = quick(Setting::Ads, 4);
    forced.policy = Some(LoopPolicy {
        filter: FilterMode::ForcedOnes,
        classifier_data: ClassifierData::AllLabeled,
    });
    let forced = run(&forced, &ds, &prov);
    assert_eq!(no_cl.cycles, forced.cycles);
    assert_eq!(no_cl.final_eval, forced.final_eval);
    for (a, b) in no_cl.scores.iter().zip(&forced.scores) {
        assert_eq!(a.s_binary, b.s_binary);
        assert_eq!(a.u, b.u);
        assert_eq!(a.j, b.j);
        assert!(a.s_prime.is_none() && b.s_prime.is_some());
    }
}

#[test]
fn provenance_outside_the_oracle_does_not_reach_the_loop() {
    let (ds, prov) = small_benchmark();
    let cfg = quick(Setting::Ads, 6);
    let split = prepare_split(&ds, &prov, &cfg).unwrap();
    let clean = run_setting(&cfg, &ds, &split, &mut SimulatedOracle::new(prov.clone())).unwrap();

    let mut poisoned = ProvenanceStore::new();
    for (id, p) in prov.iter() {
        let machine = if p.machine == Machine::L1 {
            Machine::S1
        } else {
            Machine::L1
        };
        poisoned.insert(
            id,
            Provenance {
                machine,
                class_label: p.class_label,
            },
        );
    }
    let mut tampered = split.clone();
    tampered
        .supervised
        .iter_mut()
        .for_each(|e| e.1 = ClassLabel::Normal);
    tampered.random_s_candidates.clear();
    let dirty = run_setting(&cfg, &ds, &tampered, &mut SimulatedOracle::new(poisoned)).unwrap();
    assert_eq!(clean, dirty);
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let (ds, prov) = small_benchmark();
    let cfg = quick(Setting::Ads, 8);
    let split = prepare_split(&ds, &prov, &cfg).unwrap();
    let full = run_setting(&cfg, &ds, &split, &mut SimulatedOracle::new(prov.clone())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut oracle = SimulatedOracle::new(prov.clone());
    let mut first = AdsRun::new(&cfg, &ds, &split, None).unwrap();
    let Step::Query(p) = first.next(&ds).unwrap() else {
        panic!("expected queries")
    };
    first.submit(&oracle.annotate(&p.batch).unwrap()).unwrap();
    let Step::Query(p2) = first.next(&ds).unwrap() else {
        panic!("expected queries")
    };
    first.save(dir.path()).unwrap();
    drop(first);

    let mut resumed = AdsRun::load(dir.path()).unwrap();
    assert_eq!(resumed.cycle(), 1);
    assert_eq!(resumed.pending().unwrap(), &p2);
    let out = run_with_oracle(&mut resumed, &ds, &mut oracle).unwrap();
    assert_eq!(out, full);
}

#[test]
fn submissions_must_match_the_pending_batch() {
    let (ds, prov) = small_benchmark();
    let cfg = quick(Setting::AdsNoCl, 9);
    let split = prepare_split(&ds, &prov, &cfg).unwrap();
    let oracle = SimulatedOracle::new(prov.clone());
    let mut run = AdsRun::new(&cfg, &ds, &split, None).unwrap();
    assert!(run.submit(&[]).is_err());
    let Step::Query(p) = run.next(&ds).unwrap() else {
        panic!("expected queries")
    };
    let labels = oracle.label(&p.batch.ids()).unwrap();
    let stranger = split.initial[0].sample_id;
    assert!(matches!(
        run.submit(&[(stranger, ClassLabel::Normal)]),
        Err(Error::NotPending(_))
    ));
    let mut doubled = labels.clone();
    doubled.push(labels[0]);
    assert!(matches!(run.submit(&doubled), Err(Error::NotPending(_))));
    assert!(run.submit(&labels[1..]).is_err());
    assert_eq!(run.pool().labeled_ids().len(), split.initial.len());
    let mut reversed = labels.clone();
    reversed.reverse();
    run.submit(&reversed).unwrap();
    assert_eq!(run.records()[0].queried, p.batch.ids());
}

#[test]
fn random_pick_matches_the_pool_composition() {
    let (ds, prov) = small_benchmark();
    let mut pct = Vec::new();
    let mut fraction = 0.0;
    for seed in 0..20 {
        let mut cfg = quick(Setting::RandomSL, seed);
        cfg.classifier.train.epochs = 1;
        cfg.classifier.min_steps = 0;
        let split = prepare_split(&ds, &prov, &cfg).unwrap();
        let initial = split.initial_ids();
        let rest: Vec<SampleId> = split
            .pool
            .iter()
            .copied()
            .filter(|id| !initial.contains(id))
            .collect();
        fraction = compute_pct_l(&rest, &prov).unwrap();
        let out = run_setting(&cfg, &ds, &split, &mut SimulatedOracle::new(prov.clone())).unwrap();
        pct.push(RunReport::from_outcome(&out, &prov).unwrap().pct_l.unwrap());
    }
    let mean = pct.iter().sum::<f64>() / pct.len() as f64;
    assert!(
        (mean - fraction).abs() < 5.0,
        "mean {mean} vs pool {fraction}"
    );

    let out = run(&quick(Setting::RandomS, 0), &ds, &prov);
    assert_eq!(
        RunReport::from_outcome(&out, &prov).unwrap().pct_l,
        Some(0.0)
    );
    let sup = run(&quick(Setting::Supervised, 0), &ds, &prov);
    assert!(sup.cycles.is_empty());
    assert_eq!(sup.training_size, 160);
}

#[test]
fn outputs_are_written() {
    let (ds, prov) = small_benchmark();
    let out = run(&quick(Setting::Ads, 10), &ds, &prov);
    let report = RunReport::from_outcome(&out, &prov).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_run_outputs(dir.path(), &out, &report).unwrap();
    assert_eq!(files.len(), 3 + 2 * 4);
    let queries = std::fs::read_to_string(dir.path().join("queries_cycle_1.csv")).unwrap();
    assert!(queries.starts_with("rank,sample_id,s_prime,s_binary,u,j\n"));
    assert_eq!(queries.lines().count(), 11);
    let scores = std::fs::read_to_string(dir.path().join("scores_cycle_2.csv")).unwrap();
    assert!(scores.starts_with("sample_id,s_prime,s_binary,u,j\n"));
    let back: RunReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, report);
    let eval: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["cycle"], 4);
    assert!(eval["confusion"]["fn"].is_number());
}

#[test]
fn ablation_grid_shapes() {
    let grid = AblationGrid::standard(vec![0]);
    assert_eq!(grid.len(), 4 * 16);
    let two = AblationGrid {
        arms: vec![
            Arm {
                budget: 800,
                init_fraction: 0.2,
                cl: true,
            },
            Arm {
                budget: 800,
                init_fraction: 0.2,
                cl: false,
            },
        ],
        per_cycle: DEFAULT_PER_CYCLE.to_vec(),
        seeds: vec![0],
    };
    assert_eq!(two.len(), 32);

    let (ds, prov) = small_benchmark();
    let one = AblationGrid {
        arms: vec![Arm {
            budget: 20,
            init_fraction: 0.2,
            cl: true,
        }],
        per_cycle: vec![10],
        seeds: vec![1],
    };
    let rows = run_ablation(&one, &quick(Setting::Ads, 0), &ds, &prov, 1).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].per_cycle, 10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("setting,cl,budget,init_pct,per_cycle,cycles,seed,pctL,accuracy,f1\n"));
}
