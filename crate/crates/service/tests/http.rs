use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use ads_core::data::{Dataset, ProvenanceStore};
use ads_core::experiment::{
    prepare_split, run_setting, ExperimentConfig, RunReport, Setting, SimulatedOracle,
};
use ads_core::synth::{generate_benchmark, GeneratorConfig};
use ads_service::{
    LabelAck, LabelSubmission, PendingQuery, Phase, PublicReport, Service, ServiceConfig, Status,
    PARTIAL_LABELS_FILE,
};
use reqwest::StatusCode;
use serde_json::{json, Value};

fn small_benchmark() -> (Dataset, ProvenanceStore) {
    let gc = GeneratorConfig::default().scaled(0.25);
    let (ds, prov, _) = generate_benchmark(&gc).unwrap().into_dataset().unwrap();
    (ds, prov)
}

fn quick(setting: Setting, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default()
        .with_setting(setting)
        .with_seed(seed)
        .with_cycles(30, 3);
    cfg.classifier.train.epochs = 4;
    cfg.classifier.min_steps = 40;
    cfg.similarity.train.epochs = 3;
    cfg.wta.train.epochs = 3;
    cfg
}

fn simulated_report(cfg: &ExperimentConfig, ds: &Dataset, prov: &ProvenanceStore) -> RunReport {
    let split = prepare_split(ds, prov, cfg).unwrap();
    let outcome = run_setting(cfg, ds, &split, &mut SimulatedOracle::new(prov.clone())).unwrap();
    RunReport::from_outcome(&outcome, prov).unwrap()
}

struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    async fn launch(service: Arc<Service>) -> Self {
        let listener = ads_service::bind("127.0.0.1:0".parse().unwrap())
            .await
            .unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(ads_service::serve(
            listener,
            service,
            std::future::pending(),
        ));
        Self {
            http: reqwest::Client::new(),
            base,
        }
    }

    async fn get(&self, path: &str) -> reqwest::Response {
        self.http
            .get(format!("{}{}", self.base, path))
            .send()
            .await
            .unwrap()
    }

    async fn status(&self) -> Status {
        self.get("/status").await.json().await.unwrap()
    }

    async fn post(&self, body: &Value) -> reqwest::Response {
        self.http
            .post(format!("{}/labels", self.base))
            .json(body)
            .send()
            .await
            .unwrap()
    }

    /// Polls until the loop waits for labels or stops.
    async fn settle(&self) -> Status {
        for _ in 0..2400 {
            let s = self.status().await;
            if s.state != Phase::Training {
                return s;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
        panic!("service kept training");
    }
}

fn truth(prov: &ProvenanceStore, q: &PendingQuery) -> String {
    prov.get(q.sample_id).unwrap().class_label.to_string()
}

fn submission(prov: &ProvenanceStore, q: &PendingQuery) -> Value {
    json!({ "sample_id": q.sample_id, "class_label": truth(prov, q), "annotator_id": "script" })
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_annotator_reproduces_the_simulated_run() {
    let (ds, prov) = small_benchmark();
    let cfg = quick(Setting::Ads, 5);
    let expected = simulated_report(&cfg, &ds, &prov);
    let ckpt = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let service = Service::start(
        ServiceConfig {
            experiment: cfg.clone(),
            checkpoint_dir: ckpt.path().to_path_buf(),
            out_dir: Some(out.path().to_path_buf()),
            idle_timeout: None,
        },
        ds.clone(),
        prov.clone(),
    )
    .unwrap();
    let client = Client::launch(Arc::clone(&service)).await;

    let first: Value = client.get("/status").await.json().await.unwrap();
    assert_eq!(first["cycle"], 0);
    assert_eq!(first["pending"], 0);
    assert_eq!(first["state"], "training");
    assert_eq!(client.get("/report").await.status(), StatusCode::CONFLICT);

    let mut seen = BTreeSet::new();
    for cycle in 1..=3 {
        let status = client.settle().await;
        assert_eq!(status.state, Phase::AwaitingLabels);
        assert_eq!(status.cycle, cycle - 1);
        assert_eq!(status.pending, 10);

        let raw: Vec<Value> = client
            .get(&format!("/queries?cycle={cycle}"))
            .await
            .json()
            .await
            .unwrap();
        for item in &raw {
            let keys: BTreeSet<&str> = item
                .as_object()
                .unwrap()
                .keys()
                .map(String::as_str)
                .collect();
            assert_eq!(
                keys,
                BTreeSet::from([
                    "sample_id",
                    "cycle",
                    "signal",
                    "s_prime",
                    "s_binary",
                    "u",
                    "j",
                    "queued_at"
                ])
            );
        }
        let queries: Vec<PendingQuery> = serde_json::from_value(Value::Array(raw)).unwrap();
        assert_eq!(queries.len(), 10);
        for q in &queries {
            assert_eq!(q.cycle, cycle);
            assert_eq!(q.signal.len(), ds.window());
            assert_eq!(q.signal[3][0], 3.0);
            assert_eq!(q.s_binary, 1);
            assert!(seen.insert(q.sample_id));
        }
        let scores: Value = client
            .get(&format!("/scores?cycle={cycle}"))
            .await
            .json()
            .await
            .unwrap();
        assert!(scores["ids"].as_array().unwrap().len() > 10);

        let ack: LabelAck = client
            .post(&submission(&prov, &queries[0]))
            .await
            .json()
            .await
            .unwrap();
        assert_eq!(
            ack,
            LabelAck {
                accepted: 1,
                remaining: 9,
                cycle
            }
        );
        let again = client.post(&submission(&prov, &queries[0])).await;
        assert_eq!(again.status(), StatusCode::CONFLICT);
        let maybe = client
            .post(&json!({ "sample_id": queries[1].sample_id, "class_label": "maybe" }))
            .await;
        assert_eq!(maybe.status(), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(client.status().await.pending, 9);
        let open: Vec<PendingQuery> = client.get("/queries").await.json().await.unwrap();
        assert_eq!(open.len(), 9);
        assert!(open.iter().all(|q| q.sample_id != queries[0].sample_id));

        let rest: Vec<Value> = queries[1..].iter().map(|q| submission(&prov, q)).collect();
        let ack: LabelAck = client.post(&Value::Array(rest)).await.json().await.unwrap();
        assert_eq!(ack.remaining, 0);
        let late = client.post(&submission(&prov, &queries[2])).await;
        assert_eq!(late.status(), StatusCode::CONFLICT);
    }

    assert_eq!(client.settle().await.state, Phase::Finished);
    assert_eq!(client.status().await.cycle, 3);
    assert_eq!(service.full_report().unwrap(), expected);
    let on_disk: RunReport =
        serde_json::from_slice(&std::fs::read(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, expected);

    let public: PublicReport = client.get("/report").await.json().await.unwrap();
    assert_eq!(public, PublicReport::from(&expected));
    let raw: Value = client.get("/report").await.json().await.unwrap();
    let text = raw.to_string();
    assert!(!text.contains("machine") && !text.contains("queried_l") && !text.contains("sample"));
    assert_eq!(
        client
            .get("/queries?cycle=2")
            .await
            .json::<Vec<Value>>()
            .await
            .unwrap()
            .len(),
        0
    );
    service.wait().unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn idle_annotator_times_out_and_the_session_resumes() {
    let (ds, prov) = small_benchmark();
    let cfg = quick(Setting::AdsNoCl, 6);
    let expected = simulated_report(&cfg, &ds, &prov);
    let ckpt = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        experiment: cfg.clone(),
        checkpoint_dir: ckpt.path().to_path_buf(),
        out_dir: None,
        idle_timeout: Some(Duration::from_millis(1500)),
    };

    let service = Service::start(config.clone(), ds.clone(), prov.clone()).unwrap();
    let client = Client::launch(Arc::clone(&service)).await;
    client.settle().await;
    let queries: Vec<PendingQuery> = client.get("/queries?cycle=1").await.json().await.unwrap();
    let early: Vec<Value> = queries[..4].iter().map(|q| submission(&prov, q)).collect();
    client
        .post(&Value::Array(early))
        .await
        .error_for_status()
        .unwrap();
    assert_eq!(
        service.wait_until_stopped(Duration::from_secs(30)),
        Phase::TimedOut
    );
    let status = client.status().await;
    assert_eq!(status.state, Phase::TimedOut);
    assert!(status.error.unwrap().contains("did not answer"));
    assert!(service.wait().is_err());
    assert!(ckpt.path().join(PARTIAL_LABELS_FILE).exists());

    let resumed = Service::start(config, ds.clone(), prov.clone()).unwrap();
    let client = Client::launch(Arc::clone(&resumed)).await;
    let status = client.settle().await;
    assert_eq!((status.cycle, status.pending, status.labeled), (0, 6, 4));
    let open: Vec<PendingQuery> = client.get("/queries").await.json().await.unwrap();
    assert_eq!(
        open.iter().map(|q| q.sample_id).collect::<Vec<_>>(),
        queries[4..].iter().map(|q| q.sample_id).collect::<Vec<_>>()
    );
    loop {
        let status = client.settle().await;
        if status.state == Phase::Finished {
            break;
        }
        let open: Vec<PendingQuery> = client.get("/queries").await.json().await.unwrap();
        let body: Vec<Value> = open.iter().map(|q| submission(&prov, q)).collect();
        client
            .post(&Value::Array(body))
            .await
            .error_for_status()
            .unwrap();
    }
    assert!(!ckpt.path().join(PARTIAL_LABELS_FILE).exists());
    assert_eq!(resumed.full_report().unwrap(), expected);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_requests_are_rejected() {
    let (ds, prov) = small_benchmark();
    let ckpt = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        experiment: quick(Setting::Ads, 7),
        checkpoint_dir: ckpt.path().to_path_buf(),
        out_dir: None,
        idle_timeout: None,
    };
    let mut supervised = config.clone();
    supervised.experiment = supervised.experiment.with_setting(Setting::Supervised);
    assert!(Service::start(supervised, ds.clone(), prov.clone()).is_err());

    let service = Service::start(config, ds, prov).unwrap();
    let client = Client::launch(Arc::clone(&service)).await;
    let orphan = client
        .post(&json!({ "sample_id": 99_999_999, "class_label": "normal" }))
        .await;
    assert_eq!(orphan.status(), StatusCode::CONFLICT);
    let body: Value = orphan.json().await.unwrap();
    assert_eq!(body["error"], "not_pending");
    assert_eq!(
        client.post(&json!({ "id": 1 })).await.status(),
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        client.post(&json!([])).await.status(),
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        client.get("/scores").await.status(),
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        client.get("/scores?cycle=9").await.status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        client.get("/queries?cycle=9").await.status(),
        StatusCode::NOT_FOUND
    );

    client.settle().await;
    let queries: Vec<PendingQuery> = client.get("/queries").await.json().await.unwrap();
    let mixed = json!([
        { "sample_id": queries[0].sample_id, "class_label": "abnormal" },
        { "sample_id": queries[0].sample_id, "class_label": "normal" },
    ]);
    assert_eq!(client.post(&mixed).await.status(), StatusCode::CONFLICT);
    assert_eq!(client.status().await.pending, 10);
    let submission = LabelSubmission {
        sample_id: queries[0].sample_id,
        class_label: "Normal".into(),
        annotator_id: None,
        submitted_at: None,
    };
    assert!(service.submit(&[submission]).is_err());
}
