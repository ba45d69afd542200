use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower::ServiceExt;

use scatsim_core::config::{AnalysisConfig, RunConfig};
use scatsim_core::corpus::{parse_imt_name, Corpus, CorpusEntry, CANONICAL_STIMULI};
use scatsim_core::features::FeatureStore;
use scatsim_core::perceptual::ClusterGraph;
use scatsim_core::pipeline::{covered_subset, Extractor};
use scatsim_core::retrieval::evaluate;
use scatsim_core::synth::{make_synthetic_corpus, PlantedCorpusSpec};
use scatsim_service::{router, AppState};

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: PathBuf,
    store: PathBuf,
    corpus: Corpus,
    graph: ClusterGraph,
    analysis: AnalysisConfig,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = PlantedCorpusSpec {
            sample_rate: 8000,
            duration: 0.5,
            clips_per_cluster: 4,
            ..Default::default()
        };
        let (corpus, graph) = make_synthetic_corpus(&spec, 3, dir.path()).unwrap();
        let analysis = AnalysisConfig {
            sample_rate: 8000,
            octaves: 5,
            min_center_frequency: 100.0,
            time_constant: 0.25,
            ..Default::default()
        };
        let store = Extractor::new(&analysis).unwrap().extract(&corpus).unwrap();
        let store_path = dir.path().join("store.scf");
        store.write(&store_path).unwrap();
        Fixture {
            manifest: dir.path().join("manifest.jsonl"),
            store: store_path,
            corpus,
            graph,
            analysis,
            _dir: dir,
        }
    })
}

/// A configuration whose mutable directories live in `work`.
fn config(work: &std::path::Path) -> RunConfig {
    let f = fixture();
    let mut cfg = RunConfig {
        analysis: f.analysis.clone(),
        ..Default::default()
    };
    cfg.retrieval.rank = 3;
    cfg.service.manifest = Some(f.manifest.clone());
    cfg.service.store = Some(f.store.clone());
    cfg.service.metrics_dir = Some(work.join("metrics"));
    cfg.service.annotations_dir = Some(work.join("annotations"));
    cfg.service.stimuli = Some(f.corpus.entries.iter().map(|e| e.id.clone()).collect());
    cfg
}

fn build(cfg: RunConfig) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(cfg).unwrap());
    (router(state.clone()), state)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

/// Colors by planted cluster, optionally merging the first two clusters.
fn annotation(subject: &str, merge: bool) -> Value {
    let mut assignments = BTreeMap::new();
    for (c, members) in fixture().graph.clusters.iter().enumerate() {
        let color = if merge && c == 1 { 0 } else { c };
        for id in members {
            assignments.insert(id.clone(), format!("color{color}"));
        }
    }
    json!({ "subject": subject, "assignments": assignments })
}

async fn wait_job(app: &Router, job: &str) -> Value {
    for _ in 0..600 {
        let (status, body) = get(app, &format!("/v1/jobs/{job}")).await;
        assert_eq!(status, StatusCode::OK);
        let v: Value = serde_json::from_slice(&body).unwrap();
        if v["status"] == "done" || v["status"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {job} did not finish");
}

#[tokio::test]
async fn stimuli_are_listed_in_corpus_order() {
    let work = tempfile::tempdir().unwrap();
    let (app, _) = build(config(work.path()));
    let (status, body) = get(&app, "/v1/stimuli").await;
    assert_eq!(status, StatusCode::OK);
    let list: Vec<Value> = serde_json::from_slice(&body).unwrap();
    let f = fixture();
    assert_eq!(list.len(), f.corpus.len());
    for (entry, e) in list.iter().zip(&f.corpus.entries) {
        assert_eq!(entry["id"], e.id);
        assert_eq!(entry["canonical"], true);
        assert_eq!(entry["imt"]["instrument"], "Synth");
        assert_eq!(entry["audio_url"], format!("/v1/audio/{}", e.id));
    }
    let (again, body2) = get(&app, "/v1/stimuli").await;
    assert_eq!(again, StatusCode::OK);
    assert_eq!(body, body2);
}

#[tokio::test]
async fn missing_or_empty_corpus_is_unavailable() {
    let (app, _) = build(RunConfig::default());
    assert_eq!(get(&app, "/v1/stimuli").await.0, StatusCode::SERVICE_UNAVAILABLE);

    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.jsonl");
    std::fs::write(&manifest, "").unwrap();
    let mut cfg = RunConfig::default();
    cfg.service.manifest = Some(manifest);
    let (app, _) = build(cfg);
    assert_eq!(get(&app, "/v1/stimuli").await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn canonical_stimuli_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let mut names: Vec<&str> = CANONICAL_STIMULI.to_vec();
    names.push("Vn-ord-A4-ff-1c");
    let entries = names
        .iter()
        .map(|n| CorpusEntry {
            id: n.to_string(),
            path: PathBuf::from(format!("{n}.wav")),
            imt: parse_imt_name(n).unwrap(),
        })
        .collect();
    let manifest = dir.path().join("manifest.jsonl");
    Corpus::new(dir.path(), entries).unwrap().write_manifest(&manifest).unwrap();
    let mut cfg = RunConfig::default();
    cfg.service.manifest = Some(manifest);
    let (app, _) = build(cfg);
    let (status, body) = get(&app, "/v1/stimuli").await;
    assert_eq!(status, StatusCode::OK);
    let list: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert_eq!(list.len(), 79);
    assert_eq!(list.iter().filter(|e| e["canonical"] == true).count(), 78);
    let pont = list.iter().find(|e| e["id"] == "Vn-pont-C4-mf-4c").unwrap();
    assert_eq!(pont["imt"]["instrument"], "Vn");
    assert_eq!(pont["imt"]["technique"], "pont");
    assert_eq!(pont["imt"]["pitch"], "C4");
    assert_eq!(pont["imt"]["dynamics"], "mf");
    assert_eq!(pont["imt"]["string"], 4);
}

#[tokio::test]
async fn audio_is_served_as_wav() {
    let work = tempfile::tempdir().unwrap();
    let (app, _) = build(config(work.path()));
    let id = &fixture().corpus.entries[0].id;
    let (status, body) = get(&app, &format!("/v1/audio/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&body[..4], b"RIFF");
    assert_eq!(get(&app, "/v1/audio/nope").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn annotations_are_validated_and_versioned() {
    let work = tempfile::tempdir().unwrap();
    let (app, _) = build(config(work.path()));
    let (status, body) = post_json(&app, "/v1/annotations", &annotation("alice", false)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["version"], 1);

    let mut short = annotation("bob", false);
    let dropped = fixture().corpus.entries[5].id.clone();
    short["assignments"].as_object_mut().unwrap().remove(&dropped);
    let (status, body) = post_json(&app, "/v1/annotations", &short).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["missing"], json!([dropped]));

    let req = Request::post("/v1/annotations")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::BAD_REQUEST);
    let (status, _) = post_json(&app, "/v1/annotations", &annotation("../evil", false)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = post_json(&app, "/v1/annotations", &annotation("alice", true)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["version"], 2);
    let dir = work.path().join("annotations");
    assert!(dir.join("alice.json").exists());
    assert!(dir.join("alice.v1.json").exists());
    let active: Value = serde_json::from_slice(&std::fs::read(dir.join("alice.json")).unwrap()).unwrap();
    assert_eq!(active, annotation("alice", true));
}

#[tokio::test]
async fn retraining_runs_once_per_subject_and_registers_the_metric() {
    let work = tempfile::tempdir().unwrap();
    let gate = Arc::new(Semaphore::new(0));
    let state = Arc::new(AppState::new(config(work.path())).unwrap().with_job_gate(gate.clone()));
    let app = router(state.clone());

    assert_eq!(post_json(&app, "/v1/retrain/alice", &json!({})).await.0, StatusCode::NOT_FOUND);
    assert_eq!(post_json(&app, "/v1/retrain/consensus", &json!({})).await.0, StatusCode::NOT_FOUND);
    post_json(&app, "/v1/annotations", &annotation("alice", false)).await;

    let (status, body) = post_json(&app, "/v1/retrain/alice", &json!({})).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = body["job"].as_str().unwrap().to_string();
    let (status, _) = post_json(&app, "/v1/retrain/alice", &json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, jb) = get(&app, &format!("/v1/jobs/{job}")).await;
    assert_eq!(serde_json::from_slice::<Value>(&jb).unwrap()["status"], "queued");

    // Queries are served while the job waits.
    let id = fixture().corpus.entries[0].id.clone();
    assert_eq!(post_json(&app, "/v1/query", &json!({ "id": id })).await.0, StatusCode::OK);

    gate.add_permits(8);
    let done = wait_job(&app, &job).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(get(&app, "/v1/jobs/job-999").await.0, StatusCode::NOT_FOUND);

    let (_, body) = get(&app, "/v1/metrics").await;
    let metrics: Vec<Value> = serde_json::from_slice(&body).unwrap();
    let names: Vec<&str> = metrics.iter().map(|m| m["id"].as_str().unwrap()).collect();
    assert_eq!(names, ["alice", "identity"]);
    assert!(work.path().join("metrics/alice.scl").exists());

    // The registered metric reproduces the archived report.
    let session = state.snapshot();
    let store = session.store.as_ref().unwrap();
    let train = covered_subset(store, &fixture().graph).unwrap();
    let again = evaluate(&train, &session.metrics["alice"], &[("alice".into(), fixture().graph.clone())], 3).unwrap();
    let archived: Value = done["report"].clone();
    assert_eq!(serde_json::to_value(&again).unwrap(), archived);
    assert!(again.average_precision >= 0.75, "{}", again.average_precision);

    // A second job for the same subject is fine once the first is done.
    let (status, _) = post_json(&app, "/v1/retrain/alice", &json!({})).await;
    assert_eq!(status, StatusCode::ACCEPTED);
}

#[tokio::test]
async fn consensus_uses_the_largest_cluster_count() {
    let work = tempfile::tempdir().unwrap();
    let (app, state) = build(config(work.path()));
    post_json(&app, "/v1/annotations", &annotation("alice", false)).await;
    post_json(&app, "/v1/annotations", &annotation("bob", true)).await;
    let (status, body) = post_json(&app, "/v1/retrain/consensus", &json!({})).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let done = wait_job(&app, body["job"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    let m = state.snapshot().metrics["consensus"].clone();
    assert_eq!(m.provenance.graph, "consensus");

    // With a consensus metric registered it becomes the default.
    let id = fixture().corpus.entries[0].id.clone();
    let (status, body) = post_json(&app, "/v1/query", &json!({ "id": id })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["metric"], "consensus");
}

fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> (String, Vec<u8>) {
    let boundary = "scatsimboundary7";
    let mut body = Vec::new();
    for (name, filename, data) in parts {
        body.extend(format!("--{boundary}\r\n").bytes());
        match filename {
            Some(f) => body.extend(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: audio/wav\r\n\r\n")
                    .bytes(),
            ),
            None => body.extend(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").bytes()),
        }
        body.extend_from_slice(data);
        body.extend(b"\r\n");
    }
    body.extend(format!("--{boundary}--\r\n").bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

async fn post_multipart(app: &Router, parts: &[(&str, Option<&str>, &[u8])]) -> (StatusCode, Value) {
    let (ct, body) = multipart(parts);
    let req = Request::post("/v1/query")
        .header(header::CONTENT_TYPE, ct)
        .body(Body::from(body))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn queries_by_id_and_by_upload() {
    let work = tempfile::tempdir().unwrap();
    let (app, _) = build(config(work.path()));
    let f = fixture();
    let entry = &f.corpus.entries[2];

    let (status, body) = post_json(&app, "/v1/query", &json!({ "id": entry.id, "rank": 4 })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["metric"], "identity");
    let hits = body["results"].as_array().unwrap();
    assert_eq!(hits.len(), 4);
    assert!(hits.iter().all(|h| h["id"] != entry.id.as_str()));
    assert!(hits[0]["imt"]["technique"].is_string());

    let wav = std::fs::read(f.corpus.resolve(entry)).unwrap();
    let (status, body) = post_multipart(&app, &[("audio", Some("q.wav"), &wav), ("rank", None, b"3")]).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["results"][0]["id"], entry.id);
    assert!(body["results"][0]["distance"].as_f64().unwrap() < 1e-6);
    assert_eq!(body["query"], Value::Null);

    let (status, _) = post_multipart(&app, &[("audio", Some("q.wav"), b"garbage bytes")]).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (status, _) = post_json(&app, "/v1/query", &json!({ "id": entry.id, "rank": 0 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post_json(&app, "/v1/query", &json!({ "id": entry.id, "metric": "nobody" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post_json(&app, "/v1/query", &json!({ "id": "missing-clip" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post_json(&app, "/v1/query", &json!({})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let req = || {
        Request::post(format!("/v1/query?id={}&rank=2", entry.id))
            .body(Body::empty())
            .unwrap()
    };
    let (s1, b1) = send(&app, req()).await;
    let (s2, b2) = send(&app, req()).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(b1, b2);
}

#[tokio::test]
async fn posts_need_the_token_when_one_is_configured() {
    let work = tempfile::tempdir().unwrap();
    let mut cfg = config(work.path());
    cfg.service.token = Some("s3cret".into());
    let (app, _) = build(cfg);
    let id = fixture().corpus.entries[0].id.clone();
    let (status, _) = post_json(&app, "/v1/query", &json!({ "id": id })).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let req = Request::post("/v1/query")
        .header(header::CONTENT_TYPE, "application/json")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::from(json!({ "id": id }).to_string()))
        .unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::OK);
    assert_eq!(get(&app, "/v1/metrics").await.0, StatusCode::OK);
}

#[tokio::test]
async fn state_survives_a_restart() {
    let work = tempfile::tempdir().unwrap();
    {
        let (app, _) = build(config(work.path()));
        post_json(&app, "/v1/annotations", &annotation("alice", false)).await;
        post_json(&app, "/v1/annotations", &annotation("alice", true)).await;
        let (_, body) = post_json(&app, "/v1/retrain/alice", &json!({})).await;
        let done = wait_job(&app, body["job"].as_str().unwrap()).await;
        assert_eq!(done["status"], "done");
    }
    let (app, state) = build(config(work.path()));
    let session = state.snapshot();
    assert_eq!(session.annotations["alice"], serde_json::from_value(annotation("alice", true)).unwrap());
    assert_eq!(session.versions["alice"], 2);
    assert!(session.metrics.contains_key("alice"));
    let (status, body) = post_json(&app, "/v1/annotations", &annotation("alice", false)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["version"], 3);
    assert!(work.path().join("annotations/alice.v2.json").exists());
}

#[test]
fn store_fingerprint_must_match_the_analysis() {
    let work = tempfile::tempdir().unwrap();
    let mut cfg = config(work.path());
    cfg.analysis.time_constant = 0.125;
    assert!(AppState::new(cfg).is_err());
    let store = FeatureStore::read(&fixture().store).unwrap();
    assert_eq!(store.fingerprint, fixture().analysis.fingerprint());
}
