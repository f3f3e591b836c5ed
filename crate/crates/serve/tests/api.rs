use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use steerank_core::bundle;
use steerank_core::config::RunConfig;
use steerank_core::data::LogSample;
use steerank_core::datagen::generate_dataset;
use steerank_core::model::Model;
use steerank_core::training::sweep_header;
use steerank_serve::{handle_rerank, router, AppState, Meta, RerankRequest, RerankResponse};
use steerank_testkit::checks::oracle_utility;
use steerank_testkit::random::Batch;
use tower::ServiceExt;

fn config(seed: u64) -> RunConfig {
    let mut c = RunConfig::business();
    c.seed = seed;
    c.data.n_train = 0;
    c.data.n_test = 20;
    c
}

fn sessions(cfg: &RunConfig) -> Vec<LogSample> {
    generate_dataset(cfg).unwrap().test
}

fn save(seed: u64, dir: &Path) -> String {
    bundle::save(&Model::init(config(seed)).unwrap(), 0, dir).unwrap()
}

fn request(s: &LogSample, weights: Value) -> Value {
    json!({ "user": s.user, "candidates": s.candidates, "weights": weights })
}

fn weights() -> Value {
    json!({ "click": 0.8, "cold_flow": 0.4, "seller_div": 0.2, "new_first": 0.1 })
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

struct Fixture {
    _dir: tempfile::TempDir,
    app: axum::Router,
    state: Arc<AppState>,
    hash: String,
    sessions: Vec<LogSample>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let hash = save(1, &dir.path().join("a"));
    save(2, &dir.path().join("b"));
    let state = AppState::from_path(&dir.path().join("a")).unwrap();
    Fixture {
        app: router(state.clone()),
        state,
        hash,
        sessions: sessions(&config(1)),
        _dir: dir,
    }
}

fn strip_latency(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("latency_ms");
    v
}

#[tokio::test]
async fn health_and_empty_service() {
    let app = router(AppState::empty());
    assert_eq!(call(&app, "GET", "/health", None).await, (StatusCode::OK, json!({"status": "ok"})));
    let (status, body) = call(&app, "GET", "/meta", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["error"].as_str().unwrap().contains("bundle"));
    let s = &sessions(&config(1))[0];
    let (status, _) = call(&app, "POST", "/rerank", Some(request(s, weights()))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn meta_describes_the_bundle() {
    let f = fixture();
    let (status, body) = call(&f.app, "GET", "/meta", None).await;
    assert_eq!(status, StatusCode::OK);
    let meta: Meta = serde_json::from_value(body).unwrap();
    let cfg = config(1);
    assert_eq!(meta.caps, cfg.caps());
    assert_eq!((meta.n, meta.m), (cfg.data.n, cfg.data.m));
    assert_eq!(meta.bundle, f.hash);
    let header = sweep_header(&cfg);
    assert_eq!(meta.utilities[..], header[header.len() - meta.utilities.len()..]);
}

#[tokio::test]
async fn greedy_requests_repeat_exactly() {
    let f = fixture();
    for s in &f.sessions[..5] {
        let (s1, a) = call(&f.app, "POST", "/rerank", Some(request(s, weights()))).await;
        let (s2, b) = call(&f.app, "POST", "/rerank", Some(request(s, weights()))).await;
        assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
        assert_eq!(strip_latency(a.clone()), strip_latency(b));
        let r: RerankResponse = serde_json::from_value(a).unwrap();
        assert_eq!(r.items.len(), 10);
        assert_eq!(r.probs.len(), 10);
        assert_eq!(r.bundle, f.hash);
        assert!(r.latency_ms >= 0.0);
    }
}

#[tokio::test]
async fn seeded_sampling_repeats_exactly() {
    let f = fixture();
    let s = &f.sessions[0];
    let mut body = request(s, weights());
    body["mode"] = json!("sample");
    let mut lists = Vec::new();
    for seed in 0..6 {
        body["seed"] = json!(seed);
        let (_, a) = call(&f.app, "POST", "/rerank", Some(body.clone())).await;
        let (_, b) = call(&f.app, "POST", "/rerank", Some(body.clone())).await;
        assert_eq!(strip_latency(a.clone()), strip_latency(b));
        lists.push(a["items"].clone());
    }
    lists.dedup();
    assert!(lists.len() > 1, "every seed gave the same list");
}

#[tokio::test]
async fn bad_weights_are_rejected_by_name() {
    let f = fixture();
    let s = &f.sessions[0];
    let cases = [
        (json!({ "click": 0.8, "cold_flow": 0.4, "seller_div": 0.9, "new_first": 0.1 }), "seller_div"),
        (json!({ "click": -0.1, "cold_flow": 0.4, "seller_div": 0.2, "new_first": 0.1 }), "click"),
        (json!({ "click": 0.8, "cold_flow": 0.4, "seller_div": 0.2 }), "new_first"),
        (json!({ "click": 0.8, "cold_flow": 0.4, "seller_div": 0.2, "new_first": 0.1, "fresh": 0.1 }), "fresh"),
    ];
    for (w, name) in cases {
        let (status, body) = call(&f.app, "POST", "/rerank", Some(request(s, w))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert!(body["error"].as_str().unwrap().contains(name), "{body}");
    }
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let f = fixture();
    let s = &f.sessions[0];
    let mut few = request(s, weights());
    few["candidates"] = json!(s.candidates[..9]);
    let mut extra = request(s, weights());
    extra["colour"] = json!("red");
    let mut mode = request(s, weights());
    mode["mode"] = json!("beam");
    let mut dup = request(s, weights());
    dup["candidates"][1] = dup["candidates"][0].clone();
    let mut narrow = request(s, weights());
    narrow["user"]["features"] = json!([0.1]);
    for body in [few, extra, mode, dup, narrow, json!("nope"), json!({})] {
        let (status, resp) = call(&f.app, "POST", "/rerank", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body} -> {resp}");
    }
}

#[tokio::test]
async fn constraints_are_honoured_or_409() {
    let f = fixture();
    let s = &f.sessions[0];
    let (a, b) = (s.candidates[3].id, s.candidates[17].id);
    let mut body = request(s, weights());
    body["constraints"] = json!([{ "position": 1, "id": a }, { "position": 10, "id": b }]);
    let (status, resp) = call(&f.app, "POST", "/rerank", Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["items"][0], json!(a));
    assert_eq!(resp["items"][9], json!(b));
    assert_eq!(resp["probs"][0], json!(1.0));

    for c in [
        json!([{ "position": 1, "id": 999_999 }]),
        json!([{ "position": 11, "id": a }]),
        json!([{ "position": 2, "id": a }, { "position": 2, "id": b }]),
        json!([{ "position": 2, "id": a }, { "position": 3, "id": a }]),
    ] {
        body["constraints"] = c.clone();
        let (status, _) = call(&f.app, "POST", "/rerank", Some(body.clone())).await;
        assert_eq!(status, StatusCode::CONFLICT, "{c}");
    }
}

#[tokio::test]
async fn reported_utilities_match_an_offline_recompute() {
    let f = fixture();
    let b = f.state.current().unwrap();
    for s in &f.sessions[..8] {
        let (_, resp) = call(&f.app, "POST", "/rerank", Some(request(s, weights()))).await;
        let r: RerankResponse = serde_json::from_value(resp).unwrap();
        let inst = steerank_core::instance::Instance::new(s.user.clone(), s.candidates.clone()).unwrap();
        let list: Vec<usize> =
            r.items.iter().map(|id| s.candidates.iter().position(|c| c.id == *id).unwrap()).collect();
        let preds = b.model.evaluator.predict(&b.model.params, &inst, &list).unwrap();
        let page = Batch {
            pools: vec![s.candidates.clone()],
            lists: vec![list],
            predictions: vec![preds],
        };
        for spec in &b.model.config.utilities {
            let expected = oracle_utility(spec, &page);
            assert!((r.utilities[&spec.name] - expected).abs() < 1e-12, "{}: {} vs {expected}", spec.name, r.utilities[&spec.name]);
        }
    }
}

#[tokio::test]
async fn reload_swaps_the_bundle() {
    let f = fixture();
    let other = f._dir.path().join("b");
    let (status, body) = call(&f.app, "POST", "/reload", Some(json!({ "path": other }))).await;
    assert_eq!(status, StatusCode::OK);
    let new_hash = body["bundle"].as_str().unwrap().to_string();
    assert_ne!(new_hash, f.hash);
    let (_, meta) = call(&f.app, "GET", "/meta", None).await;
    assert_eq!(meta["bundle"], json!(new_hash));
    let (_, resp) = call(&f.app, "POST", "/rerank", Some(request(&f.sessions[0], weights()))).await;
    assert_eq!(resp["bundle"], json!(new_hash));

    let (status, _) = call(&f.app, "POST", "/reload", Some(json!({ "path": "/no/such/bundle" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, meta) = call(&f.app, "GET", "/meta", None).await;
    assert_eq!(meta["bundle"], json!(new_hash));
    // no body reloads the remembered path
    let (status, body) = call(&f.app, "POST", "/reload", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["bundle"], json!(new_hash));
}

#[test]
fn requests_during_a_swap_use_one_bundle() {
    let f = fixture();
    let dir = f._dir.path();
    let a = bundle::load(&dir.join("a")).unwrap();
    let b = bundle::load(&dir.join("b")).unwrap();
    let req: RerankRequest = serde_json::from_value(request(&f.sessions[0], weights())).unwrap();
    let expected: BTreeMap<String, Vec<u64>> = [&a, &b]
        .iter()
        .map(|x| (x.hash.clone(), handle_rerank(x, &req).unwrap().items))
        .collect();
    assert_ne!(expected[&a.hash], expected[&b.hash], "bundles rank identically; the check would be vacuous");
    let state = f.state.clone();
    let (a, b) = (Arc::new(a), Arc::new(b));
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..4)
            .map(|_| {
                let state = state.clone();
                let req = req.clone();
                scope.spawn(move || {
                    (0..40)
                        .map(|_| {
                            let snap = state.current().unwrap();
                            handle_rerank(&snap, &req).unwrap()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for i in 0..40 {
            let next = if i % 2 == 0 { &b } else { &a };
            state.swap((**next).clone());
        }
        for w in workers {
            for r in w.join().unwrap() {
                assert_eq!(r.items, expected[&r.bundle]);
            }
        }
    });
}

#[test]
fn median_latency_is_small() {
    let f = fixture();
    let b = f.state.current().unwrap();
    let reqs: Vec<RerankRequest> = f
        .sessions
        .iter()
        .map(|s| serde_json::from_value(request(s, weights())).unwrap())
        .collect();
    let mut times: Vec<f64> = (0..200)
        .map(|i| {
            let t = Instant::now();
            handle_rerank(&b, &reqs[i % reqs.len()]).unwrap();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let p50 = times[times.len() / 2];
    eprintln!("p50 {p50:.2} ms, p95 {:.2} ms", times[times.len() * 95 / 100]);
    assert!(p50 < 50.0);
}
