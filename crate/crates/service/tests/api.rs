mod common;

use std::time::Duration;

use common::{record, trained_checkpoint, Server};
use reqwest::StatusCode;
use serde_json::{json, Value};
use swallow_core::acquisition::{encode_frames, quantize, AdcConfig};
use swallow_core::classifier::Checkpoint;
use swallow_core::signal::{Label, SignalSegment};
use swallow_service::ServiceConfig;

fn with_time(i: usize, subject: &str, t: &str) -> Value {
    let mut v = serde_json::to_value(record(i)).unwrap();
    v["subject_id"] = json!(subject);
    v["recorded_at"] = json!(t);
    v
}

async fn post_json(c: &reqwest::Client, url: &str, body: &Value) -> (StatusCode, Value) {
    let r = c.post(url).json(body).send().await.unwrap();
    (r.status(), r.json().await.unwrap())
}

async fn get(c: &reqwest::Client, url: &str) -> (StatusCode, Value) {
    let r = c.get(url).send().await.unwrap();
    (r.status(), r.json().await.unwrap())
}

#[tokio::test]
async fn ingest_then_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    let c = reqwest::Client::new();

    let (s, v) = get(&c, &srv.url("/healthz")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (_, v) = get(&c, &srv.url("/sessions")).await;
    assert_eq!(v["items"].as_array().unwrap().len(), 0);

    let (s, v) = post_json(&c, &srv.url("/sessions"), &serde_json::to_value(record(0)).unwrap()).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap().to_string();
    assert_eq!(v["score_status"], "unscored");
    assert_eq!(v["samples"], 1000);

    let (s, got) = get(&c, &srv.url(&format!("/sessions/{id}"))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(got["subject_id"], record(0).subject_id);
    assert_eq!(got["envelope_peak_mv"].as_array().unwrap().len(), 4);

    let (s, e) = get(&c, &srv.url("/sessions/nope")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "not_found");
    assert!(e["message"].is_string());
    srv.shutdown().await;
}

#[tokio::test]
async fn malformed_payloads_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    let c = reqwest::Client::new();
    let url = srv.url("/sessions");

    let mut three = serde_json::to_value(record(0)).unwrap();
    three["channels"].as_array_mut().unwrap().pop();
    let (s, e) = post_json(&c, &url, &three).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "channel_count");

    let mut fs = serde_json::to_value(record(0)).unwrap();
    fs["fs"] = json!(500.0);
    let (s, e) = post_json(&c, &url, &fs).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("unsupported_sample_rate")));

    let r = c.post(&url).header("content-type", "application/json").body("{not json").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    assert_eq!(r.json::<Value>().await.unwrap()["code"], "invalid_payload");

    let mut bad_subject = serde_json::to_value(record(0)).unwrap();
    bad_subject["subject_id"] = json!("../etc");
    assert_eq!(post_json(&c, &url, &bad_subject).await.0, StatusCode::BAD_REQUEST);

    for q in ["limit=0", "limit=x", "from=yesterday", "colour=red", "from=2024-02-01T00:00:00Z&to=2024-01-01T00:00:00Z"] {
        let (s, e) = get(&c, &srv.url(&format!("/sessions?{q}"))).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{q}");
        assert!(e["code"].is_string());
    }
    assert_eq!(srv.state.store.len(), 0);
    srv.shutdown().await;
}

#[tokio::test]
async fn frame_file_ingest_is_within_quantisation() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    let c = reqwest::Client::new();
    let rec = record(1);
    let seg = SignalSegment::new(rec.fs, rec.channels.clone()).unwrap();
    let adc = AdcConfig::default();
    let bytes = encode_frames(&quantize(&seg, &adc).unwrap()).unwrap();
    let r = c
        .post(srv.url("/sessions?subject_id=H07&volume_ml=10&label=healthy"))
        .header("content-type", "application/octet-stream")
        .body(bytes)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["decode"]["frames"], 1000);
    assert_eq!(v["decode"]["bytes_discarded"], 0);
    assert_eq!(v["volume_ml"], 10);
    let id = v["session_id"].as_str().unwrap();
    let stored = srv.state.store.load_segment(id).unwrap();
    for (a, b) in stored.channels.iter().flatten().zip(seg.channels.iter().flatten()) {
        assert!((a - b).abs() <= adc.lsb_mv() / 2.0 + 1e-9);
    }

    let r = c
        .post(srv.url("/sessions?subject_id=H07"))
        .header("content-type", "application/octet-stream")
        .body(vec![0u8; 40])
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    srv.shutdown().await;
}

#[tokio::test]
async fn paging_ordering_and_time_filters() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    let c = reqwest::Client::new();
    let times = ["2024-01-01T10:00:00Z", "2024-01-03T10:00:00Z", "2024-01-02T10:00:00Z"];
    for (i, t) in times.iter().enumerate() {
        assert_eq!(post_json(&c, &srv.url("/sessions"), &with_time(i, "S1", t)).await.0, StatusCode::CREATED);
    }
    let (_, p1) = get(&c, &srv.url("/sessions?limit=2")).await;
    let (_, p2) = get(&c, &srv.url("/sessions?limit=2&offset=2")).await;
    let ids = |p: &Value| -> Vec<String> {
        p["items"].as_array().unwrap().iter().map(|i| i["session_id"].as_str().unwrap().to_string()).collect()
    };
    assert_eq!(ids(&p1).len(), 2);
    assert_eq!(ids(&p2).len(), 1);
    assert!(ids(&p1).iter().all(|i| !ids(&p2).contains(i)));
    assert_eq!(p1["total"], 3);
    let order: Vec<&str> = p1["items"].as_array().unwrap().iter().chain(p2["items"].as_array().unwrap()).map(|i| i["recorded_at"].as_str().unwrap()).collect();
    assert_eq!(order, vec!["2024-01-03T10:00:00Z", "2024-01-02T10:00:00Z", "2024-01-01T10:00:00Z"]);

    let (_, f) = get(&c, &srv.url("/sessions?from=2024-01-02T00:00:00Z&to=2024-01-03T10:00:00Z")).await;
    let got: Vec<&str> = f["items"].as_array().unwrap().iter().map(|i| i["recorded_at"].as_str().unwrap()).collect();
    assert_eq!(got, vec!["2024-01-02T10:00:00Z"]);
    let (_, f) = get(&c, &srv.url("/sessions?subject_id=S2")).await;
    assert_eq!(f["total"], 0);
    srv.shutdown().await;
}

#[tokio::test]
async fn scoring_trend_and_composition() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_checkpoint(dir.path());
    let cfg = ServiceConfig { model_path: Some(model.clone()), ..ServiceConfig::new(dir.path().join("data")) };
    let srv = Server::start(cfg).await;
    let c = reqwest::Client::new();

    let (s, _) = get(&c, &srv.url("/subjects/S9/trend")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // Record 0 is a healthy subject's event, record 30 a patient's.
    let mut ids = Vec::new();
    for (i, t) in [(0usize, "2024-03-02T09:00:00Z"), (30, "2024-03-01T09:00:00Z")] {
        let (_, v) = post_json(&c, &srv.url("/sessions"), &with_time(i, "S9", t)).await;
        ids.push(v["session_id"].as_str().unwrap().to_string());
    }
    let (_, t) = get(&c, &srv.url("/subjects/S9/trend")).await;
    assert_eq!(t["points"].as_array().unwrap().len(), 0);

    let ck = Checkpoint::load(&model).unwrap();
    let mut his = Vec::new();
    for (id, i) in ids.iter().zip([0usize, 30]) {
        let r = c.post(srv.url(&format!("/sessions/{id}/score"))).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::OK);
        let v: Value = r.json().await.unwrap();
        let seg = SignalSegment::new(record(i).fs, record(i).channels).unwrap();
        assert_eq!(v["health_index"].as_f64().unwrap(), ck.health_index(&seg).unwrap().value);
        assert_eq!(v["model_version"], ck.model_version.as_str());
        let again: Value = c.post(srv.url(&format!("/sessions/{id}/score"))).send().await.unwrap().json().await.unwrap();
        assert_eq!(again["health_index"], v["health_index"]);
        his.push(v["health_index"].as_f64().unwrap());
    }
    assert_eq!(record(0).label, Label::Healthy);
    assert_eq!(record(30).label, Label::Patient);
    assert!(his[0] > his[1], "healthy {} vs patient {}", his[0], his[1]);

    let (_, t) = get(&c, &srv.url("/subjects/S9/trend")).await;
    let pts = t["points"].as_array().unwrap();
    assert_eq!(pts.len(), 2);
    assert_eq!(pts[0]["recorded_at"], "2024-03-01T09:00:00Z");
    assert_eq!(pts[0]["health_index"].as_f64().unwrap(), his[1]);
    assert_eq!(pts[1]["health_index"].as_f64().unwrap(), his[0]);
    for p in pts {
        let (_, s) = get(&c, &srv.url(&format!("/sessions/{}", p["session_id"].as_str().unwrap()))).await;
        assert_eq!(s["health_index"], p["health_index"]);
        assert_eq!(s["score_status"], "scored");
    }

    let (s, e) = post_json(&c, &srv.url("/sessions/unknown/score"), &json!({})).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    srv.shutdown().await;
}

#[tokio::test]
async fn background_scoring_reports_status() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_checkpoint(dir.path());
    let cfg = ServiceConfig { model_path: Some(model), ..ServiceConfig::new(dir.path().join("data")) };
    let srv = Server::start(cfg).await;
    let c = reqwest::Client::new();
    let (_, v) = post_json(&c, &srv.url("/sessions"), &serde_json::to_value(record(2)).unwrap()).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let r = c.post(srv.url(&format!("/sessions/{id}/score?async=true"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::ACCEPTED);
    let mut status = String::new();
    for _ in 0..200 {
        let (_, s) = get(&c, &srv.url(&format!("/sessions/{id}"))).await;
        status = s["score_status"].as_str().unwrap().to_string();
        if status == "scored" {
            assert!(s["health_index"].is_number());
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(status, "scored");
    srv.shutdown().await;
}

#[tokio::test]
async fn scoring_without_model_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    let c = reqwest::Client::new();
    let (_, v) = post_json(&c, &srv.url("/sessions"), &serde_json::to_value(record(2)).unwrap()).await;
    let r = c.post(srv.url(&format!("/sessions/{}/score", v["session_id"].as_str().unwrap()))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(r.json::<Value>().await.unwrap()["code"], "no_model");
    srv.shutdown().await;
}

#[tokio::test]
async fn waveform_is_downsampled_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    let c = reqwest::Client::new();
    let (_, v) = post_json(&c, &srv.url("/sessions"), &serde_json::to_value(record(3)).unwrap()).await;
    let id = v["session_id"].as_str().unwrap();
    let raw = record(3).channels;
    for points in [2usize, 100, 500, 5000] {
        let (s, w) = get(&c, &srv.url(&format!("/sessions/{id}/waveform?points={points}"))).await;
        assert_eq!(s, StatusCode::OK);
        let chans = w["channels"].as_array().unwrap();
        assert_eq!(chans.len(), 4);
        for (ch, orig) in chans.iter().zip(&raw) {
            let mv = ch["raw"]["mv"].as_array().unwrap();
            assert!(mv.len() <= points);
            assert!(ch["envelope"]["mv"].as_array().unwrap().len() <= points);
            let peak = orig.iter().cloned().fold(f64::MIN, f64::max);
            assert!(mv.iter().any(|m| m.as_f64().unwrap() == peak));
        }
    }
    let (_, w) = get(&c, &srv.url(&format!("/sessions/{id}/waveform?points=5000"))).await;
    let mv: Vec<f64> = w["channels"][0]["raw"]["mv"].as_array().unwrap().iter().map(|m| m.as_f64().unwrap()).collect();
    assert_eq!(mv, raw[0]);
    assert_eq!(get(&c, &srv.url(&format!("/sessions/{id}/waveform?points=1"))).await.0, StatusCode::BAD_REQUEST);
    srv.shutdown().await;
}

#[tokio::test]
async fn restart_keeps_acknowledged_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let c = reqwest::Client::new();
    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    let (_, v) = post_json(&c, &srv.url("/sessions"), &serde_json::to_value(record(4)).unwrap()).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    srv.shutdown().await;

    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    let (s, got) = get(&c, &srv.url(&format!("/sessions/{id}"))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(got["blob_sha256"], v["blob_sha256"]);
    let (_, v2) = post_json(&c, &srv.url("/sessions"), &serde_json::to_value(record(5)).unwrap()).await;
    assert!(v2["session_id"].as_str().unwrap() > id.as_str());
    srv.shutdown().await;
}

#[tokio::test]
async fn concurrent_ingests_all_persist() {
    const N: usize = 24;
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    let c = reqwest::Client::new();
    let mut tasks = Vec::new();
    for i in 0..N {
        let (c, url) = (c.clone(), srv.url("/sessions"));
        tasks.push(tokio::spawn(async move {
            let body = serde_json::to_value(record(i % 36)).unwrap();
            let r = c.post(url).json(&body).send().await.unwrap();
            assert_eq!(r.status(), StatusCode::CREATED);
            r.json::<Value>().await.unwrap()["session_id"].as_str().unwrap().to_string()
        }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), N);
    srv.shutdown().await;

    let srv = Server::start(ServiceConfig::new(dir.path())).await;
    assert_eq!(srv.state.store.len(), N);
    for id in &ids {
        srv.state.store.load_segment(id).unwrap();
    }
    srv.shutdown().await;
}

#[tokio::test]
async fn live_recording_cycle_creates_one_session() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_checkpoint(dir.path());
    let cfg = ServiceConfig { model_path: Some(model), live_speed: 20.0, ..ServiceConfig::new(dir.path().join("d")) };
    let srv = Server::start(cfg).await;
    let c = reqwest::Client::new();

    assert_eq!(c.post(srv.url("/live/stop")).send().await.unwrap().status(), StatusCode::CONFLICT);
    let start = json!({"subject_id": "L1", "kind": "healthy", "volume_ml": 15, "seed": 3});
    let (s, st) = post_json(&c, &srv.url("/live/start"), &start).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(st["recording"], true);
    assert_eq!(post_json(&c, &srv.url("/live/start"), &start).await.0, StatusCode::CONFLICT);

    tokio::time::sleep(Duration::from_millis(300)).await;
    let (_, live) = get(&c, &srv.url("/live?window=250&points=100")).await;
    assert!(live["status"]["samples"].as_u64().unwrap() > 10);
    assert_eq!(live["window"]["channels"].as_array().unwrap().len(), 4);
    assert!(live["window"]["channels"][0]["raw"]["mv"].as_array().unwrap().len() <= 100);

    let r = c.post(srv.url("/live/stop")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["score_status"], "scored");
    let (_, list) = get(&c, &srv.url("/sessions")).await;
    assert_eq!(list["total"], 1);
    assert_eq!(list["items"][0]["health_index"], v["health_index"]);
    let (_, idle) = get(&c, &srv.url("/live")).await;
    assert_eq!(idle["status"]["recording"], false);
    srv.shutdown().await;
}
