use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use tsvmorph_core::label::MorphologyLabel;
use tsvmorph_core::surface::{decode_png, encode_png, render_grayscale};
use tsvmorph_core::synthetic::{balanced_labels, generate_mosaic, GenParams};
use tsvmorph_core::train::read_manifest;
use tsvmorph_server::{router, AppState, SessionView};

fn mosaic_png(rows: u32, cols: u32, seed: u64) -> Vec<u8> {
    let p = GenParams { seed, ..GenParams::default() };
    let m = generate_mosaic(rows, cols, &balanced_labels((rows * cols) as usize, seed), &p, 6).unwrap();
    encode_png(&render_grayscale(&m.heightmap)).unwrap()
}

async fn call(app: &Router, method: Method, uri: &str, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Value) -> (StatusCode, Value) {
    let body = if body.is_null() { Vec::new() } else { serde_json::to_vec(&body).unwrap() };
    let (s, b) = call(app, method, uri, body).await;
    (s, if b.is_empty() { Value::Null } else { serde_json::from_slice(&b).unwrap() })
}

async fn new_session(app: &Router, rows: u32, cols: u32) -> String {
    let (s, b) = call(app, Method::POST, &format!("/sessions?rows={rows}&cols={cols}&name=wafer7"), mosaic_png(rows, cols, 11)).await;
    assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&b));
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["crop_count"], rows * cols);
    v["id"].as_str().unwrap().to_string()
}

async fn view(app: &Router, id: &str) -> SessionView {
    let (s, b) = call(app, Method::GET, &format!("/sessions/{id}"), Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    serde_json::from_slice(&b).unwrap()
}

fn app(dir: &std::path::Path) -> (Arc<AppState>, Router) {
    let state = AppState::open(dir).unwrap();
    (state.clone(), router(state))
}

#[tokio::test]
async fn health_is_ok() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let (s, v) = call_json(&app, Method::GET, "/health", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn create_and_fetch_session() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let id = new_session(&app, 2, 3).await;
    let v = view(&app, &id).await;
    assert_eq!(v.source, "wafer7");
    assert_eq!(v.crop_count, 6);
    assert_eq!(v.labeled, 0);
    assert!(v.confident);
    assert_eq!((v.crops[4].row, v.crops[4].col), (1, 1));
}

#[tokio::test]
async fn bad_inputs_map_to_4xx() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let (s, _) = call(&app, Method::POST, "/sessions?rows=2&cols=2", b"not a png".to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call_json(&app, Method::GET, "/sessions/nope", Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));

    let id = new_session(&app, 1, 2).await;
    let (s, _) = call_json(&app, Method::POST, &format!("/sessions/{id}/crops/9/label"), json!({"label": "granular"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&app, Method::POST, &format!("/sessions/{id}/crops/0/label"), json!({"label": "blob"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    // soft label disagreeing with the hard label
    let (s, _) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/crops/0/label"),
        json!({"label": "granular", "soft_label": [0.1, 0.8, 0.1]}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, Method::GET, &format!("/sessions/{id}/preview?cell=zz"), Value::Null).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, Method::GET, &format!("/sessions/{id}/preview?cell=5,5"), Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn preview_returns_a_54px_png() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let id = new_session(&app, 2, 2).await;
    let (s, b) = call(&app, Method::GET, &format!("/sessions/{id}/preview?cell=1,0"), Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    let img = decode_png(&b).unwrap();
    assert_eq!((img.width(), img.height()), (54, 54));
}

#[tokio::test]
async fn labels_survive_grid_adjustment() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let id = new_session(&app, 2, 2).await;
    let labels = ["granular", "edge_ring", "edge_bulge", "edge_ring"];
    for (i, l) in labels.iter().enumerate() {
        let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/crops/{i}/label"), json!({ "label": l })).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["label"], *l);
    }
    let before = view(&app, &id).await;
    let mut grid = before.grid;
    grid.cell_width -= 3;
    grid.x_offset += 3;
    let (s, b) = call(&app, Method::PUT, &format!("/sessions/{id}/grid"), serde_json::to_vec(&grid).unwrap()).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let after = view(&app, &id).await;
    assert_eq!(after.grid, grid);
    assert!(after.dirty);
    for (a, b) in before.crops.iter().zip(&after.crops) {
        assert_eq!((a.row, a.col, a.label), (b.row, b.col, b.label));
    }
}

#[tokio::test]
async fn invalid_grid_is_rejected_and_state_kept() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let id = new_session(&app, 2, 2).await;
    let before = view(&app, &id).await;
    let mut grid = before.grid;
    grid.cell_width = 10_000;
    let (s, _) = call(&app, Method::PUT, &format!("/sessions/{id}/grid"), serde_json::to_vec(&grid).unwrap()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(view(&app, &id).await.grid, before.grid);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_labels_all_land_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let id = new_session(&app, 3, 4).await;
    let mut tasks = Vec::new();
    for i in 0..12usize {
        let (app, id) = (app.clone(), id.clone());
        tasks.push(tokio::spawn(async move {
            let l = MorphologyLabel::ALL[i % 3];
            call_json(&app, Method::POST, &format!("/sessions/{id}/crops/{i}/label"), json!({ "label": l })).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let v = view(&app, &id).await;
    assert_eq!(v.labeled, 12);
    for c in &v.crops {
        assert_eq!(c.label, Some(MorphologyLabel::ALL[c.index % 3]));
    }

    // A fresh process sees the same session from the journal.
    let (_, reopened) = self::app(dir.path());
    assert_eq!(view(&reopened, &id).await, v);
}

#[tokio::test]
async fn export_requires_all_labels_unless_partial() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let id = new_session(&app, 1, 3).await;
    call_json(&app, Method::POST, &format!("/sessions/{id}/crops/0/label"), json!({"soft_label": [0.2, 0.2, 0.6]})).await;
    let (s, _) = call_json(&app, Method::POST, &format!("/sessions/{id}/export"), Value::Null).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let out = dir.path().join("out");
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/export?partial=true"), json!({ "out_dir": out })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["unlabeled"], 2);
    let records = read_manifest(out.join("manifest.jsonl")).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records[0].label, Some(MorphologyLabel::EdgeBulge));
    assert!(records[1].label.is_none());
    assert!(records.iter().all(|r| r.source_id.starts_with("wafer7")));
    for r in &records {
        assert!(out.join(&r.path).exists());
    }
    assert!(!view(&app, &id).await.dirty);

    for i in 1..3 {
        call_json(&app, Method::POST, &format!("/sessions/{id}/crops/{i}/label"), json!({"label": "granular"})).await;
    }
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/export"), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["out_dir"].as_str().unwrap().ends_with(&id));
}
