//! A labeling session exported over HTTP must match `tsvmorph crop` output
//! with the same grid and the labels edited into its manifest.

use std::fs;
use std::process::Command;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use tsvmorph_core::label::MorphologyLabel;
use tsvmorph_core::train::{read_manifest, write_manifest};
use tsvmorph_server::{router, AppState};

async fn call(app: &axum::Router, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn session_export_matches_cli_crop() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, cli_out, srv_out) = (dir.path().join("gen"), dir.path().join("cli"), dir.path().join("srv"));
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_tsvmorph")).args(args).env("RUST_LOG", "warn").output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["generate", "--rows", "2", "--cols", "3", "--seed", "4", "--out", gen.to_str().unwrap()]);
    let mosaic = gen.join("mosaic.png");
    run(&[
        "crop", mosaic.to_str().unwrap(), "--grid-rows", "2", "--grid-cols", "3", "--offsets", "4,5", "--name", "m",
        "--out", cli_out.to_str().unwrap(),
    ]);
    let grid: Value = serde_json::from_str(&fs::read_to_string(cli_out.join("grid.json")).unwrap()).unwrap();

    let labels: Vec<(Option<MorphologyLabel>, Value)> = vec![
        (Some(MorphologyLabel::EdgeRing), json!({"label": "edge_ring"})),
        (Some(MorphologyLabel::Granular), json!({"soft_label": [0.6, 0.3, 0.1]})),
        (None, Value::Null),
        (Some(MorphologyLabel::EdgeBulge), json!({"label": "edge_bulge"})),
        (Some(MorphologyLabel::Granular), json!({"label": "granular"})),
        (Some(MorphologyLabel::EdgeRing), json!({"label": "edge_ring", "soft_label": [0.2, 0.5, 0.3]})),
    ];

    let state = AppState::open(dir.path().join("data")).unwrap();
    let app = router(state);
    let (s, v) = call(&app, Method::POST, "/sessions?rows=2&cols=3&name=m", fs::read(&mosaic).unwrap()).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap().to_string();
    let (s, _) = call(&app, Method::PUT, &format!("/sessions/{id}/grid"), serde_json::to_vec(&grid).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    for (i, (_, body)) in labels.iter().enumerate() {
        if !body.is_null() {
            let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/crops/{i}/label"), serde_json::to_vec(body).unwrap()).await;
            assert_eq!(s, StatusCode::OK);
        }
    }
    let (s, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/export?partial=true"),
        serde_json::to_vec(&json!({ "out_dir": srv_out })).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::OK);

    // hand-edit the CLI manifest with the same labels
    let mut records = read_manifest(cli_out.join("manifest.jsonl")).unwrap();
    for (r, (label, body)) in records.iter_mut().zip(&labels) {
        r.label = *label;
        r.soft_label = body.get("soft_label").map(|v| serde_json::from_value(v.clone()).unwrap());
    }
    let mut edited = Vec::new();
    write_manifest(&mut edited, &records).unwrap();

    assert_eq!(fs::read(srv_out.join("manifest.jsonl")).unwrap(), edited);
    for r in &records {
        assert_eq!(fs::read(srv_out.join(&r.path)).unwrap(), fs::read(cli_out.join(&r.path)).unwrap(), "{}", r.path);
    }
}
