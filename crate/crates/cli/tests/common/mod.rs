#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tfopt::fieldgen::{make_synthetic, SyntheticKind, SyntheticSpec};
use tfopt::volcore::io::{write_tf, write_volume};
use tfopt::volcore::TransferFunction;

/// Ramp, inverted ramp and a grayscale ramp table written into `dir`.
pub fn ramp_fixture(dir: &Path, n: usize) {
    for (name, kind) in [("ramp", SyntheticKind::RampX), ("rampinv", SyntheticKind::RampXInverted)] {
        let vol = make_synthetic(&SyntheticSpec::new(kind, [n, n, n])).unwrap();
        write_volume(dir.join(format!("{name}.json")), &vol).unwrap();
    }
    let tf = TransferFunction::new(
        (0..16).map(|k| {
            let t = k as f64 / 15.0;
            [t, 0.3 + 0.5 * t * t, 1.0 - t, 0.1 + 0.4 * t]
        })
        .collect(),
    )
    .unwrap();
    write_tf(dir.join("t.json"), &tf).unwrap();
}

pub async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    use tower::ServiceExt;
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call_json(app: &Router, method: &str, uri: &str, body: serde_json::Value) -> (StatusCode, serde_json::Value) {
    let (status, bytes) = call(app, method, uri, body.to_string()).await;
    let v = serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null);
    (status, v)
}

/// Polls a job until it reaches a terminal state.
pub async fn wait_job(app: &Router, id: u64) -> serde_json::Value {
    for _ in 0..6000 {
        let (status, v) = call_json(app, "GET", &format!("/api/jobs/{id}"), serde_json::Value::Null).await;
        assert_eq!(status, StatusCode::OK);
        if v["state"] == "done" || v["state"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("job {id} did not finish");
}
