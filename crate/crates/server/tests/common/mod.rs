#![allow(dead_code)]

use std::time::Duration;

use alnlg_server::{router, ServerOptions};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn app() -> Router {
    router(ServerOptions::default())
}

pub async fn raw(app: &Router, method: Method, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = raw(app, method, uri, body, &[]).await;
    (status, serde_json::from_str(&text).unwrap_or_else(|e| panic!("{uri}: {e}: {text}")))
}

/// `n` rows of CSV with `input` and `output` columns.
pub fn csv(n: usize) -> String {
    let mut s = String::from("id,input,output\n");
    for i in 0..n {
        s.push_str(&format!("q{i:03},question {i},answer {i}\n"));
    }
    s
}

pub fn create_body(config: Value, rows: usize) -> Value {
    json!({ "config": config, "dataset": { "format": "csv", "content": csv(rows) } })
}

/// Polls the run until it leaves `running`.
pub async fn wait_finished(app: &Router, id: &str) -> Value {
    for _ in 0..2000 {
        let (_, v) = call(app, Method::GET, &format!("/v1/runs/{id}"), None).await;
        if v["state"] != "running" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("run {id} did not finish");
}

/// Field names listed in a 422 document.
pub fn fields(v: &Value) -> Vec<String> {
    let mut f: Vec<String> =
        v["error"]["fields"].as_array().unwrap().iter().map(|e| e["field"].as_str().unwrap().to_string()).collect();
    f.sort();
    f.dedup();
    f
}
