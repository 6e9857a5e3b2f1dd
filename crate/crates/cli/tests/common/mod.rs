#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tempfile::TempDir;
use tower::ServiceExt;

use finegrain_cli::config::Settings;
use finegrain_cli::server::{router, AppState};
use finegrain_core::fixtures::generate_suite;
use finegrain_core::methods::Dataset;

/// A generated fixture suite in a temporary directory.
pub struct Suite {
    pub dir: TempDir,
}

impl Suite {
    pub fn new(count: usize) -> Suite {
        let dir = tempfile::tempdir().unwrap();
        generate_suite(&dir.path().join("data"), count, 7).unwrap();
        Suite { dir }
    }

    pub fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn dataset(&self) -> Arc<Dataset> {
        Arc::new(Dataset::load(&self.data()).unwrap())
    }

    pub fn app(&self) -> Router {
        app_for(self.dataset())
    }

    pub fn cli(&self, args: &[&str]) -> Output {
        finegrain(&self.data(), args)
    }
}

pub fn app_for(dataset: Arc<Dataset>) -> Router {
    router(AppState {
        dataset,
        settings: Settings::default(),
    })
}

pub fn finegrain(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finegrain"))
        .env_remove("FINEGRAIN_DATA")
        .arg("--data")
        .arg(data)
        .args(args)
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}
