#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use duelbench::platform::{Platform, PlatformConfig};
use duelbench::scheduler::SchedulerConfig;
use duelbench_service::api::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub struct TestApp {
    pub app: Router,
    pub platform: Arc<Platform>,
    pub clock: Arc<AtomicU64>,
}

impl TestApp {
    pub fn new(config: PlatformConfig) -> Self {
        Self::with(config, None)
    }

    pub fn with(config: PlatformConfig, token: Option<&str>) -> Self {
        let platform = Arc::new(Platform::in_memory(config).unwrap());
        let clock = Arc::new(AtomicU64::new(1_000_000));
        let c = clock.clone();
        let state = AppState::new(platform.clone())
            .with_admin_token(token.map(str::to_string))
            .with_clock(Arc::new(move || c.load(Ordering::SeqCst)));
        TestApp {
            app: router(state, None, &[]),
            platform,
            clock,
        }
    }

    pub fn advance(&self, ms: u64) {
        self.clock.fetch_add(ms, Ordering::SeqCst);
    }

    pub async fn send(&self, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Value) {
        self.send_with(method, uri, body, &[]).await
    }

    pub async fn send_with(
        &self,
        method: &str,
        uri: &str,
        body: Option<Vec<u8>>,
        headers: &[(&str, &str)],
    ) -> (StatusCode, Value) {
        let mut request = Request::builder().method(method).uri(uri);
        for (k, v) in headers {
            request = request.header(*k, *v);
        }
        let request = match body {
            Some(bytes) => request.header("content-type", "application/json").body(Body::from(bytes)),
            None => request.body(Body::empty()),
        }
        .unwrap();
        let response = self.app.clone().oneshot(request).await.unwrap();
        let status = response.status();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn json(&self, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
        self.send(method, uri, Some(serde_json::to_vec(&body).unwrap())).await
    }
}

pub fn quiet_config() -> PlatformConfig {
    PlatformConfig {
        scheduler: SchedulerConfig {
            validation_rate: 0.0,
            ..SchedulerConfig::default()
        },
        ..PlatformConfig::default()
    }
}

pub fn prompts_jsonl(n: usize) -> Vec<u8> {
    (1..=n)
        .map(|i| format!("{{\"text\":\"prompt {i}\",\"source\":\"DrawBench\"}}\n"))
        .collect::<String>()
        .into_bytes()
}

/// Manifest lines for every (model, prompt, replicate) cell, optionally
/// leaving out the last one.
pub fn manifest_jsonl(models: &[&str], prompt_ids: &[String], k: u32, skip_last: bool) -> Vec<u8> {
    let mut lines = Vec::new();
    for p in prompt_ids {
        for m in models {
            for r in 1..=k {
                lines.push(format!(
                    "{{\"model_id\":\"{m}\",\"prompt_id\":\"{p}\",\"replicate_index\":{r},\"content_ref\":\"cdn://{m}/{p}/{r}.png\"}}"
                ));
            }
        }
    }
    if skip_last {
        lines.pop();
    }
    (lines.join("\n") + "\n").into_bytes()
}

pub fn pool_jsonl(n: usize) -> Vec<u8> {
    (1..=n)
        .map(|i| {
            format!(
                "{{\"left_ref\":\"cdn://check/{i}/good.png\",\"right_ref\":\"cdn://check/{i}/bad.png\",\"correct_side\":\"left\",\"prompt_text\":\"a clear photo of object {i}\"}}\n"
            )
        })
        .collect::<String>()
        .into_bytes()
}

/// Creates and launches a benchmark over `models` with one replicate per
/// cell; returns its id.
pub async fn launched(app: &TestApp, models: &[&str], prompts: usize, quota: u32, criteria: &[&str]) -> String {
    let (status, body) = app
        .json(
            "POST",
            "/v1/benchmarks",
            serde_json::json!({
                "name": format!("bench-{}", models.join("-")),
                "models": models.iter().map(|m| serde_json::json!({"model_id": m, "display_name": m.to_uppercase()})).collect::<Vec<_>>(),
                "images_per_model": 1,
                "votes_per_comparison": quota,
                "criteria": criteria,
            }),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let id = body["benchmark_id"].as_str().unwrap().to_string();
    let (status, _) = app.send("POST", &format!("/v1/benchmarks/{id}/prompts"), Some(prompts_jsonl(prompts))).await;
    assert_eq!(status, StatusCode::OK);
    let prompt_ids: Vec<String> = app
        .platform
        .plan(&id.as_str().into())
        .unwrap()
        .prompts
        .iter()
        .map(|p| p.prompt_id.to_string())
        .collect();
    let (status, _) = app
        .send("POST", &format!("/v1/benchmarks/{id}/manifest"), Some(manifest_jsonl(models, &prompt_ids, 1, false)))
        .await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = app.send("POST", &format!("/v1/benchmarks/{id}/validation-pool"), Some(pool_jsonl(4))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = app.send("POST", &format!("/v1/benchmarks/{id}/launch"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    id
}
