use std::sync::Arc;

use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use hreflex_core::fixtures::{
    annotated_payload, consensus_answer, default_profiles, strict_answer, MockConsortium,
};
use hreflex_core::mock_server::{Fault, MockRule, MockScript};
use hreflex_core::orchestrator::{serve_with_shutdown, CaseResult, Pipeline};
use hreflex_core::record_store::{CaseRecord, CaseStore, StateLabel};

struct Running {
    base: String,
    stop: oneshot::Sender<()>,
    task: tokio::task::JoinHandle<()>,
    mocks: MockConsortium,
    _dir: tempfile::TempDir,
}

async fn start(scripts: Vec<MockScript>) -> Running {
    let dir = tempfile::tempdir().unwrap();
    let mocks = MockConsortium::start(
        default_profiles(),
        scripts,
        MockScript::always(consensus_answer(StateLabel::Injury, "consistent injury pattern")),
    )
    .await
    .unwrap();
    let store = Arc::new(CaseStore::open(dir.path()).unwrap());
    let pipeline = Pipeline::with_store(mocks.config(dir.path(), 500), store).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (stop, rx) = oneshot::channel();
    let task = tokio::spawn(async move {
        serve_with_shutdown(pipeline, listener, async {
            let _ = rx.await;
        })
        .await
        .unwrap();
    });
    Running { base, stop, task, mocks, _dir: dir }
}

impl Running {
    async fn stop(self) {
        let _ = self.stop.send(());
        self.task.await.unwrap();
        self.mocks.shutdown().await;
    }
}

fn client() -> reqwest::Client {
    reqwest::Client::builder().no_proxy().build().unwrap()
}

async fn send(req: reqwest::RequestBuilder) -> (u16, Value) {
    let resp = req.send().await.unwrap();
    let status = resp.status().as_u16();
    let text = resp.text().await.unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

fn post_json(url: String, body: &impl serde::Serialize) -> reqwest::RequestBuilder {
    client()
        .post(url)
        .header("content-type", "application/json")
        .body(serde_json::to_vec(body).unwrap())
}

#[tokio::test]
async fn case_lifecycle_over_http() {
    let s = start(vec![MockScript::always(strict_answer(StateLabel::Injury)); 3]).await;

    let (status, body) = send(post_json(format!("{}/cases", s.base), &annotated_payload(None, StateLabel::Injury))).await;
    assert_eq!(status, 201, "{body}");
    let id = body["case_id"].as_str().unwrap().to_string();

    let (status, body) = send(client().get(format!("{}/cases/{id}", s.base))).await;
    assert_eq!(status, 200);
    let record: CaseRecord = serde_json::from_value(body).unwrap();
    assert_eq!(record.case_id, id);

    let (status, _) = send(client().get(format!("{}/cases/{id}/result", s.base))).await;
    assert_eq!(status, 404);

    let (status, body) = send(client().post(format!("{}/cases/{id}/analyze", s.base))).await;
    assert_eq!(status, 200, "{body}");
    let result: CaseResult = serde_json::from_value(body).unwrap();
    assert_eq!(result.consensus.final_assessment.state, StateLabel::Injury);

    let (status, body) = send(client().get(format!("{}/cases/{id}/result", s.base))).await;
    assert_eq!(status, 200);
    assert_eq!(serde_json::from_value::<CaseResult>(body).unwrap(), result);

    let (status, body) = send(client().get(format!("{}/version", s.base))).await;
    assert_eq!(status, 200);
    assert_eq!(body["template_version"], "v1");
    s.stop().await;
}

#[tokio::test]
async fn bad_requests_map_to_client_errors() {
    let s = start(vec![MockScript::always(strict_answer(StateLabel::Normal)); 3]).await;

    let (status, _) = send(client().get(format!("{}/cases/missing", s.base))).await;
    assert_eq!(status, 404);
    let (status, _) = send(client().post(format!("{}/cases/missing/analyze", s.base))).await;
    assert_eq!(status, 404);

    let mut payload = annotated_payload(Some("dup"), StateLabel::Normal);
    let (status, _) = send(post_json(format!("{}/cases", s.base), &payload)).await;
    assert_eq!(status, 201);
    let (status, _) = send(post_json(format!("{}/cases", s.base), &payload)).await;
    assert_eq!(status, 409);

    payload.case_id = Some("old".into());
    payload.metadata.age = Some(300);
    let (status, _) = send(post_json(format!("{}/cases", s.base), &payload)).await;
    assert_eq!(status, 422);

    // Server-side paths are never read on behalf of a client.
    let mut body = serde_json::to_value(annotated_payload(Some("p"), StateLabel::Normal)).unwrap();
    body["image"] = json!({ "path": "/etc/hostname" });
    let (status, _) = send(post_json(format!("{}/cases", s.base), &body)).await;
    assert_eq!(status, 422);

    let (status, _) = send(post_json(format!("{}/cases", s.base), &json!({ "nope": 1 }))).await;
    assert_eq!(status, 422);
    s.stop().await;
}

#[tokio::test]
async fn health_lists_each_endpoint() {
    let s = start(vec![MockScript::always(strict_answer(StateLabel::Normal)); 3]).await;
    // Take one model offline.
    let mut mocks = s.mocks;
    let (_, down) = mocks.models.remove(1);
    down.shutdown().await;
    let s = Running { mocks, ..s };

    let (status, body) = send(client().get(format!("{}/health", s.base))).await;
    assert_eq!(status, 200);
    let endpoints = body["endpoints"].as_array().unwrap();
    assert_eq!(endpoints.len(), 4);
    let status_of = |id: &str| {
        endpoints.iter().find(|e| e["model_id"] == id).unwrap()["status"].as_str().unwrap().to_string()
    };
    assert_eq!(status_of("llama-vision"), "unreachable");
    assert_eq!(status_of("pixtral"), "healthy");
    assert_eq!(status_of("reasoner"), "healthy");
    s.stop().await;
}

#[tokio::test]
async fn quorum_failure_is_service_unavailable() {
    let down = MockScript { rules: vec![MockRule::reply("", "").with_fault(Fault::Refuse)], default_response: String::new() };
    let s = start(vec![down; 3]).await;
    let (status, body) = send(post_json(format!("{}/cases", s.base), &annotated_payload(Some("q"), StateLabel::Injury))).await;
    assert_eq!(status, 201, "{body}");
    let (status, body) = send(client().post(format!("{}/cases/q/analyze", s.base))).await;
    assert_eq!(status, 503);
    assert!(body["error"].as_str().unwrap().contains("quorum"));
    s.stop().await;
}
