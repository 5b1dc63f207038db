//! Scripted stand-in for VLM and reasoning endpoints.
//!
//! Speaks the gateway's chat-completion protocol on `POST` (any path), answers
//! `GET /__log` with the request log and any other `GET` with a plain 200.
//! Each request is matched against the script's rules in order; the first rule
//! whose `match` substring occurs in the request text wins, otherwise the
//! default response is served.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use chrono::{DateTime, Utc};
use http_body_util::{BodyExt, Full};
use hyper::body::Incoming;
use hyper::server::conn::http1;
use hyper::service::service_fn;
use hyper::{Method, Request, Response, StatusCode};
use hyper_util::rt::TokioIo;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tracing::debug;

/// How long a `timeout` fault holds the connection open.
const HOLD_FOREVER: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fault {
    #[default]
    None,
    /// Drop the connection without answering.
    Refuse,
    /// Hold the connection open without answering.
    Timeout,
    /// Answer 200 with an empty completion.
    Empty,
    /// Answer 200 with a non-JSON body.
    Garbage,
}

impl Fault {
    pub const ALL: [Fault; 5] = [Fault::None, Fault::Refuse, Fault::Timeout, Fault::Empty, Fault::Garbage];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: String,
    /// Restricts the rule to requests for this model name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub response_text: String,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default)]
    pub fault: Fault,
}

impl MockRule {
    pub fn reply(pattern: impl Into<String>, response_text: impl Into<String>) -> Self {
        MockRule {
            pattern: pattern.into(),
            model: None,
            response_text: response_text.into(),
            delay_ms: 0,
            fault: Fault::None,
        }
    }

    pub fn with_delay(mut self, delay_ms: u64) -> Self {
        self.delay_ms = delay_ms;
        self
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockReply {
    pub text: String,
    pub delay: Duration,
    pub fault: Fault,
}

impl MockScript {
    pub fn always(text: impl Into<String>) -> Self {
        MockScript { rules: Vec::new(), default_response: text.into() }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// First matching rule, or the default response.
    pub fn respond(&self, request_text: &str, model: Option<&str>) -> MockReply {
        self.rules
            .iter()
            .find(|r| {
                request_text.contains(&r.pattern)
                    && r.model.as_deref().is_none_or(|m| Some(m) == model)
            })
            .map(|r| MockReply {
                text: r.response_text.clone(),
                delay: Duration::from_millis(r.delay_ms),
                fault: r.fault,
            })
            .unwrap_or_else(|| MockReply {
                text: self.default_response.clone(),
                delay: Duration::ZERO,
                fault: Fault::None,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub received_at: DateTime<Utc>,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Every text part of every message, joined by newlines.
    pub text: String,
    /// Number of image parts in the request.
    pub images: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authorization: Option<String>,
    pub body: String,
}

/// Concatenated text content of a chat-completion request.
pub fn request_text(body: &Value) -> (String, usize) {
    let mut texts = Vec::new();
    let mut images = 0;
    for message in body.get("messages").and_then(Value::as_array).into_iter().flatten() {
        match message.get("content") {
            Some(Value::String(s)) => texts.push(s.clone()),
            Some(Value::Array(parts)) => {
                for part in parts {
                    match part.get("type").and_then(Value::as_str) {
                        Some("text") => {
                            texts.push(part.get("text").and_then(Value::as_str).unwrap_or("").to_string())
                        }
                        Some("image") | Some("image_url") => images += 1,
                        _ => {}
                    }
                }
            }
            _ => {}
        }
    }
    (texts.join("\n"), images)
}

struct Shared {
    script: MockScript,
    log: Mutex<Vec<LoggedRequest>>,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: watch::Sender<bool>,
    accept_task: JoinHandle<()>,
}

impl MockServer {
    pub async fn start(script: MockScript, bind: SocketAddr) -> std::io::Result<MockServer> {
        let listener = TcpListener::bind(bind).await?;
        Ok(Self::from_listener(script, listener))
    }

    /// Binds an ephemeral localhost port.
    pub async fn start_local(script: MockScript) -> std::io::Result<MockServer> {
        Self::start(script, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub fn from_listener(script: MockScript, listener: TcpListener) -> MockServer {
        let addr = listener.local_addr().expect("bound listener has an address");
        let shared = Arc::new(Shared { script, log: Mutex::new(Vec::new()) });
        let (shutdown, rx) = watch::channel(false);
        let accept_task = tokio::spawn(accept_loop(listener, shared.clone(), rx));
        debug!(%addr, "mock model server listening");
        MockServer { addr, shared, shutdown, accept_task }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Chat endpoint URL (`/api/chat`, though every POST path is served).
    pub fn chat_url(&self) -> String {
        format!("http://{}/api/chat", self.addr)
    }

    pub fn request_log(&self) -> Vec<LoggedRequest> {
        self.shared.log.lock().clone()
    }

    /// Stops accepting and drops every open connection, including held ones.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let _ = self.accept_task.await;
    }

    /// Runs until `signal` resolves.
    pub async fn run_until<F: std::future::Future<Output = ()>>(self, signal: F) {
        signal.await;
        self.shutdown().await;
    }
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>, mut stop: watch::Receiver<bool>) {
    let mut connections = tokio::task::JoinSet::new();
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => {
                let Ok((stream, _)) = accepted else { continue };
                let shared = shared.clone();
                let mut stop = stop.clone();
                connections.spawn(async move {
                    let service = service_fn(move |req| handle(shared.clone(), req));
                    let conn = http1::Builder::new().serve_connection(TokioIo::new(stream), service);
                    tokio::select! {
                        _ = conn => {}
                        _ = stop.changed() => {}
                    }
                });
            }
        }
    }
    connections.abort_all();
    while connections.join_next().await.is_some() {}
}

#[derive(Debug)]
struct Refused;

impl std::fmt::Display for Refused {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("refused by script")
    }
}

impl std::error::Error for Refused {}

fn respond(status: StatusCode, content_type: &str, body: impl Into<Bytes>) -> Response<Full<Bytes>> {
    Response::builder()
        .status(status)
        .header("content-type", content_type)
        .body(Full::new(body.into()))
        .expect("static response parts")
}

async fn handle(shared: Arc<Shared>, req: Request<Incoming>) -> Result<Response<Full<Bytes>>, Refused> {
    let path = req.uri().path().to_string();
    let authorization = req
        .headers()
        .get(hyper::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    if req.method() != Method::POST {
        if path == "/__log" {
            let log = serde_json::to_vec(&*shared.log.lock()).expect("log serializes");
            return Ok(respond(StatusCode::OK, "application/json", log));
        }
        return Ok(respond(StatusCode::OK, "text/plain", "mock model server ok"));
    }

    let body = match req.into_body().collect().await {
        Ok(b) => b.to_bytes(),
        Err(_) => return Err(Refused),
    };
    let json: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (text, images) = request_text(&json);
    let model = json.get("model").and_then(Value::as_str).map(str::to_string);
    let reply = shared.script.respond(&text, model.as_deref());
    shared.log.lock().push(LoggedRequest {
        received_at: Utc::now(),
        path,
        model: model.clone(),
        text,
        images,
        authorization,
        body: String::from_utf8_lossy(&body).into_owned(),
    });

    if !reply.delay.is_zero() {
        tokio::time::sleep(reply.delay).await;
    }
    let content = match reply.fault {
        Fault::Refuse => return Err(Refused),
        Fault::Timeout => {
            tokio::time::sleep(HOLD_FOREVER).await;
            return Err(Refused);
        }
        Fault::Garbage => {
            return Ok(respond(StatusCode::OK, "text/plain", "<<garbage>> {not: json"));
        }
        Fault::Empty => String::new(),
        Fault::None => reply.text,
    };
    let payload = json!({
        "model": model.unwrap_or_default(),
        "created_at": Utc::now().to_rfc3339(),
        "message": {"role": "assistant", "content": content},
        "done": true,
    });
    Ok(respond(StatusCode::OK, "application/json", serde_json::to_vec(&payload).expect("serializes")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let script = MockScript {
            rules: vec![
                MockRule::reply("case-001", "first"),
                MockRule::reply("case", "second"),
                MockRule { model: Some("qwen".into()), ..MockRule::reply("x", "model-bound") },
            ],
            default_response: "fallback".into(),
        };
        assert_eq!(script.respond("Case: case-001", None).text, "first");
        assert_eq!(script.respond("Case: case-002", None).text, "second");
        assert_eq!(script.respond("x", Some("llava")).text, "fallback");
        assert_eq!(script.respond("x", Some("qwen")).text, "model-bound");
    }

    #[test]
    fn script_file_format() {
        let script = MockScript::from_json(
            r#"{"rules":[{"match":"case-001","response_text":"STATE: injury","delay_ms":5,"fault":"garbage"}],
                "default_response":"STATE: normal"}"#,
        )
        .unwrap();
        assert_eq!(script.rules[0].fault, Fault::Garbage);
        assert_eq!(script.rules[0].delay_ms, 5);
        assert_eq!(script.default_response, "STATE: normal");
    }

    #[test]
    fn request_text_handles_string_and_part_content() {
        let body = json!({"messages": [
            {"role": "system", "content": "sys"},
            {"role": "user", "content": [{"type": "text", "text": "hello"}, {"type": "image", "image": "AA=="}]}
        ]});
        assert_eq!(request_text(&body), ("sys\nhello".to_string(), 1));
    }

    #[tokio::test]
    async fn empty_log_without_traffic_and_clean_shutdown() {
        let server = MockServer::start_local(MockScript::always("x")).await.unwrap();
        assert!(server.request_log().is_empty());
        server.shutdown().await;
    }
}
