use std::time::{Duration, Instant};

use hreflex_core::gateway::{
    ConsortiumJob, Gateway, GatewayConfig, Health, InferenceStatus, ModelEndpoint, RetryPolicy,
};
use hreflex_core::mock_server::{Fault, MockRule, MockScript, MockServer};
use hreflex_core::prompt::{RenderedPrompt, Sampling};

fn prompt(user: &str) -> RenderedPrompt {
    RenderedPrompt {
        system_text: "You are a test.".into(),
        user_text: user.into(),
        image: None,
        format_directive: String::new(),
        template_version: "v1".into(),
        sampling: Sampling { max_tokens: 32, temperature: 0.0 },
    }
}

fn endpoint(server: &MockServer, timeout_ms: u64) -> ModelEndpoint {
    ModelEndpoint::new(server.chat_url(), "mock-vlm", timeout_ms)
}

#[tokio::test]
async fn ok_response_is_returned_verbatim() {
    let served = "WAVEFORM: x\nSTATE: injury\n  trailing  ";
    let server = MockServer::start_local(MockScript {
        rules: vec![MockRule::reply("case-001", served)],
        default_response: "STATE: normal".into(),
    })
    .await
    .unwrap();
    let gw = Gateway::default();
    let r = gw.query_model(&prompt("Case: case-001"), &endpoint(&server, 2000)).await;
    assert_eq!(r.status, InferenceStatus::Ok);
    assert_eq!(r.raw_text, served);
    assert_eq!(r.attempts, 1);

    let log = server.request_log();
    assert_eq!(log.len(), 1);
    assert!(log[0].text.contains("Case: case-001"));
    assert_eq!(log[0].model.as_deref(), Some("mock-vlm"));
    assert_eq!(gw.health_check(&endpoint(&server, 2000)).await, Health::Healthy);
    server.shutdown().await;
}

#[tokio::test]
async fn fault_matrix() {
    let expected = [
        (Fault::None, InferenceStatus::Ok),
        (Fault::Refuse, InferenceStatus::ConnectionError),
        (Fault::Timeout, InferenceStatus::Timeout),
        (Fault::Empty, InferenceStatus::EmptyCompletion),
        (Fault::Garbage, InferenceStatus::ProtocolError),
    ];
    let gw = Gateway::default();
    for (fault, status) in expected {
        let server = MockServer::start_local(MockScript {
            rules: vec![MockRule::reply("", "STATE: injury").with_fault(fault)],
            default_response: String::new(),
        })
        .await
        .unwrap();
        let r = gw.query_model(&prompt("hi"), &endpoint(&server, 300)).await;
        assert_eq!(r.status, status, "fault {fault:?}");
        assert_eq!(r.raw_text.is_empty(), status != InferenceStatus::Ok);
        server.shutdown().await;
    }
}

#[tokio::test]
async fn timeout_is_retried_up_to_policy() {
    let server = MockServer::start_local(MockScript {
        rules: vec![MockRule::reply("", "late").with_delay(10_000)],
        default_response: String::new(),
    })
    .await
    .unwrap();
    let ep = endpoint(&server, 100).with_retry(RetryPolicy {
        max_attempts: 2,
        backoff_base_ms: 10,
        backoff_factor: 1.0,
    });
    let started = Instant::now();
    let r = Gateway::default().query_model(&prompt("x"), &ep).await;
    assert_eq!(r.status, InferenceStatus::Timeout);
    assert_eq!(r.attempts, 2);
    assert!(r.latency_ms >= 200, "latency {}", r.latency_ms);
    assert!(started.elapsed() < Duration::from_secs(2));
    assert_eq!(server.request_log().len(), 2);
    server.shutdown().await;
}

#[tokio::test]
async fn protocol_errors_are_not_retried() {
    for fault in [Fault::Garbage, Fault::Empty] {
        let server = MockServer::start_local(MockScript {
            rules: vec![MockRule::reply("", "").with_fault(fault)],
            default_response: String::new(),
        })
        .await
        .unwrap();
        let ep = endpoint(&server, 500).with_retry(RetryPolicy { max_attempts: 3, ..Default::default() });
        let r = Gateway::default().query_model(&prompt("x"), &ep).await;
        assert_eq!(r.attempts, 1);
        assert_eq!(server.request_log().len(), 1);
        server.shutdown().await;
    }
}

#[tokio::test]
async fn consortium_is_concurrent_and_ordered() {
    let mut servers = Vec::new();
    for i in 0..3 {
        servers.push(
            MockServer::start_local(MockScript {
                rules: vec![MockRule::reply("", format!("STATE: injury #{i}")).with_delay(200)],
                default_response: String::new(),
            })
            .await
            .unwrap(),
        );
    }
    let jobs: Vec<ConsortiumJob> = servers
        .iter()
        .enumerate()
        .map(|(i, s)| ConsortiumJob {
            model_id: format!("m{i}"),
            prompt: prompt("x"),
            endpoint: endpoint(s, 2000),
        })
        .collect();
    let gw = Gateway::default();
    let started = Instant::now();
    let results = gw.query_consortium(&jobs).await;
    let wall = started.elapsed();
    assert!(wall < Duration::from_millis(400), "wall {wall:?}");
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.model_id, format!("m{i}"));
        assert_eq!(r.raw_text, format!("STATE: injury #{i}"));
    }

    // With parallelism 1 the same batch serializes.
    let gw = Gateway::new(GatewayConfig { parallelism: Some(1), ..Default::default() });
    let started = Instant::now();
    gw.query_consortium(&jobs).await;
    assert!(started.elapsed() >= Duration::from_millis(600));
    for s in servers {
        s.shutdown().await;
    }
}

#[tokio::test]
async fn partial_failures_keep_their_slots() {
    let healthy = MockServer::start_local(MockScript::always("STATE: injury")).await.unwrap();
    let empty = MockServer::start_local(MockScript {
        rules: vec![MockRule::reply("", "").with_fault(Fault::Empty)],
        default_response: String::new(),
    })
    .await
    .unwrap();
    let closed_port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let jobs = vec![
        ConsortiumJob { model_id: "a".into(), prompt: prompt("x"), endpoint: endpoint(&healthy, 1000) },
        ConsortiumJob {
            model_id: "b".into(),
            prompt: prompt("x"),
            endpoint: ModelEndpoint::new(format!("http://127.0.0.1:{closed_port}/api/chat"), "b", 1000),
        },
        ConsortiumJob { model_id: "c".into(), prompt: prompt("x"), endpoint: endpoint(&empty, 1000) },
    ];
    let statuses: Vec<_> = Gateway::default().query_consortium(&jobs).await.into_iter().map(|r| r.status).collect();
    assert_eq!(
        statuses,
        [InferenceStatus::Ok, InferenceStatus::ConnectionError, InferenceStatus::EmptyCompletion]
    );
    healthy.shutdown().await;
    empty.shutdown().await;
}

#[tokio::test]
async fn health_check_times_out_on_silent_listener() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let hold = tokio::spawn(async move {
        let mut held = Vec::new();
        loop {
            if let Ok((s, _)) = listener.accept().await {
                held.push(s);
            }
        }
    });
    let gw = Gateway::new(GatewayConfig { health_timeout: Duration::from_millis(150), ..Default::default() });
    let ep = ModelEndpoint::new(format!("http://{addr}/api/chat"), "m", 5000);
    let started = Instant::now();
    assert_eq!(gw.health_check(&ep).await, Health::Unreachable);
    assert!(started.elapsed() < Duration::from_secs(2));
    hold.abort();
}

#[tokio::test]
async fn bearer_token_is_forwarded() {
    let server = MockServer::start_local(MockScript::always("STATE: normal")).await.unwrap();
    let mut ep = endpoint(&server, 1000);
    ep.auth_token = Some("tok-123".into());
    let r = Gateway::default().query_model(&prompt("x"), &ep).await;
    assert_eq!(r.status, InferenceStatus::Ok);
    assert_eq!(server.request_log()[0].authorization.as_deref(), Some("Bearer tok-123"));
    server.shutdown().await;
}
