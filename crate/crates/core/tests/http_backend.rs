use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::Router;
use maric_core::backend::{
    embed_texts, Backend, BackendError, ChatRequest, ContentPart, HttpBackend, HttpSettings, ImageData, Message,
    RetryPolicy,
};
use maric_core::AgentRole;

#[derive(Clone, Copy)]
enum Mode {
    FailThenOk { failures: usize, status: u16 },
    Always(u16),
    Slow(Duration),
}

#[derive(Clone)]
struct Server {
    mode: Mode,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

const OK_CHAT: &str = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"<reasoning>r</reasoning><answer>cat</answer>"}}],"usage":{"prompt_tokens":12,"completion_tokens":5}}"#;

async fn chat(State(s): State<Server>, headers: HeaderMap, body: String) -> (StatusCode, String) {
    let n = s.hits.fetch_add(1, Ordering::SeqCst);
    s.bodies.lock().unwrap().push(body);
    s.auth
        .lock()
        .unwrap()
        .push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
    match s.mode {
        Mode::FailThenOk { failures, status } if n < failures => (StatusCode::from_u16(status).unwrap(), "busy".into()),
        Mode::FailThenOk { .. } => (StatusCode::OK, OK_CHAT.into()),
        Mode::Always(code) => (StatusCode::from_u16(code).unwrap(), "nope".into()),
        Mode::Slow(d) => {
            tokio::time::sleep(d).await;
            (StatusCode::OK, OK_CHAT.into())
        }
    }
}

async fn embeddings(State(s): State<Server>, body: String) -> (StatusCode, String) {
    s.hits.fetch_add(1, Ordering::SeqCst);
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    let inputs = v["input"].as_array().unwrap();
    s.bodies.lock().unwrap().push(inputs.len().to_string());
    // Reverse order exercises the index sort.
    let data: Vec<serde_json::Value> = (0..inputs.len())
        .rev()
        .map(|i| serde_json::json!({"index": i, "embedding": [i as f64, 1.0, 0.5]}))
        .collect();
    (StatusCode::OK, serde_json::json!({"data": data}).to_string())
}

async fn spawn(mode: Mode) -> (String, Server) {
    let server = Server {
        mode,
        hits: Arc::default(),
        bodies: Arc::default(),
        auth: Arc::default(),
    };
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .with_state(server.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), server)
}

fn settings() -> HttpSettings {
    HttpSettings {
        timeout: Duration::from_secs(5),
        retry: RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
        },
        max_in_flight: 4,
        api_key: None,
    }
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "llava-hf/llava-1.5-13b-hf".into(),
        temperature: 0.0,
        max_tokens: 64,
        messages: vec![
            Message::system("Classify."),
            Message::user(vec![
                ContentPart::Image(ImageData {
                    media_type: "image/png".into(),
                    base64: "iVBORw0KGgo=".into(),
                }),
                ContentPart::Text("Classes: cat, dog".into()),
            ]),
        ],
    }
}

#[tokio::test]
async fn retries_server_errors_then_succeeds() {
    let (url, server) = spawn(Mode::FailThenOk { failures: 2, status: 503 }).await;
    let backend = HttpBackend::new(vec![url], settings()).unwrap();
    let resp = backend.chat(AgentRole::Reasoning, &request()).await.unwrap();
    assert_eq!(resp.text, "<reasoning>r</reasoning><answer>cat</answer>");
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (12, 5));
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    // Every attempt sends the same canonical body.
    let bodies = server.bodies.lock().unwrap();
    assert!(bodies.iter().all(|b| *b == request().to_json()));
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["messages"][0]["content"], "Classify.");
    assert_eq!(sent["messages"][1]["content"][0]["type"], "image_url");
    assert_eq!(
        sent["messages"][1]["content"][0]["image_url"]["url"],
        "data:image/png;base64,iVBORw0KGgo="
    );
}

#[tokio::test]
async fn rate_limits_are_retried() {
    let (url, server) = spawn(Mode::FailThenOk { failures: 3, status: 429 }).await;
    let backend = HttpBackend::new(vec![url], settings()).unwrap();
    backend.chat(AgentRole::Outliner, &request()).await.unwrap();
    assert_eq!(server.hits.load(Ordering::SeqCst), 4);
}

#[tokio::test]
async fn exhausted_retries_report_unavailable() {
    let (url, server) = spawn(Mode::Always(500)).await;
    let backend = HttpBackend::new(vec![url], settings()).unwrap();
    let err = backend.chat(AgentRole::Aspect, &request()).await.unwrap_err();
    assert!(matches!(err, BackendError::EndpointUnavailable { attempts: 4, .. }), "{err:?}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 4);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (url, server) = spawn(Mode::Always(400)).await;
    let backend = HttpBackend::new(vec![url], settings()).unwrap();
    let err = backend.chat(AgentRole::Aspect, &request()).await.unwrap_err();
    assert!(matches!(err, BackendError::Rejected { status: 400, .. }), "{err:?}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn timeouts_are_not_retried() {
    let (url, server) = spawn(Mode::Slow(Duration::from_millis(800))).await;
    let backend = HttpBackend::new(
        vec![url],
        HttpSettings {
            timeout: Duration::from_millis(100),
            ..settings()
        },
    )
    .unwrap();
    let err = backend.chat(AgentRole::Aspect, &request()).await.unwrap_err();
    assert!(matches!(err, BackendError::Timeout(100)), "{err:?}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn connection_refused_is_retried() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let backend = HttpBackend::new(vec![url], settings()).unwrap();
    let err = backend.chat(AgentRole::Aspect, &request()).await.unwrap_err();
    assert!(matches!(err, BackendError::EndpointUnavailable { attempts: 4, .. }), "{err:?}");
}

#[tokio::test]
async fn bearer_token_is_sent_when_configured() {
    let (url, server) = spawn(Mode::FailThenOk { failures: 0, status: 500 }).await;
    let backend = HttpBackend::new(
        vec![url],
        HttpSettings {
            api_key: Some("sekrit".into()),
            ..settings()
        },
    )
    .unwrap();
    backend.chat(AgentRole::Aspect, &request()).await.unwrap();
    assert_eq!(server.auth.lock().unwrap()[0].as_deref(), Some("Bearer sekrit"));
}

#[tokio::test]
async fn requests_rotate_across_endpoints() {
    let (a, sa) = spawn(Mode::FailThenOk { failures: 0, status: 500 }).await;
    let (b, sb) = spawn(Mode::FailThenOk { failures: 0, status: 500 }).await;
    let backend = HttpBackend::new(vec![a, b], settings()).unwrap();
    for _ in 0..6 {
        backend.chat(AgentRole::Aspect, &request()).await.unwrap();
    }
    assert_eq!(sa.hits.load(Ordering::SeqCst), 3);
    assert_eq!(sb.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn embeddings_are_batched_and_reordered() {
    let (url, server) = spawn(Mode::Always(200)).await;
    let backend = HttpBackend::new(vec![url], settings()).unwrap();
    let texts: Vec<String> = (0..130).map(|i| format!("t{i}")).collect();
    let vectors = embed_texts(&backend, "intfloat/e5-large-v2", &texts, 64).await.unwrap();
    assert_eq!(vectors.len(), 130);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    assert_eq!(*server.bodies.lock().unwrap(), vec!["64", "64", "2"]);
    assert_eq!(vectors[1][0], 1.0);
    assert_eq!(vectors[64][0], 0.0);
}
