use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use twinner_core::interlocutor::{Author, BackendError, BackendRequest, ChatBackend, ChatMessage, HttpBackend};

type Seen = Arc<Mutex<Vec<(Option<String>, Value)>>>;

async fn mock(reply: Value, status: StatusCode) -> (String, Seen) {
    let seen: Seen = Arc::default();
    let app = Router::new()
        .route(
            "/v1/chat/completions",
            post(
                |State((seen, reply, status)): State<(Seen, Value, StatusCode)>,
                 headers: axum::http::HeaderMap,
                 Json(body): Json<Value>| async move {
                    let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_owned());
                    seen.lock().unwrap().push((auth, body));
                    (status, Json(reply))
                },
            ),
        )
        .with_state((seen.clone(), reply, status));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

fn request() -> BackendRequest {
    BackendRequest::new(
        vec![
            ChatMessage {
                author: Author::System,
                text: "be brief".into(),
                turn_index: 0,
            },
            ChatMessage {
                author: Author::User,
                text: "how many?".into(),
                turn_index: 1,
            },
        ],
        "llama3",
    )
}

async fn complete(backend: HttpBackend) -> Result<String, BackendError> {
    tokio::task::spawn_blocking(move || backend.complete(&request()))
        .await
        .unwrap()
}

#[tokio::test]
async fn speaks_the_chat_completion_wire_format() {
    let reply = json!({"choices": [{"message": {"role": "assistant", "content": "40"}}]});
    let (url, seen) = mock(reply, StatusCode::OK).await;
    let backend = HttpBackend::new(url, Some("k3y".into()), Duration::from_secs(5));
    assert_eq!(complete(backend).await.unwrap(), "40");
    let seen = seen.lock().unwrap();
    let (auth, body) = &seen[0];
    assert_eq!(auth.as_deref(), Some("Bearer k3y"));
    assert_eq!(
        body,
        &json!({"model": "llama3", "temperature": 0, "messages": [
            {"role": "system", "content": "be brief"},
            {"role": "user", "content": "how many?"}
        ]})
    );
}

#[tokio::test]
async fn http_errors_surface_as_unavailable() {
    let (url, _) = mock(json!({"error": "overloaded"}), StatusCode::SERVICE_UNAVAILABLE).await;
    let backend = HttpBackend::new(url, None, Duration::from_secs(5));
    assert!(matches!(complete(backend).await, Err(BackendError::Unavailable { .. })));
}

#[tokio::test]
async fn missing_assistant_message_is_unavailable() {
    let (url, _) = mock(json!({"choices": []}), StatusCode::OK).await;
    let backend = HttpBackend::new(url, None, Duration::from_secs(5));
    assert!(matches!(complete(backend).await, Err(BackendError::Unavailable { .. })));
}
