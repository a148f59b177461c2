//! REST API over a single loaded scenario.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use twinner_core::agr::{AgentId, AgentKind, RoleName};
use twinner_core::interlocutor::{
    chat_context, converse, BackendError, ChatBackend, Conversation, InterlocutorError, DEFAULT_DIGEST_ENTRIES,
};
use twinner_core::scenario::{AgentSummary, ScenarioConfig, ScenarioError, Twin};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            error,
            detail: detail.into(),
        }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", detail)
    }

    fn no_scenario() -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "NoScenario",
            "no scenario is loaded; POST /api/scenario first",
        )
    }

    fn unknown_agent(id: AgentId) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "UnknownAgent",
            format!("agent {id} does not exist"),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.error, "detail": self.detail}))).into_response()
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        use twinner_core::population::PopulationError;
        let detail = e.to_string();
        match e {
            ScenarioError::ConfigJson { .. } | ScenarioError::InvalidConfig(_) => {
                Self::new(StatusCode::BAD_REQUEST, "InvalidScenario", detail)
            }
            ScenarioError::Population(PopulationError::InsufficientCapacity { .. }) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InsufficientCapacity", detail)
            }
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InfeasibleScenario", detail),
        }
    }
}

impl From<InterlocutorError> for ApiError {
    fn from(e: InterlocutorError) -> Self {
        let detail = e.to_string();
        match e {
            InterlocutorError::UnknownAgent(id) => Self::unknown_agent(id),
            InterlocutorError::NotAnInterlocutor(_) | InterlocutorError::UnknownBinding => {
                Self::new(StatusCode::NOT_FOUND, "NotAnInterlocutor", detail)
            }
            InterlocutorError::EmptyUserText => Self::bad_request(detail),
            InterlocutorError::Backend(BackendError::Unavailable { .. }) => {
                Self::new(StatusCode::BAD_GATEWAY, "BackendUnavailable", detail)
            }
            InterlocutorError::Backend(BackendError::Config(_)) => {
                Self::new(StatusCode::BAD_GATEWAY, "BackendMisconfigured", detail)
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", detail),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

type ConversationStore = Mutex<BTreeMap<AgentId, Arc<Mutex<Conversation>>>>;

struct Shared {
    twin: RwLock<Option<Twin>>,
    stepping: AtomicBool,
    conversations: ConversationStore,
    backend: Arc<dyn ChatBackend>,
    model: String,
    token: Option<String>,
}

/// Service state shared by all handlers.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(backend: Arc<dyn ChatBackend>, model: impl Into<String>, token: Option<String>) -> Self {
        Self(Arc::new(Shared {
            twin: RwLock::new(None),
            stepping: AtomicBool::new(false),
            conversations: Mutex::new(BTreeMap::new()),
            backend,
            model: model.into(),
            token: token.filter(|t| !t.is_empty()),
        }))
    }

    /// Installs an already built scenario, dropping all conversations.
    pub fn install(&self, twin: Twin) {
        let mut slot = self.0.twin.write().unwrap_or_else(|e| e.into_inner());
        self.0.conversations.lock().unwrap_or_else(|e| e.into_inner()).clear();
        *slot = Some(twin);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/scenario", post(load_scenario))
        .route("/api/agents", get(list_agents))
        .route("/api/agents/{id}", get(get_agent))
        .route("/api/agents/{id}/chat", post(chat))
        .route("/api/sim/step", post(step))
        .route("/api/metrics", get(metrics))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.0.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "Unauthorized",
                "a valid bearer token is required",
            )
            .into_response();
        }
    }
    next.run(req).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn parse_id(raw: &str) -> Result<AgentId, ApiError> {
    raw.parse::<u64>()
        .map(AgentId)
        .map_err(|_| ApiError::bad_request(format!("agent id must be a non-negative integer, got {raw:?}")))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    scenario_loaded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    day: Option<u32>,
}

async fn health(State(state): State<AppState>) -> ApiResult<Health> {
    let twin = state.0.twin.read().unwrap_or_else(|e| e.into_inner());
    Ok(Json(Health {
        status: "ok",
        scenario_loaded: twin.is_some(),
        day: twin.as_ref().map(Twin::day),
    }))
}

#[derive(Serialize)]
struct Loaded {
    agents: usize,
    students: usize,
    schools: usize,
    day: u32,
    census: twinner_core::scenario::Census,
}

async fn load_scenario(State(state): State<AppState>, body: Bytes) -> ApiResult<Loaded> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let config = ScenarioConfig::from_json(text, None)?;
    if state.0.stepping.load(Ordering::Acquire) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "Busy",
            "a step is in progress; retry when it finishes",
        ));
    }
    let twin = blocking(move || Twin::build(&config).map_err(ApiError::from)).await?;
    let census = twin.census().clone();
    state.install(twin);
    Ok(Json(Loaded {
        agents: census.agents,
        students: census.students,
        schools: census.schools,
        day: 0,
        census,
    }))
}

async fn list_agents(
    State(state): State<AppState>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<Vec<AgentSummary>> {
    let mut kind = None;
    let mut role = None;
    for (k, v) in &query {
        match k.as_str() {
            "kind" => {
                kind = Some(AgentKind::parse(v).ok_or_else(|| ApiError::bad_request(format!("unknown kind {v:?}")))?)
            }
            "role" => {
                role = Some(RoleName::parse(v).ok_or_else(|| ApiError::bad_request(format!("unknown role {v:?}")))?)
            }
            other => return Err(ApiError::bad_request(format!("unknown filter {other:?}"))),
        }
    }
    let guard = state.0.twin.read().unwrap_or_else(|e| e.into_inner());
    let twin = guard.as_ref().ok_or_else(ApiError::no_scenario)?;
    let agents = twin
        .agent_summaries()
        .into_iter()
        .filter(|a| kind.is_none_or(|k| a.kind == k))
        .filter(|a| role.is_none_or(|r| a.roles.contains(&r)))
        .collect();
    Ok(Json(agents))
}

#[derive(Serialize)]
struct BindingView {
    environment_id: u64,
    environment: String,
    role: RoleName,
    role_data: twinner_core::agr::RoleData,
}

#[derive(Serialize)]
struct AgentDetail {
    #[serde(flatten)]
    summary: AgentSummary,
    bindings: Vec<BindingView>,
}

async fn get_agent(State(state): State<AppState>, Path(raw): Path<String>) -> ApiResult<AgentDetail> {
    let id = parse_id(&raw)?;
    let guard = state.0.twin.read().unwrap_or_else(|e| e.into_inner());
    let twin = guard.as_ref().ok_or_else(ApiError::no_scenario)?;
    let summary = twin.agent_summary(id).ok_or_else(|| ApiError::unknown_agent(id))?;
    let world = twin.world();
    let bindings = world
        .bindings_of(id)
        .into_iter()
        .map(|b| BindingView {
            environment_id: b.environment_id.0,
            environment: world
                .environment(b.environment_id)
                .map(|e| e.name.clone())
                .unwrap_or_default(),
            role: b.role_name,
            role_data: b.role_data,
        })
        .collect();
    Ok(Json(AgentDetail { summary, bindings }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatRequest {
    message: String,
}

#[derive(Serialize)]
struct ChatResponse {
    reply: String,
    turn_index: u32,
}

async fn chat(State(state): State<AppState>, Path(raw): Path<String>, body: Bytes) -> ApiResult<ChatResponse> {
    let id = parse_id(&raw)?;
    let req: ChatRequest = parse_json(&body)?;
    if req.message.trim().is_empty() {
        return Err(InterlocutorError::EmptyUserText.into());
    }
    let context = {
        let guard = state.0.twin.read().unwrap_or_else(|e| e.into_inner());
        let twin = guard.as_ref().ok_or_else(ApiError::no_scenario)?;
        chat_context(twin.world(), id, DEFAULT_DIGEST_ENTRIES)?
    };
    let conversation = {
        let mut store = state.0.conversations.lock().unwrap_or_else(|e| e.into_inner());
        store
            .entry(id)
            .or_insert_with(|| {
                Arc::new(Mutex::new(Conversation::new(
                    id,
                    context.role_prompt.clone(),
                    context.day,
                )))
            })
            .clone()
    };
    let shared = state.0.clone();
    let reply = blocking(move || {
        let mut conv = conversation.lock().unwrap_or_else(|e| e.into_inner());
        converse(
            &mut conv,
            &context,
            &req.message,
            shared.backend.as_ref(),
            &shared.model,
        )
        .map_err(ApiError::from)
    })
    .await?;
    Ok(Json(ChatResponse {
        reply: reply.reply,
        turn_index: reply.turn_index,
    }))
}

#[derive(Serialize)]
struct Stepped {
    day: u32,
    new_events: usize,
    dropouts_total: usize,
}

async fn step(State(state): State<AppState>, body: Bytes) -> ApiResult<Stepped> {
    let req: Value = parse_json(&body)?;
    let days = match req.get("days") {
        Some(v) => v
            .as_i64()
            .ok_or_else(|| ApiError::bad_request("days must be an integer"))?,
        None => return Err(ApiError::bad_request("missing field `days`")),
    };
    if let Some(extra) = req.as_object().and_then(|o| o.keys().find(|k| *k != "days")) {
        return Err(ApiError::bad_request(format!("unknown field `{extra}`")));
    }
    if days < 1 {
        return Err(ApiError::bad_request(format!("days must be at least 1, got {days}")));
    }
    let days = u32::try_from(days).map_err(|_| ApiError::bad_request("days is too large"))?;
    let shared = state.0.clone();
    blocking(move || {
        let mut guard = shared.twin.write().unwrap_or_else(|e| e.into_inner());
        let twin = guard.as_mut().ok_or_else(ApiError::no_scenario)?;
        shared.stepping.store(true, Ordering::Release);
        let result = twin.step_days(days);
        shared.stepping.store(false, Ordering::Release);
        let new_events = result?;
        Ok(Json(Stepped {
            day: twin.day(),
            new_events,
            dropouts_total: twin.metrics().dropouts,
        }))
    })
    .await
}

async fn metrics(State(state): State<AppState>) -> ApiResult<twinner_core::scenario::MetricsReport> {
    let guard = state.0.twin.read().unwrap_or_else(|e| e.into_inner());
    let twin = guard.as_ref().ok_or_else(ApiError::no_scenario)?;
    Ok(Json(twin.metrics()))
}
