//! Interlocutor role: grounded natural-language conversation with any agent.
//!
//! A conversation opens with the fixed system prompt and a role prompt built
//! from the agent's name, its primary role, that role's environment and the
//! role data. Each turn additionally sends a context message with the agent's
//! current role data and a digest of its recent actions. Requests always go
//! out at temperature 0.
//!
//! Two backends implement [`ChatBackend`]: [`HttpBackend`] for an external
//! chat-completion endpoint and [`StubBackend`], which answers lookups and
//! grade aggregations directly from the data present in the prompts.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agr::{AgentId, AgentRecord, EnvironmentRecord, RoleBinding, RoleData, RoleName, RoleValue, World};

pub const SYSTEM_PROMPT: &str =
    "Be as concise as possible in your answers. If you do not know the answer to a question, simply answer as 'I do not know.'.";

pub const ROLE_TEMPLATE: &str = "As {ownerAgent.name}, your current role is {role.name} within the environment {environment}. You have access to {role_specific_data}. You are empowered to act directly as {role.name}. Analyze the user's question or request, leverage your knowledge and the provided data, and generate the best possible answer or solution. If you need additional reasoning steps, please outline them clearly. Then, finalize your response as {role.name}.";

pub const I_DO_NOT_KNOW: &str = "I do not know.";

pub const NO_ROLE_DATA: &str = "(no role data)";

pub const DEFAULT_DIGEST_ENTRIES: usize = 20;

pub const ENV_LLM_URL: &str = "TWINNER_LLM_URL";
pub const ENV_LLM_KEY: &str = "TWINNER_LLM_KEY";
pub const ENV_LLM_MODEL: &str = "TWINNER_LLM_MODEL";

const CONTEXT_HEADER: &str = "Current role data:";
const DIGEST_HEADER: &str = "Recent actions (newest first):";

/// Primary-role preference when an agent plays several roles.
const ROLE_PRIORITY: [RoleName; 6] = [
    RoleName::Student,
    RoleName::School,
    RoleName::Residence,
    RoleName::Resident,
    RoleName::Experimenter,
    RoleName::Interlocutor,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterlocutorError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} does not play the interlocutor role")]
    NotAnInterlocutor(AgentId),
    #[error("no such role binding")]
    UnknownBinding,
    #[error("message text must not be empty")]
    EmptyUserText,
    #[error("grade range {from}-{to} is invalid; need 1 <= from <= to <= 13")]
    InvalidGradeRange { from: u8, to: u8 },
    #[error("template placeholder {{{0}}} is not supported")]
    UnknownPlaceholder(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("chat backend unavailable: {detail} (retry later)")]
    Unavailable { detail: String },
    #[error("chat backend misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    System,
    User,
    Assistant,
}

impl Author {
    pub fn as_str(self) -> &'static str {
        match self {
            Author::System => "system",
            Author::User => "user",
            Author::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub author: Author,
    pub text: String,
    pub turn_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    agent_id: AgentId,
    messages: Vec<ChatMessage>,
    created_day: u32,
}

impl Conversation {
    /// Opens with the system prompt (turn 0) and the role prompt (turn 1).
    pub fn new(agent_id: AgentId, role_prompt: String, created_day: u32) -> Self {
        Self {
            agent_id,
            messages: vec![
                ChatMessage {
                    author: Author::System,
                    text: build_system_prompt().to_owned(),
                    turn_index: 0,
                },
                ChatMessage {
                    author: Author::System,
                    text: role_prompt,
                    turn_index: 1,
                },
            ],
            created_day,
        }
    }

    pub fn agent_id(&self) -> AgentId {
        self.agent_id
    }

    pub fn created_day(&self) -> u32 {
        self.created_day
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    fn next_turn(&self) -> u32 {
        self.messages.last().map_or(0, |m| m.turn_index + 1)
    }

    fn message(&self, author: Author, text: String) -> ChatMessage {
        ChatMessage {
            author,
            text,
            turn_index: self.next_turn(),
        }
    }
}

/// A prompt template split into literal text and named placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    system_text: String,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    AgentName,
    RoleName,
    Environment,
    RoleData,
}

impl PromptTemplate {
    pub fn new(system_text: &str, role_template: &str) -> Result<Self, InterlocutorError> {
        let mut segments = Vec::new();
        let mut rest = role_template;
        while let Some(open) = rest.find('{') {
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_owned()));
            }
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .ok_or_else(|| InterlocutorError::UnknownPlaceholder(rest[open + 1..].to_owned()))?;
            let name = &rest[open + 1..close];
            segments.push(match name {
                "ownerAgent.name" => Segment::AgentName,
                "role.name" => Segment::RoleName,
                "environment" => Segment::Environment,
                "role_specific_data" => Segment::RoleData,
                other => return Err(InterlocutorError::UnknownPlaceholder(other.to_owned())),
            });
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_owned()));
        }
        Ok(Self {
            system_text: system_text.to_owned(),
            segments,
        })
    }

    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn instantiate(&self, agent_name: &str, role: RoleName, environment: &str, role_data: &RoleData) -> String {
        let role_name = role.to_string();
        let data = render_role_data(role_data);
        let mut out = String::new();
        for seg in &self.segments {
            out.push_str(match seg {
                Segment::Literal(s) => s,
                Segment::AgentName => agent_name,
                Segment::RoleName => &role_name,
                Segment::Environment => environment,
                Segment::RoleData => &data,
            });
        }
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(SYSTEM_PROMPT, ROLE_TEMPLATE).expect("built-in template is valid")
    }
}

pub fn build_system_prompt() -> &'static str {
    SYSTEM_PROMPT
}

/// Role data as `key: value` lines in key order.
pub fn render_role_data(data: &RoleData) -> String {
    if data.is_empty() {
        return NO_ROLE_DATA.to_owned();
    }
    data.iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_role_prompt(agent: &AgentRecord, binding: &RoleBinding, environment: &EnvironmentRecord) -> String {
    PromptTemplate::default().instantiate(&agent.name, binding.role_name, &environment.name, &binding.role_data)
}

/// Role prompt for an existing binding of `agent` in `world`.
pub fn role_prompt_for(
    world: &World,
    agent: AgentId,
    binding: (crate::agr::EnvId, RoleName),
) -> Result<String, InterlocutorError> {
    let record = world.agent(agent).ok_or(InterlocutorError::UnknownAgent(agent))?;
    let b = world
        .binding(agent, binding.0, binding.1)
        .ok_or(InterlocutorError::UnknownBinding)?;
    let env = world.environment(binding.0).ok_or(InterlocutorError::UnknownBinding)?;
    Ok(build_role_prompt(record, &b, env))
}

/// Inclusive pupil total over grades `from..=to`, reading keys `g1`..`g13`.
/// Missing grades count as zero.
pub fn aggregate_students(school_role_data: &RoleData, from: u8, to: u8) -> Result<u64, InterlocutorError> {
    if !(1 <= from && from <= to && to <= 13) {
        return Err(InterlocutorError::InvalidGradeRange { from, to });
    }
    Ok((from..=to)
        .filter_map(|g| school_role_data.get(&format!("g{g}")).and_then(RoleValue::as_i64))
        .map(|n| n.max(0) as u64)
        .sum())
}

/// Newest-first `day N: event_type detail` lines for `agent`.
pub fn action_log_digest(world: &World, agent: AgentId, max_entries: usize) -> String {
    world
        .recent_events(agent, max_entries)
        .iter()
        .map(|e| {
            format!("day {}: {} {}", e.day, e.event_type, e.detail)
                .trim_end()
                .to_owned()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Everything a turn needs from the engine, captured at call start so the
/// backend call runs without access to live state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatContext {
    pub agent_id: AgentId,
    pub agent_name: String,
    pub role: RoleName,
    pub role_prompt: String,
    pub role_data: RoleData,
    pub digest: String,
    pub day: u32,
}

impl ChatContext {
    /// The per-turn context message: current role data, then the action digest.
    pub fn context_message(&self) -> String {
        let mut text = format!("{CONTEXT_HEADER}\n{}", render_role_data(&self.role_data));
        if !self.digest.is_empty() {
            text.push_str(&format!("\n{DIGEST_HEADER}\n{}", self.digest));
        }
        text
    }
}

/// The binding used for `agent`'s role prompt.
pub fn primary_binding(world: &World, agent: AgentId) -> Option<RoleBinding> {
    let bindings = world.bindings_of(agent);
    ROLE_PRIORITY
        .iter()
        .find_map(|role| bindings.iter().find(|b| b.role_name == *role).cloned())
}

pub fn chat_context(world: &World, agent: AgentId, max_entries: usize) -> Result<ChatContext, InterlocutorError> {
    let record = world.agent(agent).ok_or(InterlocutorError::UnknownAgent(agent))?;
    if !world.has_role(agent, RoleName::Interlocutor) {
        return Err(InterlocutorError::NotAnInterlocutor(agent));
    }
    let binding = primary_binding(world, agent).ok_or(InterlocutorError::UnknownBinding)?;
    let env = world
        .environment(binding.environment_id)
        .ok_or(InterlocutorError::UnknownBinding)?;
    Ok(ChatContext {
        agent_id: agent,
        agent_name: record.name.clone(),
        role: binding.role_name,
        role_prompt: build_role_prompt(record, &binding, env),
        role_data: binding.role_data,
        digest: action_log_digest(world, agent, max_entries),
        day: world.clock().day(),
    })
}

/// A request to a chat backend. Temperature is fixed at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    messages: Vec<ChatMessage>,
    temperature: f64,
    model_id: String,
}

impl BackendRequest {
    pub fn new(messages: Vec<ChatMessage>, model_id: impl Into<String>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            model_id: model_id.into(),
        }
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// `{"model", "temperature": 0, "messages": [{"role", "content"}]}`.
    pub fn wire_body(&self) -> Value {
        json!({
            "model": self.model_id,
            "temperature": 0,
            "messages": self.messages.iter()
                .map(|m| json!({"role": m.author.as_str(), "content": m.text}))
                .collect::<Vec<_>>(),
        })
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub reply: String,
    pub turn_index: u32,
}

/// One conversational turn. On success the conversation grows by exactly
/// the user message and the reply; on failure it is left untouched.
pub fn converse(
    conversation: &mut Conversation,
    context: &ChatContext,
    user_text: &str,
    backend: &dyn ChatBackend,
    model_id: &str,
) -> Result<ChatReply, InterlocutorError> {
    if user_text.trim().is_empty() {
        return Err(InterlocutorError::EmptyUserText);
    }
    let user = conversation.message(Author::User, user_text.to_owned());
    let mut outgoing: Vec<ChatMessage> = conversation.messages[..2].to_vec();
    outgoing.push(ChatMessage {
        author: Author::System,
        text: context.context_message(),
        turn_index: conversation.messages[1].turn_index,
    });
    outgoing.extend_from_slice(&conversation.messages[2..]);
    outgoing.push(user.clone());
    let request = BackendRequest::new(outgoing, model_id);

    let mut reply = backend.complete(&request)?;
    if reply.trim().is_empty() {
        reply = I_DO_NOT_KNOW.to_owned();
    }
    conversation.messages.push(user);
    let answer = conversation.message(Author::Assistant, reply.clone());
    let turn_index = answer.turn_index;
    conversation.messages.push(answer);
    Ok(ChatReply { reply, turn_index })
}

/// Pulls `key: value` facts out of the system messages of a request: the
/// role-data block of the role prompt and any context message. Later
/// messages override earlier ones.
pub fn extract_facts(messages: &[ChatMessage]) -> BTreeMap<String, String> {
    const OPEN: &str = "You have access to ";
    const CLOSE: &str = ". You are empowered to act directly as ";
    let mut facts = BTreeMap::new();
    let mut absorb = |block: &str| {
        for line in block.lines() {
            if let Some((k, v)) = line.split_once(": ") {
                let key = k.trim();
                if !key.is_empty() && !key.contains(' ') {
                    facts.insert(key.to_owned(), v.trim().to_owned());
                }
            }
        }
    };
    for m in messages.iter().filter(|m| m.author == Author::System) {
        if let Some(start) = m.text.find(OPEN) {
            let body = &m.text[start + OPEN.len()..];
            if let Some(end) = body.find(CLOSE) {
                absorb(&body[..end]);
            }
        } else if let Some(rest) = m.text.strip_prefix(CONTEXT_HEADER) {
            let block = rest.split(DIGEST_HEADER).next().unwrap_or_default();
            absorb(block);
        }
    }
    facts
}

fn grade_range_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bgrades?\s*(\d{1,2})\s*(?:-|–|to|through|and)\s*(?:grade\s*)?(\d{1,2})\b").unwrap()
    })
}

fn single_grade_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bgrade\s*(\d{1,2})\b").unwrap())
}

/// Deterministic offline backend.
///
/// Answers, in order of precedence: grade-range totals ("between Grade 2 and
/// Grade 5"), single-grade counts ("in grade 11"), and questions naming a
/// fact key (`economic_status` matches "economic status"). Anything else, or
/// any question about data the prompts do not contain, gets "I do not know.".
#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackend;

impl StubBackend {
    pub fn answer(&self, question: &str, facts: &BTreeMap<String, String>) -> String {
        let has_grades = (1..=13).any(|g| facts.contains_key(&format!("g{g}")));
        if let Some(c) = grade_range_re().captures(question) {
            let (from, to) = (c[1].parse::<u8>().unwrap_or(0), c[2].parse::<u8>().unwrap_or(0));
            if !has_grades {
                return I_DO_NOT_KNOW.to_owned();
            }
            let data: RoleData = facts
                .iter()
                .filter_map(|(k, v)| v.parse::<i64>().ok().map(|n| (k.clone(), RoleValue::Int(n))))
                .collect();
            return match aggregate_students(&data, from, to) {
                Ok(total) => total.to_string(),
                Err(_) => I_DO_NOT_KNOW.to_owned(),
            };
        }
        if let Some(c) = single_grade_re().captures(question) {
            return facts
                .get(&format!("g{}", &c[1]))
                .cloned()
                .unwrap_or_else(|| I_DO_NOT_KNOW.to_owned());
        }
        let lower = question.to_lowercase();
        facts
            .iter()
            .filter_map(|(k, v)| {
                let phrase = k.replace('_', " ").to_lowercase();
                let re = Regex::new(&format!(r"\b{}\b", regex::escape(&phrase))).ok()?;
                re.is_match(&lower).then_some((phrase.len(), k, v))
            })
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(a.1)))
            .map(|(_, _, v)| v.clone())
            .unwrap_or_else(|| I_DO_NOT_KNOW.to_owned())
    }
}

impl ChatBackend for StubBackend {
    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let question = request
            .messages()
            .iter()
            .rev()
            .find(|m| m.author == Author::User)
            .map(|m| m.text.as_str())
            .unwrap_or_default();
        Ok(self.answer(question, &extract_facts(request.messages())))
    }
}

/// Chat-completion endpoint over HTTP(S).
#[derive(Debug, Clone)]
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            api_key,
            agent,
        }
    }

    /// Reads `TWINNER_LLM_URL` (required) and `TWINNER_LLM_KEY` (optional).
    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(ENV_LLM_URL).map_err(|_| BackendError::Config(format!("{ENV_LLM_URL} is not set")))?;
        let key = std::env::var(ENV_LLM_KEY).ok().filter(|k| !k.is_empty());
        Ok(Self::new(url, key, Duration::from_secs(60)))
    }
}

/// Model id from `TWINNER_LLM_MODEL`, or `default`.
pub fn model_from_env() -> String {
    std::env::var(ENV_LLM_MODEL)
        .ok()
        .filter(|m| !m.is_empty())
        .unwrap_or_else(|| "default".to_owned())
}

/// First assistant message in an OpenAI-style (`choices[].message`) or
/// Ollama-style (`message`) response.
pub fn first_assistant_message(body: &Value) -> Option<String> {
    let is_assistant = |m: &Value| m.get("role").and_then(Value::as_str).is_none_or(|r| r == "assistant");
    let content = |m: &Value| m.get("content").and_then(Value::as_str).map(str::to_owned);
    if let Some(choices) = body.get("choices").and_then(Value::as_array) {
        return choices
            .iter()
            .filter_map(|c| c.get("message"))
            .find(|m| is_assistant(m))
            .and_then(content);
    }
    body.get("message").filter(|m| is_assistant(m)).and_then(content)
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let unavailable = |detail: String| BackendError::Unavailable { detail };
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(request.wire_body())
            .map_err(|e| unavailable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(unavailable(format!("endpoint returned HTTP {}", status.as_u16())));
        }
        let body: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(format!("unreadable response: {e}")))?;
        first_assistant_message(&body).ok_or_else(|| unavailable("response has no assistant message".to_owned()))
    }
}
