//! Chat completion, n-way sampling, tool-call parsing and the scripted mock
//! provider used for deterministic runs.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    System,
    /// The caller driving the model (user turn).
    Agent,
    /// Output of a tool call fed back to the model.
    Tool,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// Append-only message list whose first message is the system prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    messages: Vec<Message>,
}

impl Transcript {
    pub fn new(system: impl Into<String>) -> Self {
        Self {
            messages: vec![Message {
                role: Role::System,
                content: system.into(),
            }],
        }
    }

    pub fn push(&mut self, role: Role, content: impl Into<String>) {
        self.messages.push(Message {
            role,
            content: content.into(),
        });
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last(&self) -> &Message {
        self.messages.last().expect("transcript always holds the system message")
    }

    /// All message bodies joined, used for scripted prompt assertions.
    pub fn flatten(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
}

impl ParamType {
    pub fn json_name(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
        }
    }

    fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Number => v.is_number(),
            ParamType::Boolean => v.is_boolean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
}

impl ToolSchema {
    /// JSON-schema rendering for a provider's native tool channel.
    pub fn to_function_json(&self) -> Value {
        let props: serde_json::Map<String, Value> = self
            .parameters
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    json!({"type": p.ty.json_name(), "description": p.description}),
                )
            })
            .collect();
        let required: Vec<&str> = self
            .parameters
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect();
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {"type": "object", "properties": props, "required": required},
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool_name: String,
    pub arguments: BTreeMap<String, Value>,
}

impl ToolInvocation {
    pub fn new(tool_name: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.into(),
            arguments: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.arguments.insert(key.into(), value.into());
        self
    }

    pub fn str_arg(&self, key: &str) -> Option<&str> {
        self.arguments.get(key).and_then(Value::as_str)
    }

    /// Wire form embedded in model messages.
    pub fn render(&self) -> String {
        json!({"tool": self.tool_name, "arguments": self.arguments}).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum MalformedCall {
    #[error("no tool call found in the reply")]
    NoCallFound,
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("{0} tool calls in one reply; issue exactly one")]
    MultipleCalls(usize),
}

fn json_objects_in(text: &str) -> Vec<serde_json::Map<String, Value>> {
    if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(text.trim()) {
        return vec![obj];
    }
    let mut fenced = Vec::new();
    for (i, block) in text.split("```").enumerate() {
        if i % 2 == 0 {
            continue;
        }
        let body = match block.split_once('\n') {
            Some((tag, rest)) if !tag.contains('{') => rest,
            _ => block,
        };
        if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(body.trim()) {
            fenced.push(obj);
        }
    }
    if !fenced.is_empty() {
        return fenced;
    }
    let mut found = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find('{') {
        let start = pos + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(obj))) => {
                found.push(obj);
                pos = start + stream.byte_offset();
            }
            _ => pos = start + 1,
        }
    }
    found
}

/// Extracts exactly one tool call from a model message and checks it against
/// the registry.
pub fn parse_tool_invocation(
    msg: &str,
    registry: &[ToolSchema],
) -> Result<ToolInvocation, MalformedCall> {
    let calls: Vec<_> = json_objects_in(msg)
        .into_iter()
        .filter(|o| o.get("tool").map(Value::is_string).unwrap_or(false))
        .collect();
    let call = match calls.len() {
        0 => return Err(MalformedCall::NoCallFound),
        1 => calls.into_iter().next().unwrap(),
        n => return Err(MalformedCall::MultipleCalls(n)),
    };
    let name = call["tool"].as_str().unwrap().to_string();
    let schema = registry
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| MalformedCall::UnknownTool(name.clone()))?;
    let args = match call.get("arguments") {
        None | Some(Value::Null) => serde_json::Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(other) => {
            return Err(MalformedCall::BadArguments(format!(
                "arguments must be an object, got {other}"
            )))
        }
    };
    for key in args.keys() {
        if !schema.parameters.iter().any(|p| &p.name == key) {
            return Err(MalformedCall::BadArguments(format!(
                "{name} has no parameter {key:?}"
            )));
        }
    }
    for p in &schema.parameters {
        match args.get(&p.name) {
            None if p.required => {
                return Err(MalformedCall::BadArguments(format!(
                    "missing required parameter {:?}",
                    p.name
                )))
            }
            Some(v) if !p.ty.accepts(v) => {
                return Err(MalformedCall::BadArguments(format!(
                    "parameter {:?} must be {:?}",
                    p.name, p.ty
                )))
            }
            _ => {}
        }
    }
    Ok(ToolInvocation {
        tool_name: name,
        arguments: args.into_iter().collect(),
    })
}

/// Returns the body of the first fenced code block, or the whole reply when
/// it has none.
pub fn extract_code(reply: &str) -> String {
    let mut parts = reply.split("```");
    parts.next();
    if let Some(block) = parts.next() {
        if parts.next().is_some() {
            let body = match block.split_once('\n') {
                Some((tag, rest)) if !tag.trim().contains(' ') => rest,
                _ => block,
            };
            return body.trim_end().to_string() + "\n";
        }
    }
    reply.trim().to_string() + "\n"
}

fn default_max_tokens() -> u32 {
    8192
}
fn default_temperature() -> f64 {
    0.7
}
fn default_request_timeout() -> f64 {
    300.0
}
fn default_retry_limit() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// `http(s)://...`, `env` (read `PROVIDER_ENDPOINT`) or `mock:<script-path>`.
    pub endpoint: String,
    pub model_id: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Seconds per attempt.
    #[serde(default = "default_request_timeout")]
    pub request_timeout: f64,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "env".into(),
            model_id: "default".into(),
            max_tokens: default_max_tokens(),
            temperature: default_temperature(),
            request_timeout: default_request_timeout(),
            retry_limit: default_retry_limit(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.request_timeout > 0.0) {
            return Err("request_timeout must be positive".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn mock_script(&self) -> Option<&str> {
        self.endpoint.strip_prefix("mock:")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("provider unavailable after {attempts} attempt(s): {reason}")]
    ProviderUnavailable { attempts: u32, reason: String },
    #[error("request timed out")]
    Timeout,
    #[error("scripted prompt assertion failed: {0}")]
    ScriptAssertion(String),
    #[error("all {n} samples failed: {last}")]
    SampleFailed { n: usize, last: Box<InferenceError> },
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

pub trait ChatProvider: Send + Sync {
    /// One model message for the transcript. Never mutates the transcript.
    fn complete(&self, t: &Transcript) -> Result<String, InferenceError>;

    /// Like `complete`, offering `tools` on a native tool-call channel when
    /// the provider has one. Native calls come back in the
    /// `{"tool": .., "arguments": ..}` text form.
    fn complete_with_tools(
        &self,
        t: &Transcript,
        _tools: &[ToolSchema],
    ) -> Result<String, InferenceError> {
        self.complete(t)
    }

    /// `n` completions of the same transcript snapshot, in issue order.
    /// Failed calls are kept as `Err` placeholders; fails only when every
    /// call fails.
    fn sample_n(
        &self,
        t: &Transcript,
        n: usize,
    ) -> Result<Vec<Result<String, InferenceError>>, InferenceError> {
        assert!(n >= 1, "sample_n requires n >= 1");
        let results: Vec<_> = thread::scope(|s| {
            let handles: Vec<_> = (0..n).map(|_| s.spawn(|| self.complete(t))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(InferenceError::ProviderUnavailable {
                            attempts: 1,
                            reason: "sampling thread panicked".into(),
                        })
                    })
                })
                .collect()
        });
        settle_samples(results)
    }
}

fn settle_samples(
    results: Vec<Result<String, InferenceError>>,
) -> Result<Vec<Result<String, InferenceError>>, InferenceError> {
    if results.iter().any(Result::is_ok) {
        return Ok(results);
    }
    let n = results.len();
    let last = results
        .into_iter()
        .last()
        .and_then(Result::err)
        .expect("n >= 1");
    Err(InferenceError::SampleFailed {
        n,
        last: Box::new(last),
    })
}

/// One scripted reply. Exactly one of `reply` / `error` should be set.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Substrings the incoming transcript must contain.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect_contains: Vec<String>,
}

impl ScriptEntry {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            reply: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn error(reason: impl Into<String>) -> Self {
        Self {
            error: Some(reason.into()),
            ..Self::default()
        }
    }

    pub fn call(inv: &ToolInvocation) -> Self {
        Self::reply(inv.render())
    }

    pub fn expecting(mut self, needle: impl Into<String>) -> Self {
        self.expect_contains.push(needle.into());
        self
    }
}

/// Replays canned replies in order. Script consumption is serialized under a
/// lock; `sample_n` takes `n` consecutive entries.
#[derive(Debug, Default)]
pub struct MockProvider {
    script: Mutex<VecDeque<ScriptEntry>>,
    served: Mutex<usize>,
}

impl MockProvider {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self {
            script: Mutex::new(entries.into_iter().collect()),
            served: Mutex::new(0),
        }
    }

    pub fn replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(ScriptEntry::reply))
    }

    /// Loads a line-delimited JSON script. Blank lines and lines starting with
    /// `#` are ignored.
    pub fn from_file(path: &Path) -> Result<Self, InferenceError> {
        let text = fs::read_to_string(path).map_err(|e| {
            InferenceError::InvalidConfig(format!("mock script {}: {e}", path.display()))
        })?;
        Self::from_jsonl(&text)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, InferenceError> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| {
                InferenceError::InvalidConfig(format!("mock script line {}: {e}", lineno + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }

    pub fn served(&self) -> usize {
        *self.served.lock().unwrap()
    }

    fn serve(
        &self,
        script: &mut VecDeque<ScriptEntry>,
        t: &Transcript,
    ) -> Result<String, InferenceError> {
        let entry = script.pop_front().ok_or_else(|| InferenceError::ProviderUnavailable {
            attempts: 1,
            reason: "mock script exhausted".into(),
        })?;
        *self.served.lock().unwrap() += 1;
        let flat = t.flatten();
        for needle in &entry.expect_contains {
            if !flat.contains(needle.as_str()) {
                return Err(InferenceError::ScriptAssertion(format!(
                    "transcript lacks {needle:?}"
                )));
            }
        }
        match (entry.reply, entry.error) {
            (Some(reply), None) => Ok(reply),
            (_, Some(reason)) => Err(InferenceError::ProviderUnavailable {
                attempts: 1,
                reason,
            }),
            (None, None) => Ok(String::new()),
        }
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, t: &Transcript) -> Result<String, InferenceError> {
        let mut script = self.script.lock().unwrap();
        self.serve(&mut script, t)
    }

    fn sample_n(
        &self,
        t: &Transcript,
        n: usize,
    ) -> Result<Vec<Result<String, InferenceError>>, InferenceError> {
        assert!(n >= 1, "sample_n requires n >= 1");
        let mut script = self.script.lock().unwrap();
        let results = (0..n).map(|_| self.serve(&mut script, t)).collect();
        settle_samples(results)
    }
}

/// OpenAI-compatible chat-completion client. Credentials come from
/// `PROVIDER_API_KEY`; an `env` endpoint is read from `PROVIDER_ENDPOINT`.
pub struct HttpProvider {
    cfg: ProviderConfig,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    backoff_base: Duration,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, InferenceError> {
        cfg.validate().map_err(InferenceError::InvalidConfig)?;
        let endpoint = if cfg.endpoint == "env" {
            std::env::var("PROVIDER_ENDPOINT").map_err(|_| {
                InferenceError::InvalidConfig("PROVIDER_ENDPOINT is not set".into())
            })?
        } else {
            cfg.endpoint.clone()
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.request_timeout)))
            .build()
            .into();
        Ok(Self {
            endpoint,
            api_key: std::env::var("PROVIDER_API_KEY").ok(),
            agent,
            cfg,
            backoff_base: Duration::from_millis(500),
        })
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn request_body(&self, t: &Transcript, tools: &[ToolSchema]) -> Value {
        let messages: Vec<Value> = t
            .messages()
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::Agent | Role::Tool => "user",
                    Role::Model => "assistant",
                };
                json!({"role": role, "content": m.content})
            })
            .collect();
        let mut body = json!({
            "model": self.cfg.model_id,
            "messages": messages,
            "max_tokens": self.cfg.max_tokens,
            "temperature": self.cfg.temperature,
        });
        if !tools.is_empty() {
            body["tools"] = Value::Array(tools.iter().map(ToolSchema::to_function_json).collect());
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String, InferenceError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => InferenceError::Timeout,
            other => InferenceError::ProviderUnavailable {
                attempts: 1,
                reason: other.to_string(),
            },
        })?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| InferenceError::ProviderUnavailable {
                attempts: 1,
                reason: format!("unreadable response: {e}"),
            })?;
        parse_completion_response(&v)
    }
}

/// Reads `choices[0].message`, turning a native tool call into the text form.
pub fn parse_completion_response(v: &Value) -> Result<String, InferenceError> {
    let msg = &v["choices"][0]["message"];
    if let Some(call) = msg["tool_calls"].as_array().and_then(|c| c.first()) {
        let name = call["function"]["name"].as_str().unwrap_or_default();
        let args = match &call["function"]["arguments"] {
            Value::String(s) => serde_json::from_str(s).unwrap_or(Value::String(s.clone())),
            other => other.clone(),
        };
        return Ok(json!({"tool": name, "arguments": args}).to_string());
    }
    msg["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| InferenceError::ProviderUnavailable {
            attempts: 1,
            reason: "response has no message content".into(),
        })
}

impl ChatProvider for HttpProvider {
    fn complete(&self, t: &Transcript) -> Result<String, InferenceError> {
        self.complete_with_tools(t, &[])
    }

    fn complete_with_tools(
        &self,
        t: &Transcript,
        tools: &[ToolSchema],
    ) -> Result<String, InferenceError> {
        let body = self.request_body(t, tools);
        let attempts = self.cfg.retry_limit + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.backoff_base * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("provider attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(InferenceError::ProviderUnavailable {
            attempts,
            reason: last,
        })
    }
}

/// Builds the provider named by the config endpoint.
pub fn connect(cfg: &ProviderConfig) -> Result<Box<dyn ChatProvider>, InferenceError> {
    match cfg.mock_script() {
        Some(path) => Ok(Box::new(MockProvider::from_file(Path::new(path))?)),
        None => Ok(Box::new(HttpProvider::new(cfg.clone())?)),
    }
}
