//! Uniform chat-model access with deterministic record/replay.
//!
//! `live` talks to a generic HTTP chat-completion endpoint, `record` does the
//! same while writing one fixture file per request cache key, and `replay`
//! serves fixtures with zero network I/O. The cache key is a pure content
//! hash of (model, system, user, temperature), so identical requests always
//! hit the same fixture.

mod structured;
mod template;

pub use structured::{
    first_json_object, parse_json_payload, parse_line_records, remove_trailing_commas,
    strip_code_fences, LineRecord, EMPTY_MARKER,
};
pub use template::{Bindings, PromptTemplate, StageName};

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FIXTURE_HEADER: &str = "attackg-fixture/1";
pub const DEFAULT_RETRIES: u32 = 3;
pub const DEFAULT_BACKOFF_MS: u64 = 250;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("template '{template}' is missing a binding for slot '{slot}'")]
    MissingBinding {
        template: &'static str,
        slot: String,
    },
    #[error("template '{template}' declares no slot '{slot}'")]
    UnknownBinding {
        template: &'static str,
        slot: String,
    },
    #[error("network failure after {attempts} attempts: {last}")]
    Network { attempts: u32, last: String },
    #[error("endpoint returned status {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("endpoint response is not a chat completion: {0}")]
    BadCompletion(String),
    #[error("replay miss for prompt '{prompt}' (cache key {key}); record fixtures first")]
    ReplayMiss { prompt: String, key: String },
    #[error("backend in {mode} mode has no endpoint configured")]
    NoEndpoint { mode: &'static str },
    #[error("fixture i/o at {path}: {source}")]
    FixtureIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture file {path} is not in {FIXTURE_HEADER} format")]
    BadFixture { path: String },
    #[error("no parseable {schema} payload in response: {raw}")]
    Unparseable { schema: &'static str, raw: String },
    #[error("{schema} payload violates schema: {detail}")]
    Schema {
        schema: &'static str,
        detail: String,
    },
}

/// One chat call. `label` is diagnostic only and excluded from the cache key.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: String,
    /// Absent in replay.
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendMode {
    Live,
    Record,
    Replay,
}

impl BackendMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendMode::Live => "live",
            BackendMode::Record => "record",
            BackendMode::Replay => "replay",
        }
    }
}

impl std::str::FromStr for BackendMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendMode::Live),
            "record" => Ok(BackendMode::Record),
            "replay" => Ok(BackendMode::Replay),
            other => Err(format!("unknown backend mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            model: "default-model".into(),
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    /// Base URL of a chat-completion API, without the trailing route.
    pub base_url: String,
    pub api_key: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Retries after the first attempt, on 429/5xx or transport failure.
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: DEFAULT_RETRIES,
            backoff_ms: DEFAULT_BACKOFF_MS,
        }
    }
}

/// Raw HTTP reply, before chat-completion interpretation.
#[derive(Debug, Clone)]
pub struct TransportReply {
    pub status: u16,
    pub body: String,
}

/// The one seam to the network. Tests inject panicking or scripted
/// transports; replay mode never touches it.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<TransportReply, String>;
}

struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    fn new() -> Self {
        HttpTransport {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("default reqwest client"),
        }
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<TransportReply, String> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(TransportReply { status, body })
    }
}

/// Placeholder transport for replay backends; complete() never reaches it.
struct OfflineTransport;

impl Transport for OfflineTransport {
    fn post_json(
        &self,
        _url: &str,
        _bearer: Option<&str>,
        _body: &serde_json::Value,
    ) -> Result<TransportReply, String> {
        Err("replay backend performs no network I/O".into())
    }
}

type MemoSlot = Arc<Mutex<Option<ChatResponse>>>;

/// Shared chat-model access for all pipeline stages.
pub struct Backend {
    mode: BackendMode,
    params: ModelParams,
    endpoint: Option<EndpointConfig>,
    fixture_dir: Option<PathBuf>,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    memo: Mutex<HashMap<String, MemoSlot>>,
    min_request_interval: Option<Duration>,
    last_request: Mutex<Option<Instant>>,
}

impl Backend {
    pub fn replay(fixture_dir: impl Into<PathBuf>, params: ModelParams) -> Self {
        Backend {
            mode: BackendMode::Replay,
            params,
            endpoint: None,
            fixture_dir: Some(fixture_dir.into()),
            transport: Arc::new(OfflineTransport),
            retry: RetryPolicy::default(),
            memo: Mutex::new(HashMap::new()),
            min_request_interval: None,
            last_request: Mutex::new(None),
        }
    }

    pub fn record(
        endpoint: EndpointConfig,
        fixture_dir: impl Into<PathBuf>,
        params: ModelParams,
    ) -> Self {
        Backend {
            mode: BackendMode::Record,
            params,
            endpoint: Some(endpoint),
            fixture_dir: Some(fixture_dir.into()),
            transport: Arc::new(HttpTransport::new()),
            retry: RetryPolicy::default(),
            memo: Mutex::new(HashMap::new()),
            min_request_interval: None,
            last_request: Mutex::new(None),
        }
    }

    pub fn live(endpoint: EndpointConfig, params: ModelParams) -> Self {
        Backend {
            mode: BackendMode::Live,
            params,
            endpoint: Some(endpoint),
            transport: Arc::new(HttpTransport::new()),
            fixture_dir: None,
            retry: RetryPolicy::default(),
            memo: Mutex::new(HashMap::new()),
            min_request_interval: None,
            last_request: Mutex::new(None),
        }
    }

    /// Swap the network seam (tests, offline recording).
    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Throttle live/record requests to at most `per_minute`.
    pub fn with_rate_limit(mut self, per_minute: Option<u32>) -> Self {
        self.min_request_interval = per_minute
            .filter(|&n| n > 0)
            .map(|n| Duration::from_millis(60_000 / u64::from(n)));
        self
    }

    pub fn mode(&self) -> BackendMode {
        self.mode
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn fixture_dir(&self) -> Option<&Path> {
        self.fixture_dir.as_deref()
    }

    /// Provenance string stored in stage outputs.
    pub fn model_info(&self) -> String {
        format!("{}:{}", self.mode.as_str(), self.params.model)
    }

    /// One completion, respecting the backend mode.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = cache_key(req);
        match self.mode {
            BackendMode::Replay => self.read_fixture(&key, req),
            BackendMode::Record => self.memoized(&key, req, |req| {
                let resp = self.network_round_trip(req)?;
                self.write_fixture(&key, req, &resp)?;
                Ok(resp)
            }),
            BackendMode::Live => self.memoized(&key, req, |req| self.network_round_trip(req)),
        }
    }

    /// Per-key memo so identical in-flight requests dedupe to one call.
    /// Errors are not memoized.
    fn memoized(
        &self,
        key: &str,
        req: &ChatRequest,
        call: impl Fn(&ChatRequest) -> Result<ChatResponse, GatewayError>,
    ) -> Result<ChatResponse, GatewayError> {
        let slot = {
            let mut memo = self.memo.lock().expect("memo lock");
            memo.entry(key.to_string()).or_default().clone()
        };
        let mut guard = slot.lock().expect("memo slot lock");
        if let Some(resp) = guard.as_ref() {
            return Ok(resp.clone());
        }
        let resp = call(req)?;
        *guard = Some(resp.clone());
        Ok(resp)
    }

    fn network_round_trip(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let endpoint = self.endpoint.as_ref().ok_or(GatewayError::NoEndpoint {
            mode: self.mode.as_str(),
        })?;
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let mut body = json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
        });
        if let Some(max) = req.max_tokens {
            body["max_tokens"] = json!(max);
        }

        let mut last_error = String::new();
        let attempts = self.retry.retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            self.throttle();
            match self
                .transport
                .post_json(&url, endpoint.api_key.as_deref(), &body)
            {
                Ok(reply) if reply.status == 200 => return parse_completion(&reply.body),
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    last_error = format!("status {}", reply.status);
                }
                Ok(reply) => {
                    return Err(GatewayError::Endpoint {
                        status: reply.status,
                        body: reply.body,
                    })
                }
                Err(e) => last_error = e,
            }
        }
        Err(GatewayError::Network {
            attempts,
            last: last_error,
        })
    }

    fn throttle(&self) {
        let Some(interval) = self.min_request_interval else {
            return;
        };
        let mut last = self.last_request.lock().expect("rate limit lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < interval {
                std::thread::sleep(interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn fixture_path(&self, key: &str) -> Result<PathBuf, GatewayError> {
        let dir = self.fixture_dir.as_ref().ok_or(GatewayError::NoEndpoint {
            mode: self.mode.as_str(),
        })?;
        Ok(dir.join(format!("{key}.txt")))
    }

    fn read_fixture(&self, key: &str, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let path = self.fixture_path(key)?;
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(GatewayError::ReplayMiss {
                    prompt: req.label.clone(),
                    key: key.to_string(),
                })
            }
            Err(source) => {
                return Err(GatewayError::FixtureIo {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        parse_fixture(&raw).ok_or_else(|| GatewayError::BadFixture {
            path: path.display().to_string(),
        })
    }

    fn write_fixture(
        &self,
        key: &str,
        req: &ChatRequest,
        resp: &ChatResponse,
    ) -> Result<(), GatewayError> {
        let path = self.fixture_path(key)?;
        let content = render_fixture(key, req, resp);
        write_atomic(&path, content.as_bytes()).map_err(|source| GatewayError::FixtureIo {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Write-then-rename so concurrent workers never observe partial fixtures.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let tmp = path.with_extension(format!("tmp{}-{nanos}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Content hash of everything the model sees. Length-prefixed fields, so
/// boundary-shifting between fields cannot collide; temperature hashes by
/// bit pattern.
pub fn cache_key(req: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    for field in [req.model.as_str(), req.system.as_str(), req.user.as_str()] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    hasher.update(req.temperature.to_bits().to_le_bytes());
    hex::encode(hasher.finalize())
}

fn render_fixture(key: &str, req: &ChatRequest, resp: &ChatResponse) -> String {
    format!(
        "{FIXTURE_HEADER}\nkey: {key}\nprompt: {}\nmodel: {}\ntemperature: {:?}\nfinish_reason: {}\n---\n{}",
        req.label, req.model, req.temperature, resp.finish_reason, resp.text
    )
}

fn parse_fixture(raw: &str) -> Option<ChatResponse> {
    let (header, text) = raw.split_once("\n---\n")?;
    let mut lines = header.lines();
    if lines.next()? != FIXTURE_HEADER {
        return None;
    }
    let mut finish_reason = String::from("stop");
    for line in lines {
        if let Some(value) = line.strip_prefix("finish_reason: ") {
            finish_reason = value.trim().to_string();
        }
    }
    Some(ChatResponse {
        text: text.to_string(),
        finish_reason,
        usage: None,
    })
}

fn parse_completion(body: &str) -> Result<ChatResponse, GatewayError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GatewayError::BadCompletion(e.to_string()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::BadCompletion("no choices".into()))?;
    let finish_reason = choice
        .get("finish_reason")
        .and_then(|f| f.as_str())
        .unwrap_or("stop")
        .to_string();
    let text = choice
        .pointer("/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| GatewayError::BadCompletion("no message content".into()))?
        .to_string();
    let usage = value.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok(ChatResponse {
        text,
        finish_reason,
        usage,
    })
}

#[cfg(test)]
pub(crate) mod testing {
    //! Transports and backends shared by the crate's tests.

    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Proves zero network use: any call panics.
    pub struct PanicTransport;

    impl Transport for PanicTransport {
        fn post_json(
            &self,
            _url: &str,
            _bearer: Option<&str>,
            _body: &serde_json::Value,
        ) -> Result<TransportReply, String> {
            panic!("network transport used where none was expected");
        }
    }

    /// Returns canned chat-completion bodies by matching substrings of the
    /// outgoing user text; counts calls and keeps a transcript.
    pub struct ScriptedTransport {
        pub rules: Vec<(Vec<String>, String)>,
        pub calls: AtomicUsize,
        pub statuses: Mutex<Vec<u16>>,
        pub transcript: Mutex<Vec<String>>,
    }

    impl ScriptedTransport {
        pub fn new(rules: Vec<(Vec<&str>, &str)>) -> Self {
            ScriptedTransport {
                rules: rules
                    .into_iter()
                    .map(|(needles, text)| {
                        (
                            needles.into_iter().map(str::to_string).collect(),
                            text.to_string(),
                        )
                    })
                    .collect(),
                calls: AtomicUsize::new(0),
                statuses: Mutex::new(Vec::new()),
                transcript: Mutex::new(Vec::new()),
            }
        }

        /// Always answer with `text` regardless of the request.
        pub fn always(text: &str) -> Self {
            Self::new(vec![(vec![], text)])
        }

        /// Fail with the queued statuses first, then answer normally.
        pub fn with_statuses(mut self, statuses: Vec<u16>) -> Self {
            self.statuses = Mutex::new(statuses);
            self
        }

        pub fn call_count(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }

        /// User prompts seen so far, in call order.
        pub fn seen_prompts(&self) -> Vec<String> {
            self.transcript.lock().unwrap().clone()
        }
    }

    impl Transport for ScriptedTransport {
        fn post_json(
            &self,
            _url: &str,
            _bearer: Option<&str>,
            body: &serde_json::Value,
        ) -> Result<TransportReply, String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            {
                let mut statuses = self.statuses.lock().unwrap();
                if !statuses.is_empty() {
                    let status = statuses.remove(0);
                    return Ok(TransportReply {
                        status,
                        body: "busy".into(),
                    });
                }
            }
            let user = body["messages"][1]["content"].as_str().unwrap_or_default();
            self.transcript.lock().unwrap().push(user.to_string());
            for (needles, text) in &self.rules {
                if needles.iter().all(|n| user.contains(n)) {
                    return Ok(TransportReply {
                        status: 200,
                        body: serde_json::json!({
                            "choices": [{
                                "message": {"role": "assistant", "content": text},
                                "finish_reason": "stop"
                            }],
                            "usage": {"prompt_tokens": 10, "completion_tokens": 20}
                        })
                        .to_string(),
                    });
                }
            }
            Err(format!(
                "no scripted rule matches request: {}",
                &user[..user.len().min(120)]
            ))
        }
    }

    pub fn endpoint() -> EndpointConfig {
        EndpointConfig {
            base_url: "http://localhost:0".into(),
            api_key: Some("test-key".into()),
        }
    }

    pub fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            retries: 3,
            backoff_ms: 1,
        }
    }

    pub fn request(user: &str) -> ChatRequest {
        ChatRequest {
            model: "test-model".into(),
            system: "sys".into(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: None,
            label: "test".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn replay_serves_fixture_with_zero_network() {
        let dir = tempfile::tempdir().unwrap();
        let req = request("hello");
        let key = cache_key(&req);
        let resp = ChatResponse {
            text: "fixture text".into(),
            finish_reason: "stop".into(),
            usage: None,
        };
        std::fs::write(
            dir.path().join(format!("{key}.txt")),
            render_fixture(&key, &req, &resp),
        )
        .unwrap();

        let backend = Backend::replay(dir.path(), ModelParams::default())
            .with_transport(Arc::new(PanicTransport));
        let got = backend.complete(&req).unwrap();
        assert_eq!(got.text, "fixture text");
        assert_eq!(got.usage, None);
    }

    #[test]
    fn replay_miss_reports_key_and_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let backend = Backend::replay(dir.path(), ModelParams::default());
        let req = request("absent");
        match backend.complete(&req).unwrap_err() {
            GatewayError::ReplayMiss { prompt, key } => {
                assert_eq!(prompt, "test");
                assert_eq!(key, cache_key(&req));
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn record_then_replay_round_trips_text() {
        let dir = tempfile::tempdir().unwrap();
        let transport = Arc::new(ScriptedTransport::always("recorded answer"));
        let backend = Backend::record(endpoint(), dir.path(), ModelParams::default())
            .with_transport(transport.clone());
        let req = request("question");
        let live = backend.complete(&req).unwrap();
        assert_eq!(live.text, "recorded answer");
        assert_eq!(transport.call_count(), 1);

        let replay = Backend::replay(dir.path(), ModelParams::default())
            .with_transport(Arc::new(PanicTransport));
        let replayed = replay.complete(&req).unwrap();
        assert_eq!(replayed.text, live.text);
    }

    #[test]
    fn memo_dedupes_identical_requests_within_a_run() {
        let dir = tempfile::tempdir().unwrap();
        let transport = Arc::new(ScriptedTransport::always("answer"));
        let backend = Backend::record(endpoint(), dir.path(), ModelParams::default())
            .with_transport(transport.clone());
        let req = request("same");
        backend.complete(&req).unwrap();
        backend.complete(&req).unwrap();
        assert_eq!(transport.call_count(), 1);
    }

    #[test]
    fn retries_on_429_then_succeeds() {
        let transport =
            Arc::new(ScriptedTransport::always("ok").with_statuses(vec![429, 500]));
        let backend = Backend::live(endpoint(), ModelParams::default())
            .with_transport(transport.clone())
            .with_retry(fast_retry());
        let got = backend.complete(&request("q")).unwrap();
        assert_eq!(got.text, "ok");
        assert_eq!(transport.call_count(), 3);
    }

    #[test]
    fn gives_up_after_retry_budget() {
        let transport =
            Arc::new(ScriptedTransport::always("ok").with_statuses(vec![500, 500, 500, 500, 500]));
        let backend = Backend::live(endpoint(), ModelParams::default())
            .with_transport(transport)
            .with_retry(fast_retry());
        match backend.complete(&request("q")).unwrap_err() {
            GatewayError::Network { attempts, .. } => assert_eq!(attempts, 4),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn non_retryable_status_is_an_endpoint_error() {
        let transport = Arc::new(ScriptedTransport::always("ok").with_statuses(vec![401]));
        let backend = Backend::live(endpoint(), ModelParams::default())
            .with_transport(transport.clone())
            .with_retry(fast_retry());
        assert!(matches!(
            backend.complete(&request("q")),
            Err(GatewayError::Endpoint { status: 401, .. })
        ));
        assert_eq!(transport.call_count(), 1);
    }

    #[test]
    fn cache_key_changes_with_every_field() {
        let base = request("user text");
        let mut by_model = base.clone();
        by_model.model = "other-model".into();
        let mut by_system = base.clone();
        by_system.system = "sys2".into();
        let mut by_user = base.clone();
        by_user.user = "user text!".into();
        let mut by_temp = base.clone();
        by_temp.temperature = 0.5;
        let keys = [
            cache_key(&base),
            cache_key(&by_model),
            cache_key(&by_system),
            cache_key(&by_user),
            cache_key(&by_temp),
        ];
        for (i, a) in keys.iter().enumerate() {
            for b in keys.iter().skip(i + 1) {
                assert_ne!(a, b);
            }
        }
        // Label is diagnostics only.
        let mut by_label = base.clone();
        by_label.label = "different".into();
        assert_eq!(cache_key(&base), cache_key(&by_label));
    }

    #[test]
    fn record_then_replay_round_trips_arbitrary_text() {
        use proptest::prelude::*;
        let mut runner = proptest::test_runner::TestRunner::new(
            proptest::test_runner::Config {
                cases: 64,
                ..Default::default()
            },
        );
        runner
            .run(&("\\PC{0,200}", "[a-z]{1,20}"), |(text, user)| {
                let dir = tempfile::tempdir().unwrap();
                let req = request(&user);
                let resp = ChatResponse {
                    text: text.clone(),
                    finish_reason: "stop".into(),
                    usage: None,
                };
                let key = cache_key(&req);
                std::fs::write(
                    dir.path().join(format!("{key}.txt")),
                    render_fixture(&key, &req, &resp),
                )
                .unwrap();
                let backend = Backend::replay(dir.path(), ModelParams::default())
                    .with_transport(Arc::new(PanicTransport));
                let got = backend.complete(&req).unwrap();
                prop_assert_eq!(got.text, text);
                Ok(())
            })
            .unwrap();
    }

    #[test]
    fn fixture_text_round_trips_verbatim() {
        let req = request("q");
        let resp = ChatResponse {
            text: "line one\n---\nline two with fence-ish content\n".into(),
            finish_reason: "length".into(),
            usage: None,
        };
        let raw = render_fixture(&cache_key(&req), &req, &resp);
        let parsed = parse_fixture(&raw).unwrap();
        assert_eq!(parsed.text, resp.text);
        assert_eq!(parsed.finish_reason, "length");
    }

    #[test]
    fn completion_parsing_reads_usage() {
        let body = serde_json::json!({
            "choices": [{"message": {"content": "hi"}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 5, "completion_tokens": 7}
        })
        .to_string();
        let resp = parse_completion(&body).unwrap();
        assert_eq!(resp.text, "hi");
        assert_eq!(
            resp.usage,
            Some(TokenUsage {
                prompt_tokens: 5,
                completion_tokens: 7
            })
        );
        assert!(parse_completion("{}").is_err());
    }
}
