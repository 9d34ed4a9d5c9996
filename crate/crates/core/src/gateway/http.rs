//! Live chat-completions gateway over HTTP.
//!
//! All three roles (target, moderation, embedding — plus the optional judge)
//! speak OpenAI-compatible JSON. The wire layer is behind [`HttpTransport`]
//! so tests can script statuses and bodies without a server; retry, backoff,
//! parallelism limiting, parsing, and transcripts all live here and are
//! exercised against fake transports.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    render_user_content, sha256_hex, truncate_chars, GatewayReply, GatewayTranscript, ModelGateway,
    Role, TokenProbs, VerdictTokens, DEFAULT_MAX_INPUT_CHARS,
};
use crate::error::{Error, GatewayError, Result};

/// One endpoint a role talks to. `auth_env` names an environment variable
/// holding the bearer token — configuration never contains the secret
/// itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    /// URL path; defaults to the conventional path for the role.
    #[serde(default)]
    pub path: Option<String>,
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_parallelism() -> usize {
    4
}
fn default_max_tokens() -> u32 {
    512
}
fn default_top_logprobs() -> u32 {
    5
}
fn default_max_input_chars() -> usize {
    DEFAULT_MAX_INPUT_CHARS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpGatewayConfig {
    pub target: EndpointConfig,
    pub moderation: EndpointConfig,
    pub embedding: EndpointConfig,
    #[serde(default)]
    pub judge: Option<EndpointConfig>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Retries after the first attempt, for transport failures and 5xx.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles per subsequent retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Maximum in-flight HTTP requests across all threads.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    /// Moderation and embedding inputs are truncated to this many characters.
    #[serde(default = "default_max_input_chars")]
    pub max_input_chars: usize,
    #[serde(default)]
    pub verdict_tokens: VerdictTokens,
    /// Expected embedding dimension; when unset, the first reply pins it.
    #[serde(default)]
    pub embedding_dim: Option<usize>,
}

/// Minimal synchronous HTTP POST abstraction. Errors are transport-level
/// (connection refused, timeout); any received status is an `Ok`.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> std::result::Result<HttpResponse, String>;
}

pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Production transport backed by a blocking reqwest client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("building HTTP client: {e}")))?;
        Ok(ReqwestTransport { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> std::result::Result<HttpResponse, String> {
        let mut request = self.client.post(url).json(body);
        for (name, value) in headers {
            request = request.header(name, value);
        }
        let response = request.send().map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// Counting semaphore bounding concurrent outbound requests.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

struct ResolvedEndpoint {
    url: String,
    model: String,
    auth_header: Option<String>,
}

fn resolve(endpoint: &EndpointConfig, default_path: &str) -> Result<ResolvedEndpoint> {
    let auth_header = match &endpoint.auth_env {
        Some(var) => {
            let token = std::env::var(var).map_err(|_| {
                Error::Config(format!(
                    "auth environment variable {var} is not set (only variable names belong in config)"
                ))
            })?;
            Some(format!("Bearer {token}"))
        }
        None => None,
    };
    let path = endpoint.path.as_deref().unwrap_or(default_path);
    Ok(ResolvedEndpoint {
        url: format!(
            "{}/{}",
            endpoint.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        ),
        model: endpoint.model.clone(),
        auth_header,
    })
}

/// Live gateway: one endpoint per role, shared retry/backoff policy, a
/// global in-flight request bound, and a transcript per successful call.
pub struct HttpGateway {
    cfg: HttpGatewayConfig,
    transport: Box<dyn HttpTransport>,
    endpoints: HashMap<Role, ResolvedEndpoint>,
    semaphore: Semaphore,
    ledger: Mutex<Vec<GatewayTranscript>>,
    embedding_dim_seen: Mutex<Option<usize>>,
    moderation_template: String,
    judge_template: String,
}

impl HttpGateway {
    pub fn new(cfg: HttpGatewayConfig) -> Result<Self> {
        let transport = Box::new(ReqwestTransport::new(Duration::from_millis(
            cfg.timeout_ms,
        ))?);
        Self::with_transport(cfg, transport)
    }

    /// True when a judge endpoint is configured.
    pub fn has_judge(&self) -> bool {
        self.cfg.judge.is_some()
    }

    /// Injects a transport (tests script statuses/bodies through this).
    pub fn with_transport(
        cfg: HttpGatewayConfig,
        transport: Box<dyn HttpTransport>,
    ) -> Result<Self> {
        if cfg.parallelism == 0 {
            return Err(Error::Config(
                "gateway parallelism must be at least 1".into(),
            ));
        }
        if cfg.top_logprobs < 2 {
            return Err(Error::Config(
                "top_logprobs must be at least 2 to observe both verdict tokens".into(),
            ));
        }
        let mut endpoints = HashMap::new();
        endpoints.insert(Role::Target, resolve(&cfg.target, "v1/chat/completions")?);
        endpoints.insert(
            Role::Moderation,
            resolve(&cfg.moderation, "v1/chat/completions")?,
        );
        endpoints.insert(Role::Embedding, resolve(&cfg.embedding, "v1/embeddings")?);
        if let Some(judge) = &cfg.judge {
            endpoints.insert(Role::Judge, resolve(judge, "v1/chat/completions")?);
        }
        let semaphore = Semaphore::new(cfg.parallelism);
        Ok(HttpGateway {
            cfg,
            transport,
            endpoints,
            semaphore,
            ledger: Mutex::new(Vec::new()),
            embedding_dim_seen: Mutex::new(None),
            moderation_template: include_str!("../data/moderation_template.txt").to_string(),
            judge_template: include_str!("../data/judge_template.txt").to_string(),
        })
    }

    fn endpoint(&self, role: Role) -> std::result::Result<&ResolvedEndpoint, GatewayError> {
        self.endpoints
            .get(&role)
            .ok_or_else(|| GatewayError::Capability(format!("no endpoint configured for {role:?}")))
    }

    /// Sends one JSON request with retry/backoff under the concurrency
    /// bound; returns the parsed response and a transcript (not yet in the
    /// ledger). Transport failures and 5xx are retried with exponential
    /// backoff; other statuses are terminal.
    fn execute(
        &self,
        role: Role,
        body: &Value,
        truncated: bool,
    ) -> std::result::Result<(Value, GatewayTranscript), GatewayError> {
        let endpoint = self.endpoint(role)?;
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(auth) = &endpoint.auth_header {
            headers.push(("Authorization".to_string(), auth.clone()));
        }
        let request_text = body.to_string();
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            let outcome = {
                let _permit = self.semaphore.acquire();
                self.transport.post_json(&endpoint.url, &headers, body)
            };
            let retryable_failure = match outcome {
                Ok(response) if (200..300).contains(&response.status) => {
                    let parsed: Value = serde_json::from_str(&response.body).map_err(|e| {
                        GatewayError::Malformed(format!("{role:?} response is not JSON: {e}"))
                    })?;
                    let transcript = GatewayTranscript {
                        role,
                        request_sha256: sha256_hex(&request_text),
                        response_sha256: sha256_hex(&response.body),
                        latency_ms: started.elapsed().as_millis() as u64,
                        retries: attempt,
                        truncated,
                        note: None,
                    };
                    return Ok((parsed, transcript));
                }
                Ok(response) if response.status >= 500 => GatewayError::Status {
                    status: response.status,
                    body_sha256: sha256_hex(&response.body),
                },
                Ok(response) => {
                    return Err(GatewayError::Status {
                        status: response.status,
                        body_sha256: sha256_hex(&response.body),
                    })
                }
                Err(message) => GatewayError::Transport {
                    message,
                    retries: attempt,
                },
            };
            if attempt >= self.cfg.max_retries {
                return Err(retryable_failure);
            }
            std::thread::sleep(Duration::from_millis(
                self.cfg.backoff_ms.saturating_mul(1 << attempt.min(16)),
            ));
            attempt += 1;
        }
    }

    fn record(&self, transcript: GatewayTranscript) {
        self.ledger
            .lock()
            .expect("ledger poisoned")
            .push(transcript);
    }

    fn chat_body(&self, endpoint: &ResolvedEndpoint, content: &str, logprobs: bool) -> Value {
        let mut body = json!({
            "model": endpoint.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.cfg.temperature,
            "max_tokens": if logprobs { 1 } else { self.cfg.max_tokens },
        });
        if logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(self.cfg.top_logprobs);
        }
        body
    }

    /// Scores `response` against `question` on the configured judge
    /// endpoint's 1–10 rubric.
    pub fn judge_score(
        &self,
        question: &str,
        response: &str,
    ) -> std::result::Result<GatewayReply<u8>, GatewayError> {
        let endpoint = self.endpoint(Role::Judge)?;
        let content = self
            .judge_template
            .replace("{question}", question)
            .replace("{response}", response);
        let body = self.chat_body(endpoint, &content, false);
        let (parsed, transcript) = self.execute(Role::Judge, &body, false)?;
        let text = completion_text(&parsed)?;
        let digits: String = text
            .chars()
            .skip_while(|c| !c.is_ascii_digit())
            .take_while(|c| c.is_ascii_digit())
            .collect();
        let score: u8 = digits.parse().map_err(|_| {
            GatewayError::Malformed(format!("judge reply has no integer: {text:?}"))
        })?;
        if !(1..=10).contains(&score) {
            return Err(GatewayError::Malformed(format!(
                "judge score {score} outside 1..=10"
            )));
        }
        self.record(transcript.clone());
        Ok(GatewayReply {
            value: score,
            transcript,
        })
    }
}

/// Extracts `choices[0].message.content` from a chat-completion response.
fn completion_text(parsed: &Value) -> std::result::Result<String, GatewayError> {
    parsed["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| {
            GatewayError::Malformed("chat response missing choices[0].message.content".into())
        })
}

impl ModelGateway for HttpGateway {
    fn target_complete(
        &self,
        prompt: &str,
        question: &str,
    ) -> std::result::Result<GatewayReply<String>, GatewayError> {
        let endpoint = self.endpoint(Role::Target)?;
        let content = render_user_content(prompt, question);
        let body = self.chat_body(endpoint, &content, false);
        let (parsed, transcript) = self.execute(Role::Target, &body, false)?;
        let value = completion_text(&parsed)?;
        self.record(transcript.clone());
        Ok(GatewayReply { value, transcript })
    }

    fn moderation_logprobs(
        &self,
        content: &str,
    ) -> std::result::Result<GatewayReply<TokenProbs>, GatewayError> {
        let endpoint = self.endpoint(Role::Moderation)?;
        let (clipped, truncated) = truncate_chars(content, self.cfg.max_input_chars);
        let templated = self.moderation_template.replace("{content}", &clipped);
        let body = self.chat_body(endpoint, &templated, true);
        let (parsed, transcript) = self.execute(Role::Moderation, &body, truncated)?;
        let top = &parsed["choices"][0]["logprobs"]["content"][0]["top_logprobs"];
        let entries = top.as_array().ok_or_else(|| {
            GatewayError::Capability(
                "moderation endpoint did not return token logprobs; it cannot serve as a verdict model"
                    .into(),
            )
        })?;
        let mut pairs = Vec::with_capacity(entries.len());
        for entry in entries {
            let token = entry["token"]
                .as_str()
                .ok_or_else(|| GatewayError::Malformed("logprob entry missing token".into()))?;
            let logprob = entry["logprob"]
                .as_f64()
                .ok_or_else(|| GatewayError::Malformed("logprob entry missing logprob".into()))?;
            pairs.push((token.to_string(), logprob.exp()));
        }
        let probs = TokenProbs::new(pairs)?;
        let verdicts = self.verdict_tokens();
        if probs.probability(&verdicts.safe).is_none()
            && probs.probability(&verdicts.unsafe_).is_none()
        {
            return Err(GatewayError::Capability(format!(
                "neither verdict token ({:?}/{:?}) appears among the top {} tokens",
                verdicts.safe, verdicts.unsafe_, self.cfg.top_logprobs
            )));
        }
        self.record(transcript.clone());
        Ok(GatewayReply {
            value: probs,
            transcript,
        })
    }

    fn embed(&self, text: &str) -> std::result::Result<GatewayReply<Vec<f64>>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "cannot embed empty or whitespace-only text".into(),
            ));
        }
        let endpoint = self.endpoint(Role::Embedding)?;
        let (clipped, truncated) = truncate_chars(text, self.cfg.max_input_chars);
        let body = json!({ "model": endpoint.model, "input": clipped });
        let (parsed, transcript) = self.execute(Role::Embedding, &body, truncated)?;
        let raw = parsed["data"][0]["embedding"].as_array().ok_or_else(|| {
            GatewayError::Malformed("embedding response missing data[0].embedding".into())
        })?;
        let mut vector = Vec::with_capacity(raw.len());
        for item in raw {
            vector.push(item.as_f64().ok_or_else(|| {
                GatewayError::Malformed("embedding contains a non-numeric entry".into())
            })?);
        }
        let mut seen = self.embedding_dim_seen.lock().expect("dim lock poisoned");
        let expected = self.cfg.embedding_dim.or(*seen);
        if let Some(expected) = expected {
            if vector.len() != expected {
                return Err(GatewayError::Integrity(format!(
                    "embedding dimension changed from {expected} to {}",
                    vector.len()
                )));
            }
        }
        *seen = Some(vector.len());
        drop(seen);
        self.record(transcript.clone());
        Ok(GatewayReply {
            value: vector,
            transcript,
        })
    }

    fn verdict_tokens(&self) -> VerdictTokens {
        self.cfg.verdict_tokens.clone()
    }

    fn ledger(&self) -> Vec<GatewayTranscript> {
        self.ledger.lock().expect("ledger poisoned").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Scripted transport: pops one canned step per call (default OK chat
    /// reply once the script runs dry) and tracks call concurrency.
    /// (url, headers, body) of the most recent request.
    type RecordedRequest = (String, Vec<(String, String)>, Value);

    struct FakeTransport {
        script: Mutex<Vec<std::result::Result<(u16, String), String>>>,
        calls: AtomicUsize,
        in_flight: AtomicUsize,
        max_in_flight: AtomicUsize,
        delay: Duration,
        last_request: Mutex<Option<RecordedRequest>>,
    }

    impl FakeTransport {
        fn new(mut script: Vec<std::result::Result<(u16, String), String>>) -> Self {
            script.reverse();
            FakeTransport {
                script: Mutex::new(script),
                calls: AtomicUsize::new(0),
                in_flight: AtomicUsize::new(0),
                max_in_flight: AtomicUsize::new(0),
                delay: Duration::ZERO,
                last_request: Mutex::new(None),
            }
        }
    }

    impl HttpTransport for FakeTransport {
        fn post_json(
            &self,
            url: &str,
            headers: &[(String, String)],
            body: &Value,
        ) -> std::result::Result<HttpResponse, String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.max_in_flight.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(self.delay);
            *self.last_request.lock().unwrap() =
                Some((url.to_string(), headers.to_vec(), body.clone()));
            let step = self
                .script
                .lock()
                .unwrap()
                .pop()
                .unwrap_or(Ok((200, default_chat_body("ok"))));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            step.map(|(status, body)| HttpResponse { status, body })
        }
    }

    /// Hands the gateway a boxed transport while the test keeps a handle.
    struct Shared(Arc<FakeTransport>);

    impl HttpTransport for Shared {
        fn post_json(
            &self,
            url: &str,
            headers: &[(String, String)],
            body: &Value,
        ) -> std::result::Result<HttpResponse, String> {
            self.0.post_json(url, headers, body)
        }
    }

    fn default_chat_body(content: &str) -> String {
        json!({"choices": [{"message": {"content": content}}]}).to_string()
    }

    fn moderation_body(entries: &[(&str, f64)]) -> String {
        let top: Vec<Value> = entries
            .iter()
            .map(|(token, logprob)| json!({"token": token, "logprob": logprob}))
            .collect();
        json!({"choices": [{"logprobs": {"content": [{"top_logprobs": top}]}}]}).to_string()
    }

    fn embedding_body(vector: &[f64]) -> String {
        json!({"data": [{"embedding": vector}]}).to_string()
    }

    fn config() -> HttpGatewayConfig {
        let endpoint = |model: &str| EndpointConfig {
            base_url: "http://localhost:9".into(),
            path: None,
            model: model.into(),
            auth_env: None,
        };
        HttpGatewayConfig {
            target: endpoint("target"),
            moderation: endpoint("moderation"),
            embedding: endpoint("embedding"),
            judge: Some(endpoint("judge")),
            timeout_ms: 1000,
            max_retries: 2,
            backoff_ms: 1,
            parallelism: 4,
            temperature: 0.0,
            max_tokens: 64,
            top_logprobs: 5,
            max_input_chars: 4000,
            verdict_tokens: VerdictTokens::default(),
            embedding_dim: None,
        }
    }

    fn gateway(script: Vec<std::result::Result<(u16, String), String>>) -> HttpGateway {
        HttpGateway::with_transport(config(), Box::new(FakeTransport::new(script))).unwrap()
    }

    #[test]
    fn transport_failure_is_retried_then_succeeds() {
        let gw = gateway(vec![
            Err("connection refused".into()),
            Ok((200, default_chat_body("recovered"))),
        ]);
        let reply = gw.target_complete("Prompt.", "Question?").unwrap();
        assert_eq!(reply.value, "recovered");
        assert_eq!(reply.transcript.retries, 1);
    }

    #[test]
    fn server_errors_retry_but_client_errors_do_not() {
        let gw = gateway(vec![
            Ok((500, "oops".into())),
            Ok((503, "busy".into())),
            Ok((200, default_chat_body("third time"))),
        ]);
        assert_eq!(gw.target_complete("P.", "Q?").unwrap().value, "third time");

        let gw = gateway(vec![
            Ok((404, "missing".into())),
            Ok((200, default_chat_body("never"))),
        ]);
        let err = gw.target_complete("P.", "Q?").unwrap_err();
        match err {
            GatewayError::Status { status, .. } => assert_eq!(status, 404),
            other => panic!("expected terminal status error, got {other:?}"),
        }
    }

    #[test]
    fn retries_exhausted_surfaces_transport_error() {
        let gw = gateway(vec![
            Err("refused".into()),
            Err("refused".into()),
            Err("refused".into()),
        ]);
        let err = gw.target_complete("P.", "Q?").unwrap_err();
        match err {
            GatewayError::Transport { retries, .. } => assert_eq!(retries, 2),
            other => panic!("expected transport error, got {other:?}"),
        }
        assert!(err.is_retryable());
    }

    #[test]
    fn parallelism_bound_is_enforced() {
        let mut probe = FakeTransport::new(Vec::new());
        probe.delay = Duration::from_millis(5);
        let probe = Arc::new(probe);
        let mut cfg = config();
        cfg.parallelism = 3;
        let gw = Arc::new(
            HttpGateway::with_transport(cfg, Box::new(Shared(Arc::clone(&probe)))).unwrap(),
        );
        let handles: Vec<_> = (0..24)
            .map(|i| {
                let gw = Arc::clone(&gw);
                std::thread::spawn(move || gw.target_complete(&format!("P{i}."), "Q?").unwrap())
            })
            .collect();
        for handle in handles {
            handle.join().unwrap();
        }
        assert_eq!(probe.calls.load(Ordering::SeqCst), 24);
        assert!(
            probe.max_in_flight.load(Ordering::SeqCst) <= 3,
            "semaphore allowed {} concurrent requests",
            probe.max_in_flight.load(Ordering::SeqCst)
        );
    }

    #[test]
    fn moderation_parses_logprobs_into_probabilities() {
        let gw = gateway(vec![Ok((
            200,
            moderation_body(&[("safe", (0.5_f64).ln()), ("unsafe", (0.4_f64).ln())]),
        ))]);
        let reply = gw.moderation_logprobs("some material").unwrap();
        assert!((reply.value.probability("safe").unwrap() - 0.5).abs() < 1e-12);
        assert!((reply.value.probability("unsafe").unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn moderation_without_logprobs_is_a_capability_error() {
        let gw = gateway(vec![Ok((200, default_chat_body("safe")))]);
        let err = gw.moderation_logprobs("material").unwrap_err();
        assert!(err.is_capability(), "got {err:?}");
    }

    #[test]
    fn moderation_without_verdict_tokens_is_a_capability_error() {
        let gw = gateway(vec![Ok((
            200,
            moderation_body(&[("yes", (0.6_f64).ln()), ("no", (0.3_f64).ln())]),
        ))]);
        let err = gw.moderation_logprobs("material").unwrap_err();
        assert!(err.is_capability(), "got {err:?}");
    }

    #[test]
    fn embedding_dimension_drift_is_an_integrity_error() {
        let gw = gateway(vec![
            Ok((200, embedding_body(&[1.0, 0.0, 0.0]))),
            Ok((200, embedding_body(&[1.0, 0.0]))),
        ]);
        assert_eq!(gw.embed("first").unwrap().value.len(), 3);
        let err = gw.embed("second").unwrap_err();
        match err {
            GatewayError::Integrity(_) => {}
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn empty_embed_text_is_rejected_before_any_call() {
        let gw = gateway(vec![]);
        let err = gw.embed("   ").unwrap_err();
        match err {
            GatewayError::InvalidRequest(_) => {}
            other => panic!("expected invalid-request error, got {other:?}"),
        }
    }

    #[test]
    fn auth_header_comes_from_named_env_var() {
        let var = "PROMEA_TEST_AUTH_TOKEN_A";
        std::env::set_var(var, "sekrit");
        let mut cfg = config();
        cfg.target.auth_env = Some(var.into());
        let transport = Arc::new(FakeTransport::new(vec![Ok((
            200,
            default_chat_body("hello"),
        ))]));
        let gw =
            HttpGateway::with_transport(cfg, Box::new(Shared(Arc::clone(&transport)))).unwrap();
        gw.target_complete("P.", "Q?").unwrap();
        let (url, headers, body) = transport.last_request.lock().unwrap().clone().unwrap();
        assert_eq!(url, "http://localhost:9/v1/chat/completions");
        assert!(headers
            .iter()
            .any(|(name, value)| name == "Authorization" && value == "Bearer sekrit"));
        assert_eq!(body["messages"][0]["content"], json!("P.\n\nQ?"));
    }

    #[test]
    fn missing_auth_env_var_fails_at_construction() {
        let mut cfg = config();
        cfg.target.auth_env = Some("PROMEA_TEST_AUTH_TOKEN_UNSET".into());
        let err = HttpGateway::with_transport(cfg, Box::new(FakeTransport::new(vec![])))
            .err()
            .expect("construction must fail");
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn judge_parses_integer_scores_only() {
        let gw = gateway(vec![Ok((200, default_chat_body("7")))]);
        assert_eq!(gw.judge_score("Q?", "R").unwrap().value, 7);

        let gw = gateway(vec![Ok((200, default_chat_body("Score: 10/10")))]);
        assert_eq!(gw.judge_score("Q?", "R").unwrap().value, 10);

        let gw = gateway(vec![Ok((200, default_chat_body("ten")))]);
        assert!(matches!(
            gw.judge_score("Q?", "R").unwrap_err(),
            GatewayError::Malformed(_)
        ));

        let gw = gateway(vec![Ok((200, default_chat_body("0")))]);
        assert!(matches!(
            gw.judge_score("Q?", "R").unwrap_err(),
            GatewayError::Malformed(_)
        ));
    }

    #[test]
    fn ledger_records_successful_calls_in_order() {
        let gw = gateway(vec![
            Ok((200, default_chat_body("r"))),
            Ok((200, moderation_body(&[("safe", (0.9_f64).ln())]))),
            Ok((200, embedding_body(&[0.5, 0.5]))),
        ]);
        gw.target_complete("P.", "Q?").unwrap();
        gw.moderation_logprobs("material").unwrap();
        gw.embed("material").unwrap();
        let roles: Vec<Role> = gw.ledger().iter().map(|t| t.role).collect();
        assert_eq!(roles, vec![Role::Target, Role::Moderation, Role::Embedding]);
    }
}
