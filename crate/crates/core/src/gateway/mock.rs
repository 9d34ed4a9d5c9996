//! Deterministic mock gateway.
//!
//! Lookups consult an optional fixture file first (exact canned replies keyed
//! by content digest). On a miss the gateway either fails (`strict`) or falls
//! back to procedural synthesis: pure functions of the request text, so runs
//! are bit-reproducible without any fixture authoring:
//!
//! - completions echo the user content, complying only when the content's
//!   trigger-word density clears a threshold (refusing otherwise),
//! - moderation probability of the unsafe verdict rises linearly with
//!   trigger-word density,
//! - embeddings come from a signed bag-of-words hasher.
//!
//! A `fail_target_calls_after` knob injects transport failures on later
//! target calls, which lets tests exercise retry exhaustion and resumable
//! interruption without a network.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    render_user_content, sha256_hex, truncate_chars, GatewayReply, GatewayTranscript, ModelGateway,
    Role, TokenProbs, VerdictTokens, DEFAULT_MAX_INPUT_CHARS,
};
use crate::error::GatewayError;

/// Built-in trigger-word list used by the procedural moderation model and by
/// the text-proxy synthetic objectives when the run config does not override
/// it. All words are mundane; the mock cares only about density.
pub const DEFAULT_TRIGGER_WORDS: &[&str] = &[
    "detailed",
    "specific",
    "exact",
    "complete",
    "technical",
    "thorough",
    "comprehensive",
    "explicit",
    "precise",
    "stepwise",
];

/// Tuning for the procedural mock behavior.
#[derive(Debug, Clone)]
pub struct MockConfig {
    pub embedding_dim: usize,
    /// Lowercase trigger words driving moderation density.
    pub trigger_words: Vec<String>,
    /// Trigger density at which the mock target complies instead of refusing.
    pub compliance_threshold: f64,
    /// Moderation probability model: clamp(base + slope * density, base, cap).
    pub moderation_base: f64,
    pub moderation_slope: f64,
    pub moderation_cap: f64,
    /// Character budget for moderation/embedding inputs.
    pub max_input_chars: usize,
    pub verdict_tokens: VerdictTokens,
    /// Fixture-only mode: a lookup miss is an error instead of procedural.
    pub strict: bool,
    /// Inject a transport failure on every target call after this many.
    pub fail_target_calls_after: Option<u64>,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            embedding_dim: 32,
            trigger_words: DEFAULT_TRIGGER_WORDS
                .iter()
                .map(|w| w.to_string())
                .collect(),
            compliance_threshold: 0.12,
            moderation_base: 0.02,
            moderation_slope: 1.8,
            moderation_cap: 0.98,
            max_input_chars: DEFAULT_MAX_INPUT_CHARS,
            verdict_tokens: VerdictTokens::default(),
            strict: false,
            fail_target_calls_after: None,
        }
    }
}

/// On-disk fixture schema: three maps keyed by lowercase hex SHA-256 digests
/// of the exact request strings (after truncation, before any templating).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default)]
    pub completions: Vec<CompletionFixture>,
    #[serde(default)]
    pub moderation: Vec<ModerationFixture>,
    #[serde(default)]
    pub embeddings: Vec<EmbeddingFixture>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionFixture {
    /// Digest of the rendered prompt (placeholder not yet substituted).
    pub prompt_digest: String,
    pub question: String,
    pub response: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModerationFixture {
    /// Digest of the moderation content (mode-joined question/response).
    pub input_digest: String,
    pub probs: HashMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingFixture {
    pub text_digest: String,
    pub vector: Vec<f64>,
}

impl Fixture {
    pub fn from_path(path: &Path) -> Result<Fixture, GatewayError> {
        let bytes = std::fs::read(path).map_err(|e| {
            GatewayError::InvalidRequest(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::Malformed(format!("fixture {}: {e}", path.display())))
    }

    /// Registers a canned completion for (rendered prompt, question). The
    /// prompt is digested here; pass it exactly as the engine renders it.
    pub fn add_completion(&mut self, prompt: &str, question: &str, response: &str) {
        self.completions.push(CompletionFixture {
            prompt_digest: sha256_hex(prompt),
            question: question.to_string(),
            response: response.to_string(),
        });
    }

    /// Registers canned verdict probabilities for moderation `content` (the
    /// text after truncation, before templating).
    pub fn add_moderation(&mut self, content: &str, probs: &[(&str, f64)]) {
        self.moderation.push(ModerationFixture {
            input_digest: sha256_hex(content),
            probs: probs.iter().map(|(t, p)| (t.to_string(), *p)).collect(),
        });
    }

    /// Registers a canned embedding for `text` (after truncation).
    pub fn add_embedding(&mut self, text: &str, vector: &[f64]) {
        self.embeddings.push(EmbeddingFixture {
            text_digest: sha256_hex(text),
            vector: vector.to_vec(),
        });
    }
}

/// Deterministic gateway for tests and desk-scale runs.
pub struct MockGateway {
    cfg: MockConfig,
    completions: HashMap<(String, String), String>,
    moderation: HashMap<String, HashMap<String, f64>>,
    embeddings: HashMap<String, Vec<f64>>,
    ledger: Mutex<Vec<GatewayTranscript>>,
    target_calls: AtomicU64,
}

impl MockGateway {
    pub fn new(cfg: MockConfig) -> Self {
        MockGateway {
            cfg,
            completions: HashMap::new(),
            moderation: HashMap::new(),
            embeddings: HashMap::new(),
            ledger: Mutex::new(Vec::new()),
            target_calls: AtomicU64::new(0),
        }
    }

    /// Procedural-only mock with default tuning.
    pub fn procedural() -> Self {
        MockGateway::new(MockConfig::default())
    }

    pub fn with_fixture(cfg: MockConfig, fixture: Fixture) -> Self {
        let mut gw = MockGateway::new(cfg);
        for c in fixture.completions {
            gw.completions
                .insert((c.prompt_digest, c.question), c.response);
        }
        for m in fixture.moderation {
            gw.moderation.insert(m.input_digest, m.probs);
        }
        for e in fixture.embeddings {
            gw.embeddings.insert(e.text_digest, e.vector);
        }
        gw
    }

    pub fn from_fixture_path(cfg: MockConfig, path: &Path) -> Result<Self, GatewayError> {
        Ok(MockGateway::with_fixture(cfg, Fixture::from_path(path)?))
    }

    pub fn config(&self) -> &MockConfig {
        &self.cfg
    }

    fn record(&self, transcript: GatewayTranscript) {
        self.ledger
            .lock()
            .expect("ledger poisoned")
            .push(transcript);
    }

    /// Fraction of whitespace-delimited words (punctuation-stripped,
    /// lowercased) that are trigger words.
    pub fn trigger_density(&self, text: &str) -> f64 {
        let mut total = 0usize;
        let mut hits = 0usize;
        for word in text.split_whitespace() {
            let core: String = word
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if core.is_empty() {
                continue;
            }
            total += 1;
            if self.cfg.trigger_words.iter().any(|t| t == &core) {
                hits += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }

    fn procedural_response(&self, content: &str) -> String {
        if self.trigger_density(content) >= self.cfg.compliance_threshold {
            format!("Sure, here is exactly what you asked for. {content}")
        } else {
            "I'm sorry, I cannot help with that request.".to_string()
        }
    }

    fn procedural_probs(&self, content: &str) -> Vec<(String, f64)> {
        let density = self.trigger_density(content);
        let p_unsafe = (self.cfg.moderation_base + self.cfg.moderation_slope * density)
            .clamp(self.cfg.moderation_base, self.cfg.moderation_cap);
        vec![
            (self.cfg.verdict_tokens.unsafe_.clone(), p_unsafe),
            (self.cfg.verdict_tokens.safe.clone(), 1.0 - p_unsafe),
        ]
    }

    /// Signed bag-of-words hashing embedder: deterministic, never zero.
    fn procedural_embedding(&self, text: &str) -> Vec<f64> {
        let dim = self.cfg.embedding_dim;
        let mut v = vec![0.0f64; dim];
        for word in text.split_whitespace() {
            let core: String = word
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if core.is_empty() {
                continue;
            }
            let digest = Sha256::digest(core.as_bytes());
            let idx = u64::from_be_bytes(digest[0..8].try_into().unwrap()) as usize % dim;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    }
}

impl ModelGateway for MockGateway {
    fn target_complete(
        &self,
        prompt: &str,
        question: &str,
    ) -> Result<GatewayReply<String>, GatewayError> {
        let calls_before = self.target_calls.fetch_add(1, Ordering::SeqCst);
        if let Some(limit) = self.cfg.fail_target_calls_after {
            if calls_before >= limit {
                return Err(GatewayError::Transport {
                    message: format!("injected fault after {limit} target calls"),
                    retries: 0,
                });
            }
        }
        let prompt_digest = sha256_hex(prompt);
        let response = match self
            .completions
            .get(&(prompt_digest.clone(), question.to_string()))
        {
            Some(canned) => canned.clone(),
            None if self.cfg.strict => {
                return Err(GatewayError::MissingFixture(format!(
                    "completion (prompt {prompt_digest}, question {question:?})"
                )))
            }
            None => self.procedural_response(&render_user_content(prompt, question)),
        };
        let transcript = GatewayTranscript {
            role: Role::Target,
            request_sha256: sha256_hex(format!("{prompt}\u{1}{question}")),
            response_sha256: sha256_hex(&response),
            latency_ms: 0,
            retries: 0,
            truncated: false,
            note: None,
        };
        self.record(transcript.clone());
        Ok(GatewayReply {
            value: response,
            transcript,
        })
    }

    fn moderation_logprobs(&self, content: &str) -> Result<GatewayReply<TokenProbs>, GatewayError> {
        let (content, truncated) = truncate_chars(content, self.cfg.max_input_chars);
        let input_digest = sha256_hex(content.as_ref());
        let pairs = match self.moderation.get(&input_digest) {
            Some(canned) => canned.iter().map(|(t, p)| (t.clone(), *p)).collect(),
            None if self.cfg.strict => {
                return Err(GatewayError::MissingFixture(format!(
                    "moderation input {input_digest}"
                )))
            }
            None => self.procedural_probs(&content),
        };
        let probs = TokenProbs::new(pairs)?;
        let tokens = self.verdict_tokens();
        if probs.probability(&tokens.safe).is_none() && probs.probability(&tokens.unsafe_).is_none()
        {
            return Err(GatewayError::Capability(format!(
                "moderation top-k contains neither verdict token ({:?}/{:?})",
                tokens.safe, tokens.unsafe_
            )));
        }
        let response_repr = serde_json::to_string(probs.pairs()).expect("probs serialize");
        let transcript = GatewayTranscript {
            role: Role::Moderation,
            request_sha256: input_digest,
            response_sha256: sha256_hex(&response_repr),
            latency_ms: 0,
            retries: 0,
            truncated,
            note: None,
        };
        self.record(transcript.clone());
        Ok(GatewayReply {
            value: probs,
            transcript,
        })
    }

    fn embed(&self, text: &str) -> Result<GatewayReply<Vec<f64>>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "cannot embed empty text".into(),
            ));
        }
        let (text, truncated) = truncate_chars(text, self.cfg.max_input_chars);
        let text_digest = sha256_hex(text.as_ref());
        let vector = match self.embeddings.get(&text_digest) {
            Some(canned) => {
                if canned.len() != self.cfg.embedding_dim {
                    return Err(GatewayError::Integrity(format!(
                        "fixture embedding dimension {} != configured {}",
                        canned.len(),
                        self.cfg.embedding_dim
                    )));
                }
                canned.clone()
            }
            None if self.cfg.strict => {
                return Err(GatewayError::MissingFixture(format!(
                    "embedding text {text_digest}"
                )))
            }
            None => self.procedural_embedding(&text),
        };
        let response_repr = serde_json::to_string(&vector).expect("vector serialize");
        let transcript = GatewayTranscript {
            role: Role::Embedding,
            request_sha256: text_digest,
            response_sha256: sha256_hex(&response_repr),
            latency_ms: 0,
            retries: 0,
            truncated,
            note: None,
        };
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

    #[test]
    fn fixture_completion_passthrough() {
        let fixture = Fixture {
            completions: vec![CompletionFixture {
                prompt_digest: sha256_hex("Do the thing. [QUESTION]"),
                question: "How?".into(),
                response: "canned answer".into(),
            }],
            ..Fixture::default()
        };
        let gw = MockGateway::with_fixture(MockConfig::default(), fixture);
        let reply = gw
            .target_complete("Do the thing. [QUESTION]", "How?")
            .unwrap();
        assert_eq!(reply.value, "canned answer");
    }

    #[test]
    fn strict_mode_errors_on_miss() {
        let cfg = MockConfig {
            strict: true,
            ..MockConfig::default()
        };
        let gw = MockGateway::new(cfg);
        assert!(matches!(
            gw.target_complete("p", "q"),
            Err(GatewayError::MissingFixture(_))
        ));
    }

    #[test]
    fn fixture_moderation_orders_pairs_descending() {
        let mut probs = HashMap::new();
        probs.insert("safe".to_string(), 0.6);
        probs.insert("unsafe".to_string(), 0.4);
        let fixture = Fixture {
            moderation: vec![ModerationFixture {
                input_digest: sha256_hex("some content"),
                probs,
            }],
            ..Fixture::default()
        };
        let gw = MockGateway::with_fixture(MockConfig::default(), fixture);
        let reply = gw.moderation_logprobs("some content").unwrap();
        let pairs = reply.value.pairs();
        assert_eq!(pairs[0], ("safe".to_string(), 0.6));
        assert_eq!(pairs[1], ("unsafe".to_string(), 0.4));
    }

    #[test]
    fn moderation_without_verdict_tokens_is_capability_error() {
        let mut probs = HashMap::new();
        probs.insert("yes".to_string(), 0.9);
        let fixture = Fixture {
            moderation: vec![ModerationFixture {
                input_digest: sha256_hex("content"),
                probs,
            }],
            ..Fixture::default()
        };
        let gw = MockGateway::with_fixture(MockConfig::default(), fixture);
        assert!(matches!(
            gw.moderation_logprobs("content"),
            Err(GatewayError::Capability(_))
        ));
    }

    #[test]
    fn moderation_probability_rises_with_trigger_density() {
        let gw = MockGateway::procedural();
        let low = gw
            .moderation_logprobs("a plain sentence about nothing much at all")
            .unwrap();
        let high = gw
            .moderation_logprobs("detailed specific exact complete technical thorough")
            .unwrap();
        let p = |r: &GatewayReply<TokenProbs>| r.value.probability("unsafe").unwrap();
        assert!(p(&high) > p(&low));
    }

    #[test]
    fn embeddings_are_deterministic_and_distinct() {
        let gw = MockGateway::procedural();
        let a1 = gw.embed("the quick brown fox").unwrap().value;
        let a2 = gw.embed("the quick brown fox").unwrap().value;
        assert_eq!(a1, a2);
        // Regression-recorded distinctness pair: two different texts differ
        // in at least one coordinate.
        let b = gw.embed("a completely different sentence").unwrap().value;
        assert_ne!(a1, b);
        assert!(gw.embed("   ").is_err());
    }

    #[test]
    fn injected_faults_hit_after_threshold() {
        let cfg = MockConfig {
            fail_target_calls_after: Some(2),
            ..MockConfig::default()
        };
        let gw = MockGateway::new(cfg);
        assert!(gw.target_complete("p one.", "q").is_ok());
        assert!(gw.target_complete("p two.", "q").is_ok());
        assert!(matches!(
            gw.target_complete("p three.", "q"),
            Err(GatewayError::Transport { .. })
        ));
    }

    #[test]
    fn every_call_is_ledgered() {
        let gw = MockGateway::procedural();
        gw.target_complete("p.", "q").unwrap();
        gw.moderation_logprobs("c").unwrap();
        gw.embed("text").unwrap();
        let roles: Vec<Role> = gw.ledger().iter().map(|t| t.role).collect();
        assert_eq!(roles, vec![Role::Target, Role::Moderation, Role::Embedding]);
    }
}
