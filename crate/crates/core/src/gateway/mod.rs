//! Uniform interface to the three model roles — target generator, moderation
//! scorer, and embedding provider — plus an optional judge endpoint.
//!
//! Two backends implement [`ModelGateway`]: a live chat-completions HTTP
//! client ([`http::HttpGateway`]) and a deterministic mock
//! ([`mock::MockGateway`]) used by tests and desk-scale runs. Every completed
//! call yields exactly one [`GatewayTranscript`], both returned to the caller
//! and appended to the gateway's internal ledger for audit.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::GatewayError;

/// Placeholder in a rendered prompt marking where the question is inserted.
pub const QUESTION_PLACEHOLDER: &str = "[QUESTION]";

/// Default character budget for moderation and embedding inputs.
pub const DEFAULT_MAX_INPUT_CHARS: usize = 4000;

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Which model role a call addressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Target,
    Moderation,
    Embedding,
    Judge,
}

/// Audit record for one completed gateway call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayTranscript {
    pub role: Role,
    pub request_sha256: String,
    pub response_sha256: String,
    /// Wall-clock latency; zero for the mock backend (kept out of any
    /// determinism comparison).
    pub latency_ms: u64,
    /// Number of retries that preceded the successful attempt.
    pub retries: u32,
    /// True when the input was cut to the configured character budget.
    pub truncated: bool,
    /// Free-form annotation (e.g. degenerate-score flags added by scorers).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A gateway return value together with its audit transcript.
#[derive(Debug, Clone)]
pub struct GatewayReply<T> {
    pub value: T,
    pub transcript: GatewayTranscript,
}

/// Top-k token/probability pairs at the moderation verdict position,
/// sorted by descending probability (ties broken by token string).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenProbs(Vec<(String, f64)>);

impl TokenProbs {
    /// Validates probabilities (each in (0, 1], sum ≤ 1 + tolerance) and
    /// sorts descending.
    pub fn new(mut pairs: Vec<(String, f64)>) -> Result<Self, GatewayError> {
        if pairs.is_empty() {
            return Err(GatewayError::Malformed(
                "empty token probability list".into(),
            ));
        }
        let mut sum = 0.0;
        for (token, p) in &pairs {
            if !p.is_finite() || *p <= 0.0 || *p > 1.0 {
                return Err(GatewayError::Malformed(format!(
                    "probability {p} for token {token:?} outside (0, 1]"
                )));
            }
            sum += p;
        }
        if sum > 1.0 + 1e-6 {
            return Err(GatewayError::Malformed(format!(
                "token probabilities sum to {sum}, above 1"
            )));
        }
        pairs.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("probabilities are finite")
                .then_with(|| a.0.cmp(&b.0))
        });
        Ok(TokenProbs(pairs))
    }

    /// Probability of `token`, if present in the top-k list.
    pub fn probability(&self, token: &str) -> Option<f64> {
        self.0.iter().find(|(t, _)| t == token).map(|(_, p)| *p)
    }

    pub fn pairs(&self) -> &[(String, f64)] {
        &self.0
    }
}

/// Verdict token strings the moderation scorer distinguishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictTokens {
    pub safe: String,
    #[serde(rename = "unsafe")]
    pub unsafe_: String,
}

impl Default for VerdictTokens {
    fn default() -> Self {
        VerdictTokens {
            safe: "safe".into(),
            unsafe_: "unsafe".into(),
        }
    }
}

/// Uniform synchronous interface to the model roles.
///
/// Implementations are shareable across threads; each enforces its own
/// parallelism bound internally where relevant.
pub trait ModelGateway: Send + Sync {
    /// Single-turn chat completion of the rendered prompt with the question
    /// inserted at [`QUESTION_PLACEHOLDER`] (appended when absent).
    fn target_complete(
        &self,
        prompt: &str,
        question: &str,
    ) -> Result<GatewayReply<String>, GatewayError>;

    /// Top-k token probabilities at the moderation verdict position for
    /// `content`. The gateway owns the moderation instruction template; the
    /// caller passes only the material under review.
    fn moderation_logprobs(&self, content: &str) -> Result<GatewayReply<TokenProbs>, GatewayError>;

    /// Fixed-dimension embedding of `text`.
    fn embed(&self, text: &str) -> Result<GatewayReply<Vec<f64>>, GatewayError>;

    /// The verdict token strings this gateway's moderation role uses.
    fn verdict_tokens(&self) -> VerdictTokens;

    /// Copy of every transcript produced so far, in completion order.
    fn ledger(&self) -> Vec<GatewayTranscript>;
}

/// Builds the single-turn user content: inserts `question` at the first
/// placeholder occurrence, or appends it after a blank line when the prompt
/// carries no placeholder.
pub fn render_user_content(prompt: &str, question: &str) -> String {
    if prompt.contains(QUESTION_PLACEHOLDER) {
        prompt.replacen(QUESTION_PLACEHOLDER, question, 1)
    } else {
        format!("{prompt}\n\n{question}")
    }
}

/// Cuts `text` to at most `budget` characters. Returns the (possibly
/// borrowed) text and whether truncation happened.
pub fn truncate_chars(text: &str, budget: usize) -> (std::borrow::Cow<'_, str>, bool) {
    match text.char_indices().nth(budget) {
        Some((byte_idx, _)) => (std::borrow::Cow::Borrowed(&text[..byte_idx]), true),
        None => (std::borrow::Cow::Borrowed(text), false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_inserts_question_at_placeholder_exactly_once() {
        let content = render_user_content("Setup. [QUESTION] Closing.", "What is up?");
        assert_eq!(content, "Setup. What is up? Closing.");
        assert_eq!(content.matches("What is up?").count(), 1);
    }

    #[test]
    fn render_appends_question_without_placeholder() {
        let content = render_user_content("Just a preamble.", "Q?");
        assert_eq!(content, "Just a preamble.\n\nQ?");
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let (cut, truncated) = truncate_chars("héllo wörld", 4);
        assert_eq!(cut, "héll");
        assert!(truncated);
        let (same, truncated) = truncate_chars("short", 10);
        assert_eq!(same, "short");
        assert!(!truncated);
    }

    #[test]
    fn token_probs_sort_descending_and_validate() {
        let probs = TokenProbs::new(vec![("unsafe".into(), 0.4), ("safe".into(), 0.6)]).unwrap();
        assert_eq!(probs.pairs()[0].0, "safe");
        assert_eq!(probs.pairs()[1].0, "unsafe");
        assert_eq!(probs.probability("unsafe"), Some(0.4));
        assert_eq!(probs.probability("missing"), None);

        assert!(TokenProbs::new(vec![("a".into(), 0.0)]).is_err());
        assert!(TokenProbs::new(vec![("a".into(), 1.2)]).is_err());
        assert!(TokenProbs::new(vec![("a".into(), 0.7), ("b".into(), 0.7)]).is_err());
    }
}
