//! Run configuration: one human-editable TOML document per experiment.
//!
//! Loading is strict: unknown keys are hard errors (with a nearest-key
//! suggestion, so typos like `mutationrate` don't silently fall back to a
//! default), invariant violations name the offending field, and relative
//! paths resolve against the config file's directory. The resolved config
//! re-serializes to a canonical TOML string whose SHA-256 is the run's
//! config digest — checkpoints embed it so resuming under a drifted
//! configuration fails loudly instead of corrupting the run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitness::{validate_objective_set, ModerationMode, ObjectiveKind, SyntheticSpec};
use crate::gateway::http::{HttpGateway, HttpGatewayConfig};
use crate::gateway::mock::{MockConfig, MockGateway};
use crate::gateway::{sha256_hex, ModelGateway};
use crate::genome::MutationConfig;
use crate::metrics::Judge;

fn default_population_size() -> usize {
    20
}
fn default_generations() -> u32 {
    30
}
fn default_mutation_rate() -> f64 {
    0.5
}
fn default_max_word_retries() -> u32 {
    8
}
fn default_objective_set() -> Vec<ObjectiveKind> {
    vec![
        ObjectiveKind::UnsafeLogprob,
        ObjectiveKind::SemanticConsistency,
    ]
}
fn default_moderation_mode() -> ModerationMode {
    ModerationMode::QuestionAndResponse
}
fn default_target_word_count() -> usize {
    32
}

/// Everything a batch run needs. Field defaults make the minimal config
/// just the three paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Seed prompt file (the single ancestor of every genome).
    pub seed_prompt_path: PathBuf,
    /// Question file: one question per line, `#` comments ignored.
    pub question_set_path: PathBuf,
    /// Run directory; created, must not already hold a run.
    pub output_dir: PathBuf,
    #[serde(default = "default_population_size")]
    pub population_size: usize,
    /// Evolution steps after the initial population (0 = evaluate only).
    #[serde(default = "default_generations")]
    pub generations: u32,
    #[serde(default = "default_mutation_rate")]
    pub mutation_rate: f64,
    #[serde(default = "default_max_word_retries")]
    pub max_word_retries: u32,
    #[serde(default = "default_objective_set")]
    pub objective_set: Vec<ObjectiveKind>,
    #[serde(default = "default_moderation_mode")]
    pub moderation_mode: ModerationMode,
    #[serde(default)]
    pub rng_seed: u64,
    /// Word count the `text_length_proxy` synthetic objective rewards.
    #[serde(default = "default_target_word_count")]
    pub target_word_count: usize,
    /// Rejection-phrase list for metrics; bundled list when omitted.
    #[serde(default)]
    pub keyword_list_path: Option<PathBuf>,
    /// Synonym lexicon for mutation; bundled lexicon when omitted.
    #[serde(default)]
    pub lexicon_path: Option<PathBuf>,
    #[serde(default)]
    pub gateway: GatewayConfig,
}

/// Which gateway backend serves model calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Mock,
    Http,
}

/// Gateway section: a backend selector plus per-backend settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub backend: Backend,
    #[serde(default)]
    pub mock: MockSettings,
    #[serde(default)]
    pub http: Option<HttpGatewayConfig>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            backend: Backend::Mock,
            mock: MockSettings::default(),
            http: None,
        }
    }
}

/// Tunable subset of the mock gateway, exposed in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub embedding_dim: usize,
    /// Fixture-only mode: any un-fixtured request is an error.
    pub strict: bool,
    #[serde(default)]
    pub fixture_path: Option<PathBuf>,
    /// Fault injection: target calls beyond this count fail (testing).
    #[serde(default)]
    pub fail_target_calls_after: Option<u64>,
    pub compliance_threshold: f64,
    pub moderation_base: f64,
    pub moderation_slope: f64,
    pub moderation_cap: f64,
    pub max_input_chars: usize,
}

impl Default for MockSettings {
    fn default() -> Self {
        let base = MockConfig::default();
        MockSettings {
            embedding_dim: base.embedding_dim,
            strict: base.strict,
            fixture_path: None,
            fail_target_calls_after: None,
            compliance_threshold: base.compliance_threshold,
            moderation_base: base.moderation_base,
            moderation_slope: base.moderation_slope,
            moderation_cap: base.moderation_cap,
            max_input_chars: base.max_input_chars,
        }
    }
}

/// A constructed gateway, with the judge exposed when the backend has one.
pub enum BuiltGateway {
    Mock(Arc<MockGateway>),
    Http(Arc<HttpGateway>),
}

impl BuiltGateway {
    pub fn model(&self) -> Arc<dyn ModelGateway> {
        match self {
            BuiltGateway::Mock(g) => g.clone(),
            BuiltGateway::Http(g) => g.clone(),
        }
    }

    pub fn judge(&self) -> Option<&dyn Judge> {
        match self {
            BuiltGateway::Mock(_) => None,
            BuiltGateway::Http(g) if g.has_judge() => Some(g.as_ref()),
            BuiltGateway::Http(_) => None,
        }
    }
}

impl GatewayConfig {
    /// Constructs the configured backend. HTTP auth environment variables
    /// resolve here — not at config load — so configs stay inspectable
    /// without credentials present.
    pub fn build(&self) -> Result<BuiltGateway> {
        match self.backend {
            Backend::Mock => {
                let s = &self.mock;
                let cfg = MockConfig {
                    embedding_dim: s.embedding_dim,
                    strict: s.strict,
                    fail_target_calls_after: s.fail_target_calls_after,
                    compliance_threshold: s.compliance_threshold,
                    moderation_base: s.moderation_base,
                    moderation_slope: s.moderation_slope,
                    moderation_cap: s.moderation_cap,
                    max_input_chars: s.max_input_chars,
                    ..MockConfig::default()
                };
                let gateway = match &s.fixture_path {
                    Some(path) => MockGateway::from_fixture_path(cfg, path)?,
                    None => MockGateway::new(cfg),
                };
                Ok(BuiltGateway::Mock(Arc::new(gateway)))
            }
            Backend::Http => {
                let cfg = self.http.clone().ok_or_else(|| {
                    Error::Config(
                        "gateway.backend is \"http\" but the [gateway.http] section is missing"
                            .into(),
                    )
                })?;
                Ok(BuiltGateway::Http(Arc::new(HttpGateway::new(cfg)?)))
            }
        }
    }
}

impl RunConfig {
    /// Canonical TOML form of the resolved config; its bytes are what the
    /// run digests and copies into the run directory.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::Config(format!("config cannot be re-serialized: {e}")))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.canonical_toml()?))
    }

    pub fn mutation_config(&self) -> MutationConfig {
        MutationConfig {
            rate: self.mutation_rate,
            max_word_retries: self.max_word_retries,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            target_word_count: self.target_word_count,
            ..SyntheticSpec::default()
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let absolutize = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        absolutize(&mut self.seed_prompt_path);
        absolutize(&mut self.question_set_path);
        absolutize(&mut self.output_dir);
        if let Some(p) = self.keyword_list_path.as_mut() {
            absolutize(p);
        }
        if let Some(p) = self.lexicon_path.as_mut() {
            absolutize(p);
        }
        if let Some(p) = self.gateway.mock.fixture_path.as_mut() {
            absolutize(p);
        }
    }

    fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config(format!(
                "population_size must be at least 2, got {}",
                self.population_size
            )));
        }
        if !self.mutation_rate.is_finite() || !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config(format!(
                "mutation_rate must lie in [0, 1], got {}",
                self.mutation_rate
            )));
        }
        if self.objective_set.len() < 2 {
            return Err(Error::Config(format!(
                "objective_set needs at least two objectives for multi-objective search, got {}",
                self.objective_set.len()
            )));
        }
        validate_objective_set(&self.objective_set)?;
        if self.target_word_count == 0 {
            return Err(Error::Config("target_word_count must be at least 1".into()));
        }
        if self.gateway.backend == Backend::Http && self.gateway.http.is_none() {
            return Err(Error::Config(
                "gateway.backend is \"http\" but the [gateway.http] section is missing".into(),
            ));
        }
        Ok(())
    }
}

const TOP_KEYS: &[&str] = &[
    "seed_prompt_path",
    "question_set_path",
    "output_dir",
    "population_size",
    "generations",
    "mutation_rate",
    "max_word_retries",
    "objective_set",
    "moderation_mode",
    "rng_seed",
    "target_word_count",
    "keyword_list_path",
    "lexicon_path",
    "gateway",
];
const GATEWAY_KEYS: &[&str] = &["backend", "mock", "http"];
const MOCK_KEYS: &[&str] = &[
    "embedding_dim",
    "strict",
    "fixture_path",
    "fail_target_calls_after",
    "compliance_threshold",
    "moderation_base",
    "moderation_slope",
    "moderation_cap",
    "max_input_chars",
];
const HTTP_KEYS: &[&str] = &[
    "target",
    "moderation",
    "embedding",
    "judge",
    "timeout_ms",
    "max_retries",
    "backoff_ms",
    "parallelism",
    "temperature",
    "max_tokens",
    "top_logprobs",
    "max_input_chars",
    "verdict_tokens",
    "embedding_dim",
];
const ENDPOINT_KEYS: &[&str] = &["base_url", "path", "model", "auth_env"];
const VERDICT_KEYS: &[&str] = &["safe", "unsafe"];

fn check_keys(table: &toml::Table, known: &[&str], prefix: &str) -> Result<()> {
    for key in table.keys() {
        if known.contains(&key.as_str()) {
            continue;
        }
        let suggestion = known
            .iter()
            .map(|k| (strsim::levenshtein(key, k), *k))
            .filter(|(d, _)| *d <= 2)
            .min();
        let mut message = format!("unknown config key `{prefix}{key}`");
        match suggestion {
            Some((_, k)) => message.push_str(&format!(" (did you mean `{k}`?)")),
            None => message.push_str(&format!(" (known keys: {})", known.join(", "))),
        }
        return Err(Error::Config(message));
    }
    Ok(())
}

fn subtable<'a>(table: &'a toml::Table, key: &str, path: &str) -> Result<Option<&'a toml::Table>> {
    match table.get(key) {
        None => Ok(None),
        Some(value) => value
            .as_table()
            .map(Some)
            .ok_or_else(|| Error::Config(format!("`{path}` must be a table"))),
    }
}

fn validate_keys(root: &toml::Table) -> Result<()> {
    check_keys(root, TOP_KEYS, "")?;
    let Some(gateway) = subtable(root, "gateway", "gateway")? else {
        return Ok(());
    };
    check_keys(gateway, GATEWAY_KEYS, "gateway.")?;
    if let Some(mock) = subtable(gateway, "mock", "gateway.mock")? {
        check_keys(mock, MOCK_KEYS, "gateway.mock.")?;
    }
    if let Some(http) = subtable(gateway, "http", "gateway.http")? {
        check_keys(http, HTTP_KEYS, "gateway.http.")?;
        for role in ["target", "moderation", "embedding", "judge"] {
            let path = format!("gateway.http.{role}");
            if let Some(endpoint) = subtable(http, role, &path)? {
                check_keys(endpoint, ENDPOINT_KEYS, &format!("{path}."))?;
            }
        }
        if let Some(verdicts) = subtable(http, "verdict_tokens", "gateway.http.verdict_tokens")? {
            check_keys(verdicts, VERDICT_KEYS, "gateway.http.verdict_tokens.")?;
        }
    }
    Ok(())
}

/// Parses and validates a config document. Relative paths resolve against
/// `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let raw: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
    validate_keys(&raw)?;
    let mut cfg: RunConfig = raw
        .try_into()
        .map_err(|e| Error::Config(format!("invalid config value: {e}")))?;
    cfg.resolve_paths(base_dir);
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    parse_config(&text, &base)
}
