//! Sentence-structured text genomes and their variation operators.
//!
//! A prompt is an ordered list of sentences. Crossover swaps whole sentences
//! between two parents at aligned indices by fair coin; mutation replaces a
//! single word with a lexicon synonym. Both are deterministic given a seeded
//! random source, which is what makes whole runs reproducible.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moea::{Op, Variation, Varied};

/// Characters that close a sentence when followed by whitespace or end-of-text.
const TERMINATORS: [char; 3] = ['.', '!', '?'];

/// Splits raw text into sentences. A sentence ends at a terminator (. ! ?)
/// followed by whitespace or end-of-text; a trailing unterminated segment
/// forms the last sentence. Outer whitespace is trimmed per sentence; no
/// non-whitespace content is ever dropped.
pub fn split_sentences(text: &str) -> Result<Vec<String>> {
    if text.trim().is_empty() {
        return Err(Error::DegenerateInput(
            "prompt text is empty or whitespace-only".into(),
        ));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        current.push(c);
        if TERMINATORS.contains(&c) {
            let boundary = chars.get(i + 1).is_none_or(|n| n.is_whitespace());
            if boundary {
                let sentence = current.trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                current.clear();
            }
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    Ok(sentences)
}

/// A prompt as an ordered list of non-empty sentences plus lineage metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptGenome {
    sentences: Vec<String>,
    /// Opaque lineage tag ("p0", "init", "x+m", ...); never interpreted.
    pub source_id: String,
    pub generation_born: u32,
}

impl PromptGenome {
    /// Builds a genome by splitting raw text into sentences.
    pub fn from_text(
        text: &str,
        source_id: impl Into<String>,
        generation_born: u32,
    ) -> Result<Self> {
        Self::from_sentences(split_sentences(text)?, source_id, generation_born)
    }

    /// Builds a genome from pre-split sentences, validating each.
    pub fn from_sentences(
        sentences: Vec<String>,
        source_id: impl Into<String>,
        generation_born: u32,
    ) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::DegenerateInput("genome has no sentences".into()));
        }
        if sentences.iter().any(|s| s.trim().is_empty()) {
            return Err(Error::DegenerateInput(
                "genome contains an empty or whitespace-only sentence".into(),
            ));
        }
        Ok(PromptGenome {
            sentences,
            source_id: source_id.into(),
            generation_born,
        })
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    /// Joins sentences with single spaces into the prompt text sent to models.
    pub fn render(&self) -> String {
        self.sentences.join(" ")
    }

    /// Number of whitespace-delimited words across all sentences.
    pub fn word_count(&self) -> usize {
        self.sentences
            .iter()
            .map(|s| s.split_whitespace().count())
            .sum()
    }
}

/// Word → synonyms lookup, case-insensitive on the head word.
#[derive(Debug, Clone, Default)]
pub struct SynonymLexicon {
    entries: HashMap<String, Vec<String>>,
}

impl SynonymLexicon {
    /// Parses the lexicon format: one `word<TAB>syn1,syn2,...` entry per
    /// line, `#` comments ignored, duplicate head words merged preserving
    /// first-seen order. Synonyms equal to the head word (case-insensitive),
    /// containing whitespace, or containing sentence terminators are dropped:
    /// substitutions must stay single words so sentence structure is stable.
    pub fn parse(src: &str) -> Result<Self> {
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for (lineno, line) in src.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, rest) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!(
                    "lexicon line {}: expected 'word<TAB>syn1,syn2,...'",
                    lineno + 1
                ))
            })?;
            let head = head.trim().to_lowercase();
            if head.is_empty() {
                return Err(Error::Config(format!(
                    "lexicon line {}: empty head word",
                    lineno + 1
                )));
            }
            let list = entries.entry(head.clone()).or_default();
            for syn in rest.split(',') {
                let syn = syn.trim();
                if syn.is_empty()
                    || syn.to_lowercase() == head
                    || syn
                        .chars()
                        .any(|c| c.is_whitespace() || TERMINATORS.contains(&c))
                    || list.iter().any(|s| s == syn)
                {
                    continue;
                }
                list.push(syn.to_string());
            }
        }
        entries.retain(|_, list| !list.is_empty());
        Ok(SynonymLexicon { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&src)
    }

    /// The lexicon bundled with the crate (general-English synonym sets).
    pub fn builtin() -> Self {
        Self::parse(include_str!("data/lexicon.tsv")).expect("bundled lexicon parses")
    }

    /// Empty lexicon (every mutation becomes a no-op).
    pub fn empty() -> Self {
        SynonymLexicon::default()
    }

    /// Synonyms for `word` (case-insensitive lookup), if any.
    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mutation tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MutationConfig {
    /// Per-offspring probability of attempting a mutation.
    pub rate: f64,
    /// How many fresh word picks to try when a picked word has no synonyms.
    pub max_word_retries: u32,
}

impl Default for MutationConfig {
    fn default() -> Self {
        MutationConfig {
            rate: 0.5,
            max_word_retries: 8,
        }
    }
}

impl MutationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) || self.rate.is_nan() {
            return Err(Error::Config(format!(
                "mutation_rate must be in [0, 1], got {}",
                self.rate
            )));
        }
        if self.max_word_retries < 1 {
            return Err(Error::Config("max_word_retries must be at least 1".into()));
        }
        Ok(())
    }
}

/// Deterministic core of crossover: swaps sentences at aligned indices where
/// `mask[i]` is true; indices beyond the shorter parent stay put. The sentence
/// multiset across the two offspring equals the parents'.
pub fn apply_crossover_mask(
    p1: &PromptGenome,
    p2: &PromptGenome,
    mask: &[bool],
) -> (PromptGenome, PromptGenome) {
    let mut c1 = p1.sentences.clone();
    let mut c2 = p2.sentences.clone();
    let aligned = c1.len().min(c2.len());
    debug_assert_eq!(mask.len(), aligned);
    for (i, &swap) in mask.iter().enumerate().take(aligned) {
        if swap {
            std::mem::swap(&mut c1[i], &mut c2[i]);
        }
    }
    let mk = |sentences: Vec<String>, parent: &PromptGenome| PromptGenome {
        sentences,
        source_id: parent.source_id.clone(),
        generation_born: parent.generation_born,
    };
    (mk(c1, p1), mk(c2, p2))
}

/// Crossover: a fair coin per aligned sentence index decides swapping.
pub fn crossover(
    p1: &PromptGenome,
    p2: &PromptGenome,
    rng: &mut ChaCha8Rng,
) -> (PromptGenome, PromptGenome) {
    let aligned = p1.sentences.len().min(p2.sentences.len());
    let mask: Vec<bool> = (0..aligned).map(|_| rng.random_bool(0.5)).collect();
    apply_crossover_mask(p1, p2, &mask)
}

/// Splits a token into (leading punctuation, core word, trailing punctuation).
fn split_token(token: &str) -> (&str, &str, &str) {
    let start = token
        .char_indices()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, _)| i);
    let Some(start) = start else {
        return (token, "", "");
    };
    let end = token
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, c)| i + c.len_utf8())
        .expect("start exists, so end exists");
    (&token[..start], &token[start..end], &token[end..])
}

/// Byte span of the `idx`-th whitespace-delimited token of `s`.
fn nth_token_span(s: &str, idx: usize) -> Option<(usize, usize)> {
    let mut count = 0usize;
    let mut start = None;
    for (i, c) in s.char_indices() {
        if c.is_whitespace() {
            if let Some(st) = start.take() {
                if count == idx {
                    return Some((st, i));
                }
                count += 1;
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        if count == idx {
            return Some((st, s.len()));
        }
    }
    None
}

/// One unconditional mutation attempt: picks a uniformly random word; if it
/// has lexicon synonyms, substitutes a uniformly random one (attached
/// punctuation stays in place); otherwise re-picks up to
/// `cfg.max_word_retries` times and then gives up, returning a clone.
fn attempt_mutation(
    p: &PromptGenome,
    lexicon: &SynonymLexicon,
    cfg: &MutationConfig,
    rng: &mut ChaCha8Rng,
) -> PromptGenome {
    let words_per_sentence: Vec<usize> = p
        .sentences
        .iter()
        .map(|s| s.split_whitespace().count())
        .collect();
    let total: usize = words_per_sentence.iter().sum();
    if total == 0 {
        return p.clone();
    }
    for _ in 0..=cfg.max_word_retries {
        let mut pos = rng.random_range(0..total);
        let mut sentence_idx = 0;
        while pos >= words_per_sentence[sentence_idx] {
            pos -= words_per_sentence[sentence_idx];
            sentence_idx += 1;
        }
        let sentence = &p.sentences[sentence_idx];
        let (start, end) = nth_token_span(sentence, pos).expect("position counted above");
        let (prefix, core, suffix) = split_token(&sentence[start..end]);
        if core.is_empty() {
            continue;
        }
        if let Some(synonyms) = lexicon.synonyms(core) {
            let replacement = &synonyms[rng.random_range(0..synonyms.len())];
            let mut out = p.clone();
            out.sentences[sentence_idx] = format!(
                "{}{prefix}{replacement}{suffix}{}",
                &sentence[..start],
                &sentence[end..]
            );
            return out;
        }
    }
    p.clone()
}

/// Mutation operator: with probability `cfg.rate`, substitutes one word with
/// a lexicon synonym (see [`attempt_mutation`] mechanics). Output differs
/// from input in at most one word position; sentence count is unchanged.
/// Absence of synonyms is a silent no-op.
pub fn mutate(
    p: &PromptGenome,
    lexicon: &SynonymLexicon,
    cfg: &MutationConfig,
    rng: &mut ChaCha8Rng,
) -> PromptGenome {
    if cfg.rate == 0.0 || !rng.random_bool(cfg.rate) {
        return p.clone();
    }
    attempt_mutation(p, lexicon, cfg, rng)
}

/// Initial population: index 0 is an exact copy of `p0`; every other
/// individual is `p0` with k ∈ uniform{1..3} unconditional mutation passes,
/// which keeps generation 1 from being degenerate when `p0` is short.
pub fn init_population(
    p0: &PromptGenome,
    n: usize,
    lexicon: &SynonymLexicon,
    cfg: &MutationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PromptGenome>> {
    if n < 2 {
        return Err(Error::Config(format!(
            "population_size must be at least 2, got {n}"
        )));
    }
    let mut population = Vec::with_capacity(n);
    let mut seed = p0.clone();
    seed.source_id = "p0".into();
    population.push(seed);
    for _ in 1..n {
        let passes = rng.random_range(1..=3);
        let mut genome = p0.clone();
        for _ in 0..passes {
            genome = attempt_mutation(&genome, lexicon, cfg, rng);
        }
        genome.source_id = "init".into();
        population.push(genome);
    }
    Ok(population)
}

/// Crossover-then-mutate variation over prompt genomes, as one engine plug-in.
pub struct PromptVariation {
    pub lexicon: SynonymLexicon,
    pub mutation: MutationConfig,
}

impl Variation<PromptGenome> for PromptVariation {
    fn offspring(
        &self,
        a: &PromptGenome,
        b: &PromptGenome,
        generation: u32,
        rng: &mut ChaCha8Rng,
    ) -> [Varied<PromptGenome>; 2] {
        let (c1, c2) = crossover(a, b, rng);
        let finish = |child: PromptGenome, rng: &mut ChaCha8Rng| {
            let mutated = mutate(&child, &self.lexicon, &self.mutation, rng);
            let changed = mutated.render() != child.render();
            let mut genome = mutated;
            genome.generation_born = generation;
            genome.source_id = if changed { "x+m".into() } else { "x".into() };
            Varied {
                genome,
                op: if changed { Op::Mutation } else { Op::Crossover },
            }
        };
        let v1 = finish(c1, rng);
        let v2 = finish(c2, rng);
        [v1, v2]
    }
}
