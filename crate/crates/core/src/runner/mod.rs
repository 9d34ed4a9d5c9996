//! Batch experiment orchestration: config → per-question evolution runs →
//! artifacts on disk, with checkpoint/resume.
//!
//! Each question gets its own engine, its own deterministic RNG stream
//! (derived from the run seed and the question index), and its own
//! directory of artifacts:
//!
//! ```text
//! <output_dir>/
//!   config.toml           canonical resolved config (bytes = digest input)
//!   version.txt           tool name and version
//!   question_000/
//!     archive.jsonl       every generation's population, one record per line
//!     convergence.csv     generation, best/mean per objective
//!     checkpoint.json     latest generation boundary (resume point)
//!     final_front.jsonl   rank-1 records of the final generation
//!     final_population.jsonl  final generation with response text
//!     metrics.json        success metrics (when responses exist)
//!     timing.json         wall clock (the one non-deterministic artifact)
//! ```
//!
//! With the deterministic mock gateway, two runs of the same config produce
//! byte-identical archives, and an interrupted run resumed from its
//! checkpoint converges to the same bytes.

mod checkpoint;
mod config;

pub use checkpoint::Checkpoint;
pub use config::{
    load_config, parse_config, Backend, BuiltGateway, GatewayConfig, MockSettings, RunConfig,
};

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::ArchiveEntry;
use crate::error::{Error, Result};
use crate::fitness::ObjectiveEvaluator;
use crate::gateway::sha256_hex;
use crate::genome::{init_population, PromptGenome, PromptVariation, SynonymLexicon};
use crate::metrics::{metrics_report, RankedResponse, RejectionKeywordList};
use crate::moea::{Crowding, Engine, Individual, ObjectiveVector, Op};

/// One archive line: an individual as it stood in generation `gen`.
/// Individuals that survive several generations appear once per generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub id: u64,
    pub gen: u32,
    pub prompt: String,
    /// SHA-256 of the response text; absent for synthetic-only runs.
    pub response_sha256: Option<String>,
    pub objectives: ObjectiveVector,
    pub rank: u32,
    pub crowding: Crowding,
    pub parents: Vec<u64>,
    pub op: Op,
}

/// A final-generation individual with its response text, so a finished run
/// can be re-scored and re-embedded without the original environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalRecord {
    pub id: u64,
    pub gen: u32,
    pub prompt: String,
    pub response: Option<String>,
    pub response_sha256: Option<String>,
    pub objectives: ObjectiveVector,
    pub rank: u32,
    pub crowding: Crowding,
    pub parents: Vec<u64>,
    pub op: Op,
}

impl FinalRecord {
    /// View for the embedding exporter.
    pub fn to_archive_entry(&self) -> ArchiveEntry {
        ArchiveEntry {
            id: self.id,
            gen: self.gen,
            rank: self.rank,
            objectives: self.objectives.clone(),
            prompt: self.prompt.clone(),
            response: self.response.clone(),
        }
    }
}

/// What a run or resume produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    /// True when resume found nothing left to do.
    pub already_complete: bool,
}

/// Independent RNG stream for one question: ChaCha8 keyed by the hash of
/// the run seed and the question index, so adding or reordering questions
/// never perturbs the others.
pub fn question_rng(rng_seed: u64, question_index: usize) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut hasher = Sha256::new();
    hasher.update(rng_seed.to_le_bytes());
    hasher.update((question_index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn question_dir_name(question_index: usize) -> String {
    format!("question_{question_index:03}")
}

/// Loaded, validated inputs shared by every question of a run.
struct RunContext {
    cfg: RunConfig,
    canonical: String,
    digest: String,
    run_id: String,
    questions: Vec<String>,
    p0: PromptGenome,
    lexicon: SynonymLexicon,
    keywords: RejectionKeywordList,
}

impl RunContext {
    fn prepare(cfg: RunConfig) -> Result<RunContext> {
        let canonical = cfg.canonical_toml()?;
        let digest = sha256_hex(&canonical);
        let run_id = digest[..12].to_string();

        let seed_text = std::fs::read_to_string(&cfg.seed_prompt_path)
            .map_err(|e| Error::io(&cfg.seed_prompt_path, e))?;
        let p0 = PromptGenome::from_text(seed_text.trim(), "p0", 0)?;

        let question_text = std::fs::read_to_string(&cfg.question_set_path)
            .map_err(|e| Error::io(&cfg.question_set_path, e))?;
        let questions: Vec<String> = question_text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        if questions.is_empty() {
            return Err(Error::Config(format!(
                "question set {} contains no questions",
                cfg.question_set_path.display()
            )));
        }

        let lexicon = match &cfg.lexicon_path {
            Some(path) => SynonymLexicon::from_path(path)?,
            None => SynonymLexicon::builtin(),
        };
        let keywords = match &cfg.keyword_list_path {
            Some(path) => RejectionKeywordList::from_path(path)?,
            None => RejectionKeywordList::builtin(),
        };

        Ok(RunContext {
            cfg,
            canonical,
            digest,
            run_id,
            questions,
            p0,
            lexicon,
            keywords,
        })
    }

    fn run_dir(&self) -> &Path {
        &self.cfg.output_dir
    }
}

/// Loads a config file and executes the full run.
pub fn run_experiment(config_path: &Path) -> Result<RunOutcome> {
    run_from_config(load_config(config_path)?)
}

/// Executes a full run from an already-validated config.
pub fn run_from_config(cfg: RunConfig) -> Result<RunOutcome> {
    let ctx = RunContext::prepare(cfg)?;
    let run_dir = ctx.run_dir().to_path_buf();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;

    let config_copy = run_dir.join("config.toml");
    if config_copy.exists() {
        return Err(Error::Config(format!(
            "output directory {} already contains a run; resume from its checkpoint or pick a fresh output_dir",
            run_dir.display()
        )));
    }
    std::fs::write(&config_copy, &ctx.canonical).map_err(|e| Error::io(&config_copy, e))?;
    let version_path = run_dir.join("version.txt");
    let stamp = format!("{} {}\n", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    std::fs::write(&version_path, stamp).map_err(|e| Error::io(&version_path, e))?;

    for question_index in 0..ctx.questions.len() {
        run_question(&ctx, question_index, None)?;
    }
    Ok(RunOutcome {
        run_dir,
        already_complete: false,
    })
}

/// Continues a run from a checkpoint file (written inside a question
/// directory). The run directory's config copy must hash to the digest the
/// checkpoint recorded; otherwise the configuration drifted and resuming
/// would silently mix two experiments.
pub fn resume(checkpoint_path: &Path) -> Result<RunOutcome> {
    let ckpt = Checkpoint::read(checkpoint_path)?;
    let question_dir = checkpoint_path
        .parent()
        .ok_or_else(|| Error::Checkpoint("checkpoint path has no parent directory".into()))?;
    let run_dir = question_dir
        .parent()
        .ok_or_else(|| Error::Checkpoint("checkpoint must live inside a run directory".into()))?;

    let cfg = load_config(&run_dir.join("config.toml"))?;
    let ctx = RunContext::prepare(cfg)?;
    if ctx.digest != ckpt.config_sha256 {
        return Err(Error::Checkpoint(format!(
            "config digest mismatch: checkpoint was taken under {} but the run directory's config hashes to {}; the configuration changed since the run started",
            ckpt.config_sha256, ctx.digest
        )));
    }
    if ckpt.question_index >= ctx.questions.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint references question {} but the question set has {}",
            ckpt.question_index,
            ctx.questions.len()
        )));
    }

    let last = ctx.questions.len() - 1;
    if ckpt.complete && ckpt.question_index == last {
        return Ok(RunOutcome {
            run_dir: ctx.run_dir().to_path_buf(),
            already_complete: true,
        });
    }
    let next_fresh = ckpt.question_index + 1;
    if !ckpt.complete {
        run_question(&ctx, ckpt.question_index, Some(ckpt))?;
    }
    for question_index in next_fresh..ctx.questions.len() {
        run_question(&ctx, question_index, None)?;
    }
    Ok(RunOutcome {
        run_dir: ctx.run_dir().to_path_buf(),
        already_complete: false,
    })
}

fn run_question(ctx: &RunContext, question_index: usize, from: Option<Checkpoint>) -> Result<()> {
    let question = &ctx.questions[question_index];
    let qdir = ctx.run_dir().join(question_dir_name(question_index));
    std::fs::create_dir_all(&qdir).map_err(|e| Error::io(&qdir, e))?;
    let archive_path = qdir.join("archive.jsonl");
    let convergence_path = qdir.join("convergence.csv");
    let checkpoint_path = qdir.join("checkpoint.json");
    let started = Instant::now();

    let built = ctx.cfg.gateway.build()?;
    let evaluator = Arc::new(ObjectiveEvaluator::new(
        Some(built.model()),
        question.clone(),
        ctx.cfg.objective_set.clone(),
        ctx.cfg.moderation_mode,
        ctx.cfg.synthetic_spec(),
    )?);
    let objective_ids = crate::moea::Evaluator::<PromptGenome>::objective_ids(&*evaluator);
    let variation = Box::new(PromptVariation {
        lexicon: ctx.lexicon.clone(),
        mutation: ctx.cfg.mutation_config(),
    });

    let mut engine = match from {
        None => {
            let mut rng = question_rng(ctx.cfg.rng_seed, question_index);
            let genomes = init_population(
                &ctx.p0,
                ctx.cfg.population_size,
                &ctx.lexicon,
                &ctx.cfg.mutation_config(),
                &mut rng,
            )?;
            // Generation 0 evaluation happens here; a failure this early has
            // nothing worth checkpointing, so it propagates as-is.
            let engine = Engine::initialize(variation, evaluator, rng, genomes)?;
            let header = convergence_header(&objective_ids);
            std::fs::write(&convergence_path, header)
                .map_err(|e| Error::io(&convergence_path, e))?;
            std::fs::write(&archive_path, b"").map_err(|e| Error::io(&archive_path, e))?;
            append_generation(&engine, &archive_path, &convergence_path)?;
            write_checkpoint(ctx, question_index, &engine, false, &checkpoint_path)?;
            engine
        }
        Some(ckpt) => {
            let engine = Engine::restore(variation, evaluator, ckpt.state)?;
            // Drop any artifact rows beyond the checkpointed generation; they
            // can exist if the previous process died between an artifact
            // append and the checkpoint write.
            truncate_jsonl_after(&archive_path, engine.generation())?;
            truncate_csv_after(&convergence_path, engine.generation())?;
            engine
        }
    };

    while engine.generation() < ctx.cfg.generations {
        if let Err(e) = engine.step() {
            return Err(Error::Interrupted {
                checkpoint: checkpoint_path,
                source: Box::new(e),
            });
        }
        append_generation(&engine, &archive_path, &convergence_path)?;
        write_checkpoint(ctx, question_index, &engine, false, &checkpoint_path)?;
    }

    finalize_question(ctx, question_index, &engine, &built, &qdir, started)?;
    write_checkpoint(ctx, question_index, &engine, true, &checkpoint_path)?;
    Ok(())
}

fn convergence_header(objective_ids: &[String]) -> String {
    let mut header = String::from("generation");
    for id in objective_ids {
        header.push_str(&format!(",best_{id},mean_{id}"));
    }
    header.push('\n');
    header
}

fn archive_record(ind: &Individual<PromptGenome>, gen: u32) -> ArchiveRecord {
    ArchiveRecord {
        id: ind.id,
        gen,
        prompt: ind.genome.render(),
        response_sha256: ind.response.as_deref().map(sha256_hex),
        objectives: ind.objectives.clone().expect("population is evaluated"),
        rank: ind.rank.expect("population is ranked"),
        crowding: ind.crowding.expect("population is ranked"),
        parents: ind.parents.clone(),
        op: ind.op,
    }
}

fn append_generation(
    engine: &Engine<PromptGenome>,
    archive_path: &Path,
    convergence_path: &Path,
) -> Result<()> {
    let gen = engine.generation();
    let mut archive = std::fs::OpenOptions::new()
        .append(true)
        .open(archive_path)
        .map_err(|e| Error::io(archive_path, e))?;
    for ind in engine.population() {
        let line = serde_json::to_string(&archive_record(ind, gen))?;
        writeln!(archive, "{line}").map_err(|e| Error::io(archive_path, e))?;
    }

    let report = engine.report()?;
    let mut row = format!("{gen}");
    for (best, mean) in report.objective_best.iter().zip(&report.objective_mean) {
        row.push_str(&format!(",{best},{mean}"));
    }
    row.push('\n');
    let mut convergence = std::fs::OpenOptions::new()
        .append(true)
        .open(convergence_path)
        .map_err(|e| Error::io(convergence_path, e))?;
    convergence
        .write_all(row.as_bytes())
        .map_err(|e| Error::io(convergence_path, e))?;
    Ok(())
}

fn write_checkpoint(
    ctx: &RunContext,
    question_index: usize,
    engine: &Engine<PromptGenome>,
    complete: bool,
    path: &Path,
) -> Result<()> {
    Checkpoint {
        run_id: ctx.run_id.clone(),
        config_sha256: ctx.digest.clone(),
        question_index,
        complete,
        state: engine.state(),
    }
    .write(path)
}

/// Keeps only archive lines with `gen <=` the checkpointed generation.
fn truncate_jsonl_after(path: &Path, generation: u32) -> Result<()> {
    #[derive(Deserialize)]
    struct GenOnly {
        gen: u32,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::with_capacity(text.len());
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: GenOnly = serde_json::from_str(line)
            .map_err(|e| Error::Checkpoint(format!("corrupt archive line: {e}")))?;
        if parsed.gen <= generation {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}

/// Keeps the header and rows with generation `<=` the checkpointed one.
fn truncate_csv_after(path: &Path, generation: u32) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines: VecDeque<&str> = text.lines().collect();
    let header = lines
        .pop_front()
        .ok_or_else(|| Error::Checkpoint(format!("convergence log {} is empty", path.display())))?;
    let mut kept = String::with_capacity(text.len());
    kept.push_str(header);
    kept.push('\n');
    for line in lines {
        let first = line.split(',').next().unwrap_or_default();
        let gen: u32 = first
            .parse()
            .map_err(|_| Error::Checkpoint(format!("corrupt convergence row {line:?}")))?;
        if gen <= generation {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn finalize_question(
    ctx: &RunContext,
    question_index: usize,
    engine: &Engine<PromptGenome>,
    built: &BuiltGateway,
    qdir: &Path,
    started: Instant,
) -> Result<()> {
    let gen = engine.generation();
    let generation_count = gen + 1;

    let finals: Vec<FinalRecord> = engine
        .population()
        .iter()
        .map(|ind| FinalRecord {
            id: ind.id,
            gen,
            prompt: ind.genome.render(),
            response: ind.response.clone(),
            response_sha256: ind.response.as_deref().map(sha256_hex),
            objectives: ind.objectives.clone().expect("population is evaluated"),
            rank: ind.rank.expect("population is ranked"),
            crowding: ind.crowding.expect("population is ranked"),
            parents: ind.parents.clone(),
            op: ind.op,
        })
        .collect();

    let final_population_path = qdir.join("final_population.jsonl");
    write_jsonl(&final_population_path, finals.iter())?;

    let final_front_path = qdir.join("final_front.jsonl");
    let front_records: Vec<ArchiveRecord> = engine
        .population()
        .iter()
        .filter(|ind| ind.rank == Some(1))
        .map(|ind| archive_record(ind, gen))
        .collect();
    write_jsonl(&final_front_path, front_records.iter())?;

    let question = &ctx.questions[question_index];
    if finals.iter().all(|r| r.response.is_some()) {
        let ranked: Vec<RankedResponse> = finals
            .iter()
            .map(|r| RankedResponse {
                rank: r.rank,
                response: r.response.clone().expect("checked above"),
            })
            .collect();
        let judge = built.judge().map(|j| (j, question.as_str()));
        let report = metrics_report(&ranked, &ctx.keywords, judge, generation_count)?;
        let metrics_path = qdir.join("metrics.json");
        let mut bytes = serde_json::to_vec_pretty(&report)?;
        bytes.push(b'\n');
        std::fs::write(&metrics_path, bytes).map_err(|e| Error::io(&metrics_path, e))?;
    } else {
        eprintln!(
            "[{}] question {question_index}: objectives produced no responses; metrics skipped",
            env!("CARGO_PKG_NAME")
        );
    }

    let timing_path = qdir.join("timing.json");
    let timing = serde_json::json!({
        "question_index": question_index,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    let mut bytes = serde_json::to_vec_pretty(&timing)?;
    bytes.push(b'\n');
    std::fs::write(&timing_path, bytes).map_err(|e| Error::io(&timing_path, e))?;
    Ok(())
}

fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl Iterator<Item = &'a T>,
) -> Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a `final_population.jsonl` written by a run.
pub fn read_final_population(path: &Path) -> Result<Vec<FinalRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}

/// Reads an `archive.jsonl` written by a run.
pub fn read_archive(path: &Path) -> Result<Vec<ArchiveRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}

/// Question directories of a run, in index order.
pub fn question_dirs(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for index in 0.. {
        let dir = run_dir.join(question_dir_name(index));
        if !dir.is_dir() {
            break;
        }
        dirs.push(dir);
    }
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "{} contains no question directories",
            run_dir.display()
        )));
    }
    Ok(dirs)
}
