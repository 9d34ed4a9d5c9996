//! Command-line front end: batch runs, resume, and post-run analysis of the
//! artifacts a run leaves on disk.
//!
//! Exit codes: 0 success, 2 configuration or checkpoint error, 3 resumable
//! interruption (a checkpoint exists), 4 gateway capability error, 1
//! anything else.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use promea::analysis::{
    export_rank_embeddings, pca_project, read_export, write_export, EmbedSource, ExportWhich,
};
use promea::metrics::{metrics_report, RankedResponse, RejectionKeywordList};
use promea::runner::{
    parse_config, question_dirs, read_final_population, resume, run_experiment, RunConfig,
};
use promea::{Error, Result};

#[derive(Parser)]
#[command(
    name = "promea",
    version,
    about = "Multi-objective evolutionary search over text prompts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the run described by a config file.
    Run {
        /// TOML config file; see the project README for the key reference.
        config: PathBuf,
    },
    /// Continue an interrupted run from a checkpoint file.
    Resume {
        /// A question directory's checkpoint.json inside the run directory.
        checkpoint: PathBuf,
    },
    /// Recompute success metrics from a finished run directory.
    Metrics {
        /// Run directory (the config copy and question directories live here).
        run_dir: PathBuf,
    },
    /// Embed final-generation individuals and write one JSONL export per
    /// question directory.
    ExportEmbeddings {
        /// Run directory to read final populations from.
        run_dir: PathBuf,
        /// Which individuals to export: best (rank-1 front), worst
        /// (highest-numbered front), or all.
        #[arg(long, default_value_t = ExportWhich::Best)]
        which: ExportWhich,
        /// Text to embed: the generated response or the prompt itself.
        #[arg(long, default_value_t = EmbedSource::Response)]
        source: EmbedSource,
    },
    /// Project an embedding export onto its principal components and print
    /// the projection as JSON.
    Pca {
        /// A JSONL file written by export-embeddings.
        export_file: PathBuf,
        /// Output dimensionality.
        #[arg(long, value_parser = clap::value_parser!(usize), help = "2 or 3")]
        dims: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

/// Writes one line to stdout. A broken pipe (the reader closed early, e.g.
/// `promea pca ... | head`) is a normal way for output to end, not a crash.
fn emit(line: std::fmt::Arguments) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}") {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(Error::io("stdout", e)),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config } => {
            let outcome = run_experiment(&config)?;
            emit(format_args!("run complete: {}", outcome.run_dir.display()))
        }
        Command::Resume { checkpoint } => {
            let outcome = resume(&checkpoint)?;
            if outcome.already_complete {
                emit(format_args!(
                    "already complete: {}",
                    outcome.run_dir.display()
                ))
            } else {
                emit(format_args!(
                    "resume complete: {}",
                    outcome.run_dir.display()
                ))
            }
        }
        Command::Metrics { run_dir } => metrics_command(&run_dir),
        Command::ExportEmbeddings {
            run_dir,
            which,
            source,
        } => export_command(&run_dir, which, source),
        Command::Pca { export_file, dims } => pca_command(&export_file, dims),
    }
}

/// Reads the canonical config copy a run directory carries. Paths inside it
/// are already absolute, so the base directory is only a formality.
fn run_config(run_dir: &Path) -> Result<RunConfig> {
    let path = run_dir.join("config.toml");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_config(&text, run_dir)
}

fn metrics_command(run_dir: &Path) -> Result<()> {
    let cfg = run_config(run_dir)?;
    let keywords = match &cfg.keyword_list_path {
        Some(path) => RejectionKeywordList::from_path(path)?,
        None => RejectionKeywordList::builtin(),
    };
    let mut by_question = serde_json::Map::new();
    for dir in question_dirs(run_dir)? {
        let finals = read_final_population(&dir.join("final_population.jsonl"))?;
        let mut ranked = Vec::with_capacity(finals.len());
        for record in &finals {
            let response = record.response.clone().ok_or_else(|| {
                Error::Config(format!(
                    "{} has no recorded responses (synthetic-only objectives); \
                     success metrics need generated text",
                    dir.display()
                ))
            })?;
            ranked.push(RankedResponse {
                rank: record.rank,
                response,
            });
        }
        let generation_count = finals.iter().map(|r| r.gen).max().unwrap_or(0) + 1;
        let report = metrics_report(&ranked, &keywords, None, generation_count)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        by_question.insert(name, serde_json::to_value(&report)?);
    }
    emit(format_args!(
        "{}",
        serde_json::to_string_pretty(&serde_json::Value::Object(by_question))?
    ))
}

fn export_command(run_dir: &Path, which: ExportWhich, source: EmbedSource) -> Result<()> {
    let cfg = run_config(run_dir)?;
    let gateway = cfg.gateway.build()?;
    let model = gateway.model();
    for dir in question_dirs(run_dir)? {
        let finals = read_final_population(&dir.join("final_population.jsonl"))?;
        let entries: Vec<_> = finals.iter().map(|r| r.to_archive_entry()).collect();
        let records = export_rank_embeddings(&entries, model.as_ref(), which, source)?;
        let out = dir.join(format!("embeddings_{which}_{source}.jsonl"));
        write_export(&records, &out)?;
        emit(format_args!(
            "wrote {} ({} records)",
            out.display(),
            records.len()
        ))?;
    }
    Ok(())
}

fn pca_command(export_file: &Path, dims: usize) -> Result<()> {
    if dims != 2 && dims != 3 {
        return Err(Error::Config(format!("--dims must be 2 or 3, got {dims}")));
    }
    let records = read_export(export_file)?;
    let projection = pca_project(&records, dims)?;
    emit(format_args!(
        "{}",
        serde_json::to_string_pretty(&projection)?
    ))
}
