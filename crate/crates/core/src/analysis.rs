//! Post-run analysis: rank-labeled embedding export and PCA projection.
//!
//! The export gives each selected individual of the final generation its
//! Pareto rank and an embedding of its response (or prompt), enough for
//! external tooling to study how ranks separate in embedding space. The PCA
//! here is deliberately plain: mean-center, eigendecompose the covariance,
//! project onto the top components.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{sha256_hex, ModelGateway};
use crate::moea::ObjectiveVector;

/// One line of the embedding export. Field order is the file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedEmbeddingRecord {
    pub id: u64,
    pub gen: u32,
    /// 1-based Pareto rank in the final generation.
    pub rank: u32,
    pub objectives: ObjectiveVector,
    pub embedding: Vec<f64>,
    pub prompt_sha256: String,
}

/// Which final-generation individuals to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportWhich {
    /// The non-dominated front (rank 1).
    Best,
    /// The last (highest-numbered) front.
    Worst,
    All,
}

impl FromStr for ExportWhich {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(ExportWhich::Best),
            "worst" => Ok(ExportWhich::Worst),
            "all" => Ok(ExportWhich::All),
            other => Err(Error::Config(format!(
                "unknown export selection {other:?} (expected best, worst, or all)"
            ))),
        }
    }
}

impl fmt::Display for ExportWhich {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportWhich::Best => "best",
            ExportWhich::Worst => "worst",
            ExportWhich::All => "all",
        })
    }
}

/// Which text gets embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedSource {
    Response,
    Prompt,
}

impl FromStr for EmbedSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response" => Ok(EmbedSource::Response),
            "prompt" => Ok(EmbedSource::Prompt),
            other => Err(Error::Config(format!(
                "unknown embedding source {other:?} (expected response or prompt)"
            ))),
        }
    }
}

impl fmt::Display for EmbedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedSource::Response => "response",
            EmbedSource::Prompt => "prompt",
        })
    }
}

/// One final-generation individual as the exporter needs it.
#[derive(Debug, Clone)]
pub struct ArchiveEntry {
    pub id: u64,
    pub gen: u32,
    pub rank: u32,
    pub objectives: ObjectiveVector,
    /// Rendered prompt text.
    pub prompt: String,
    /// Generated response, when the run's objectives produced one.
    pub response: Option<String>,
}

/// Embeds the selected individuals and attaches rank labels. `best` is the
/// rank-1 front, `worst` the highest-numbered front; records keep their
/// input order. Embeddings come from the gateway (its truncation and
/// dimension-integrity rules apply).
pub fn export_rank_embeddings(
    entries: &[ArchiveEntry],
    gateway: &dyn ModelGateway,
    which: ExportWhich,
    source: EmbedSource,
) -> Result<Vec<RankedEmbeddingRecord>> {
    if entries.is_empty() {
        return Err(Error::Contract("export over an empty archive".into()));
    }
    if entries.iter().any(|e| e.rank < 1) {
        return Err(Error::Contract("archive entry with rank < 1".into()));
    }
    let worst_rank = entries.iter().map(|e| e.rank).max().expect("non-empty");
    let selected = entries.iter().filter(|e| match which {
        ExportWhich::Best => e.rank == 1,
        ExportWhich::Worst => e.rank == worst_rank,
        ExportWhich::All => true,
    });
    let mut records = Vec::new();
    for entry in selected {
        let text = match source {
            EmbedSource::Prompt => entry.prompt.as_str(),
            EmbedSource::Response => entry.response.as_deref().ok_or_else(|| {
                Error::Contract(format!(
                    "individual {} has no recorded response; export prompts instead",
                    entry.id
                ))
            })?,
        };
        let reply = gateway.embed(text)?;
        records.push(RankedEmbeddingRecord {
            id: entry.id,
            gen: entry.gen,
            rank: entry.rank,
            objectives: entry.objectives.clone(),
            embedding: reply.value,
            prompt_sha256: sha256_hex(&entry.prompt),
        });
    }
    Ok(records)
}

/// Writes records as JSON Lines.
pub fn write_export(records: &[RankedEmbeddingRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a JSON Lines export file.
pub fn read_export(path: &Path) -> Result<Vec<RankedEmbeddingRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// PCA output: per-record coordinates plus everything needed to reconstruct
/// (components as rows, data mean) and to judge quality (variance ratios).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaProjection {
    pub dims: usize,
    /// One row per input record, `dims` coordinates each.
    pub coordinates: Vec<Vec<f64>>,
    /// Fraction of total variance captured per component, descending.
    pub explained_variance_ratios: Vec<f64>,
    /// Principal axes, one row per component, in input space.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// True when the input had fewer non-trivial directions than `dims`
    /// and zero-variance components were padded in.
    pub padded: bool,
}

/// Projects the records' embeddings onto their top `dims` ∈ {2, 3}
/// principal components. Components are sign-fixed so each one's
/// largest-magnitude loading is positive, making outputs stable across
/// reruns and permutations.
pub fn pca_project(records: &[RankedEmbeddingRecord], dims: usize) -> Result<PcaProjection> {
    if !(dims == 2 || dims == 3) {
        return Err(Error::Config(format!(
            "pca dims must be 2 or 3, got {dims}"
        )));
    }
    let vectors: Vec<&[f64]> = records.iter().map(|r| r.embedding.as_slice()).collect();
    if vectors.len() < dims + 1 {
        return Err(Error::Contract(format!(
            "pca needs at least {} records, got {}",
            dims + 1,
            vectors.len()
        )));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Contract(
            "embeddings are empty or have mismatched dimensions".into(),
        ));
    }
    let n = vectors.len();

    let mut mean = vec![0.0f64; d];
    for v in &vectors {
        for (m, x) in mean.iter_mut().zip(*v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let covariance = centered.transpose() * &centered / (n as f64 - 1.0);
    let eigen = SymmetricEigen::new(covariance);

    // Order eigenpairs by descending eigenvalue, clamping the tiny negatives
    // eigendecomposition can produce for semi-definite matrices.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("eigenvalues of a real symmetric matrix are real")
    });
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| eigen.eigenvalues[i].max(0.0))
        .collect();
    let total: f64 = eigenvalues.iter().sum();
    let scale = eigenvalues.first().copied().unwrap_or(0.0).max(1.0);
    let trivial = |value: f64| value <= scale * 1e-12;

    let mut components = Vec::with_capacity(dims);
    let mut ratios = Vec::with_capacity(dims);
    let mut padded = false;
    for k in 0..dims {
        if k >= d || trivial(eigenvalues[k]) {
            padded = true;
        }
        if k >= d {
            components.push(vec![0.0; d]);
            ratios.push(0.0);
            continue;
        }
        let mut axis: Vec<f64> = eigen
            .eigenvectors
            .column(order[k])
            .iter()
            .copied()
            .collect();
        let dominant = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite loadings"))
            .map(|(i, _)| i)
            .expect("d > 0");
        if axis[dominant] < 0.0 {
            for x in &mut axis {
                *x = -*x;
            }
        }
        components.push(axis);
        ratios.push(if total > 0.0 {
            eigenvalues[k] / total
        } else {
            0.0
        });
    }

    let coordinates: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|axis| {
                    axis.iter()
                        .enumerate()
                        .map(|(j, a)| a * (vectors[i][j] - mean[j]))
                        .sum()
                })
                .collect()
        })
        .collect();

    Ok(PcaProjection {
        dims,
        coordinates,
        explained_variance_ratios: ratios,
        components,
        mean,
        padded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{MockConfig, MockGateway};

    fn record(id: u64, rank: u32, embedding: Vec<f64>) -> RankedEmbeddingRecord {
        RankedEmbeddingRecord {
            id,
            gen: 9,
            rank,
            objectives: ObjectiveVector::new(vec![0.0, 0.0]).unwrap(),
            embedding,
            prompt_sha256: "00".into(),
        }
    }

    fn entries() -> Vec<ArchiveEntry> {
        let entry = |id, rank, prompt: &str, response: &str| ArchiveEntry {
            id,
            gen: 9,
            rank,
            objectives: ObjectiveVector::new(vec![id as f64, -(id as f64)]).unwrap(),
            prompt: prompt.to_string(),
            response: Some(response.to_string()),
        };
        vec![
            entry(0, 1, "First prompt.", "First response about topic A."),
            entry(1, 2, "Second prompt.", "Second response about topic B."),
            entry(2, 1, "Third prompt.", "Third response about topic C."),
            entry(3, 3, "Fourth prompt.", "Fourth response about topic D."),
        ]
    }

    #[test]
    fn export_selections_partition_by_rank() {
        let gw = MockGateway::new(MockConfig {
            embedding_dim: 8,
            ..MockConfig::default()
        });
        let entries = entries();
        let all =
            export_rank_embeddings(&entries, &gw, ExportWhich::All, EmbedSource::Response).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all.iter().map(|r| r.id).collect::<Vec<_>>(), [0, 1, 2, 3]);

        let best = export_rank_embeddings(&entries, &gw, ExportWhich::Best, EmbedSource::Response)
            .unwrap();
        assert!(best.iter().all(|r| r.rank == 1));
        assert_eq!(best.len(), 2);

        let worst =
            export_rank_embeddings(&entries, &gw, ExportWhich::Worst, EmbedSource::Response)
                .unwrap();
        assert_eq!(worst.iter().map(|r| r.id).collect::<Vec<_>>(), [3]);

        // Every embedding has the provider's dimension.
        assert!(all.iter().all(|r| r.embedding.len() == 8));
    }

    #[test]
    fn export_is_deterministic_across_reruns() {
        let run = || {
            let gw = MockGateway::procedural();
            let records =
                export_rank_embeddings(&entries(), &gw, ExportWhich::All, EmbedSource::Response)
                    .unwrap();
            records
                .iter()
                .map(|r| serde_json::to_string(r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn export_embeds_prompts_on_request_and_rejects_missing_responses() {
        let gw = MockGateway::procedural();
        let mut entries = entries();
        entries[1].response = None;
        let err = export_rank_embeddings(&entries, &gw, ExportWhich::All, EmbedSource::Response)
            .expect_err("missing response must fail");
        assert!(matches!(err, Error::Contract(_)));
        let prompts =
            export_rank_embeddings(&entries, &gw, ExportWhich::All, EmbedSource::Prompt).unwrap();
        assert_eq!(prompts.len(), 4);
    }

    #[test]
    fn export_file_round_trips() {
        let gw = MockGateway::procedural();
        let records =
            export_rank_embeddings(&entries(), &gw, ExportWhich::All, EmbedSource::Response)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("export.jsonl");
        write_export(&records, &path).unwrap();
        let back = read_export(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.embedding, b.embedding);
            assert_eq!(a.prompt_sha256, b.prompt_sha256);
        }
        // Field order in the file is the documented one.
        let first_line = std::fs::read_to_string(&path).unwrap();
        let keys: Vec<&str> = first_line
            .lines()
            .next()
            .unwrap()
            .split('"')
            .skip(1)
            .step_by(2)
            .take(6)
            .collect();
        assert_eq!(
            keys,
            [
                "id",
                "gen",
                "rank",
                "objectives",
                "embedding",
                "prompt_sha256"
            ]
        );
    }

    #[test]
    fn collinear_points_put_all_variance_on_one_axis() {
        let records: Vec<_> = (0..6)
            .map(|i| {
                let t = i as f64;
                record(i, 1, vec![1.0 + 2.0 * t, -1.0 + 4.0 * t, 0.5 - 2.0 * t])
            })
            .collect();
        let pca = pca_project(&records, 2).unwrap();
        assert!((pca.explained_variance_ratios[0] - 1.0).abs() < 1e-9);
        assert!(pca.explained_variance_ratios[1].abs() < 1e-9);
        assert!(pca.padded, "degenerate second axis must be flagged");
    }

    #[test]
    fn unit_square_corners_split_variance_evenly() {
        let records = vec![
            record(0, 1, vec![0.0, 0.0]),
            record(1, 1, vec![0.0, 1.0]),
            record(2, 1, vec![1.0, 0.0]),
            record(3, 1, vec![1.0, 1.0]),
        ];
        let pca = pca_project(&records, 2).unwrap();
        assert!((pca.explained_variance_ratios[0] - 0.5).abs() < 1e-9);
        assert!((pca.explained_variance_ratios[1] - 0.5).abs() < 1e-9);
        assert!(!pca.padded);
    }

    #[test]
    fn ratios_are_descending_nonnegative_and_sum_at_most_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let records: Vec<_> = (0..40)
            .map(|i| record(i, 1, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        for dims in [2, 3] {
            let pca = pca_project(&records, dims).unwrap();
            let r = &pca.explained_variance_ratios;
            assert_eq!(r.len(), dims);
            assert!(r.windows(2).all(|w| w[0] >= w[1]));
            assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(r.iter().sum::<f64>() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn reconstruction_error_never_grows_with_dims() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let records: Vec<_> = (0..30)
            .map(|i| record(i, 1, (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()))
            .collect();
        let error = |pca: &PcaProjection| -> f64 {
            records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut reconstructed = pca.mean.clone();
                    for (k, axis) in pca.components.iter().enumerate() {
                        for (j, a) in axis.iter().enumerate() {
                            reconstructed[j] += pca.coordinates[i][k] * a;
                        }
                    }
                    r.embedding
                        .iter()
                        .zip(&reconstructed)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                })
                .sum()
        };
        let e2 = error(&pca_project(&records, 2).unwrap());
        let e3 = error(&pca_project(&records, 3).unwrap());
        assert!(e3 <= e2 + 1e-9, "e2={e2} e3={e3}");
    }

    #[test]
    fn projection_is_permutation_invariant_up_to_nothing() {
        // The sign convention pins each axis, so permuting inputs must give
        // exactly the same coordinates for the same records.
        let records = vec![
            record(0, 1, vec![0.1, 1.0, -0.3]),
            record(1, 1, vec![0.9, -0.2, 0.4]),
            record(2, 1, vec![-0.5, 0.3, 0.8]),
            record(3, 1, vec![0.2, 0.2, -0.9]),
            record(4, 1, vec![0.7, 0.5, 0.1]),
        ];
        let pca = pca_project(&records, 2).unwrap();
        let mut shuffled = records.clone();
        shuffled.reverse();
        let pca_rev = pca_project(&shuffled, 2).unwrap();
        for (i, rev_i) in (0..records.len()).map(|i| (i, records.len() - 1 - i)) {
            for k in 0..2 {
                assert!(
                    (pca.coordinates[i][k] - pca_rev.coordinates[rev_i][k]).abs() < 1e-9,
                    "record {i} axis {k} moved"
                );
            }
        }
        for k in 0..2 {
            assert!(
                (pca.explained_variance_ratios[k] - pca_rev.explained_variance_ratios[k]).abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn low_dimensional_input_pads_missing_axes() {
        let records = vec![
            record(0, 1, vec![0.0, 0.0]),
            record(1, 1, vec![1.0, 0.5]),
            record(2, 1, vec![2.0, 1.0]),
            record(3, 1, vec![3.0, 1.5]),
        ];
        let pca = pca_project(&records, 3).unwrap();
        assert!(pca.padded);
        assert_eq!(pca.explained_variance_ratios[2], 0.0);
        assert!(pca.coordinates.iter().all(|c| c[2] == 0.0));
    }

    #[test]
    fn input_contracts_are_enforced() {
        let records = vec![record(0, 1, vec![0.0, 0.0]), record(1, 1, vec![1.0, 0.5])];
        // Too few records for dims=2.
        assert!(pca_project(&records, 2).is_err());
        // Bad dims.
        let more: Vec<_> = (0..5).map(|i| record(i, 1, vec![i as f64, 0.0])).collect();
        assert!(pca_project(&more, 1).is_err());
        assert!(pca_project(&more, 4).is_err());
        // Ragged embeddings.
        let mut ragged = more.clone();
        ragged[0].embedding = vec![1.0];
        assert!(pca_project(&ragged, 2).is_err());
    }
}
