//! Multi-objective evolutionary core: Pareto dominance, non-dominated
//! sorting, crowding distance, tournament selection, and an elitist
//! generational engine, all generic over the genome type.
//!
//! Objectives are always maximized. Callers that want to minimize a quantity
//! negate it before handing it to this module.

mod engine;
mod hypervolume;
mod sort;

pub use engine::{Engine, EngineState, GenerationReport};
pub use hypervolume::hypervolume_2d;
pub use sort::{
    binary_tournament, crowded_compare, crowding_distance, fast_nondominated_sort,
    select_parent_pair, TOURNAMENT_REDRAW_CAP,
};

use std::cmp::Ordering;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError, Result};
use crate::gateway::GatewayTranscript;

/// A vector of objective values, all maximized. Values are finite or negative
/// infinity (the "utterly failed on this objective" sentinel); `NaN` and
/// positive infinity are rejected at construction so every later comparison
/// is total.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveVector(Vec<f64>);

impl ObjectiveVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("objective vector is empty".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if v.is_nan() {
                return Err(Error::Contract(format!("objective {i} is NaN")));
            }
            if v == f64::INFINITY {
                return Err(Error::Contract(format!("objective {i} is +inf")));
            }
        }
        Ok(ObjectiveVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Pareto dominance under maximization: `self` dominates `other` iff it
    /// is no worse in every objective and strictly better in at least one.
    /// Equal vectors do not dominate each other.
    pub fn dominates(&self, other: &ObjectiveVector) -> bool {
        debug_assert_eq!(self.0.len(), other.0.len(), "objective arity mismatch");
        let mut strictly_better = false;
        for (a, b) in self.0.iter().zip(&other.0) {
            if a < b {
                return false;
            }
            if a > b {
                strictly_better = true;
            }
        }
        strictly_better
    }
}

/// JSON-safe encoding: finite values as numbers, negative infinity as the
/// string `"-inf"` (JSON has no infinity literal and `serde_json` would
/// otherwise emit `null`).
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ObjectiveValueRepr {
    Num(f64),
    Tag(String),
}

impl Serialize for ObjectiveVector {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let repr: Vec<ObjectiveValueRepr> = self
            .0
            .iter()
            .map(|&v| {
                if v == f64::NEG_INFINITY {
                    ObjectiveValueRepr::Tag("-inf".into())
                } else {
                    ObjectiveValueRepr::Num(v)
                }
            })
            .collect();
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ObjectiveVector {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let repr = Vec::<ObjectiveValueRepr>::deserialize(deserializer)?;
        let mut values = Vec::with_capacity(repr.len());
        for item in repr {
            match item {
                ObjectiveValueRepr::Num(v) => values.push(v),
                ObjectiveValueRepr::Tag(t) if t == "-inf" => values.push(f64::NEG_INFINITY),
                ObjectiveValueRepr::Tag(t) => {
                    return Err(serde::de::Error::custom(format!(
                        "unknown objective value tag {t:?}"
                    )))
                }
            }
        }
        ObjectiveVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// Crowding distance: finite per-objective gap sum, or infinite for the
/// boundary members of a front. Encoded in JSON as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crowding {
    Finite(f64),
    Infinite,
}

impl Crowding {
    pub fn as_f64(&self) -> f64 {
        match self {
            Crowding::Finite(v) => *v,
            Crowding::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Crowding::Infinite)
    }
}

impl Serialize for Crowding {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Crowding::Finite(v) => serializer.serialize_f64(*v),
            Crowding::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Crowding {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        match ObjectiveValueRepr::deserialize(deserializer)? {
            ObjectiveValueRepr::Num(v) => Ok(Crowding::Finite(v)),
            ObjectiveValueRepr::Tag(t) if t == "inf" => Ok(Crowding::Infinite),
            ObjectiveValueRepr::Tag(t) => Err(serde::de::Error::custom(format!(
                "unknown crowding tag {t:?}"
            ))),
        }
    }
}

/// Which operator produced an individual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Init,
    Crossover,
    Mutation,
}

/// One member of a population: a genome plus everything the engine has
/// learned about it. Gateway transcripts are kept in memory for inspection
/// but never serialized (they are observability, not state).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Individual<G> {
    pub id: u64,
    pub genome: G,
    /// Ids of the parents ([] for initialization).
    pub parents: Vec<u64>,
    pub op: Op,
    pub objectives: Option<ObjectiveVector>,
    /// 1-based Pareto front number; 1 is the non-dominated front.
    pub rank: Option<u32>,
    pub crowding: Option<Crowding>,
    /// Generated model response this individual was scored on, if any.
    pub response: Option<String>,
    #[serde(skip)]
    pub transcripts: Vec<GatewayTranscript>,
}

impl<G> Individual<G> {
    pub fn objectives(&self) -> &ObjectiveVector {
        self.objectives
            .as_ref()
            .expect("individual not yet evaluated")
    }
}

/// Total order used for selection and truncation: lower rank first, then
/// larger crowding, then smaller id (the id makes it a total order, which
/// keeps runs reproducible). Panics if rank or crowding is missing — the
/// engine always sorts before comparing.
pub fn compare_rank_crowding(
    a_rank: u32,
    a_crowding: Crowding,
    a_id: u64,
    b_rank: u32,
    b_crowding: Crowding,
    b_id: u64,
) -> Ordering {
    a_rank
        .cmp(&b_rank)
        .then_with(|| {
            b_crowding
                .as_f64()
                .partial_cmp(&a_crowding.as_f64())
                .expect("crowding values are never NaN")
        })
        .then_with(|| a_id.cmp(&b_id))
}

/// Everything an evaluation produces for one genome.
pub struct Evaluation {
    pub objectives: ObjectiveVector,
    pub response: Option<String>,
    pub transcripts: Vec<GatewayTranscript>,
}

/// Scores genomes. Implementations must be thread-safe: the engine evaluates
/// a whole offspring batch concurrently (results are merged back in input
/// order, so concurrency never changes outcomes).
pub trait Evaluator<G>: Send + Sync {
    fn evaluate(&self, genome: &G) -> std::result::Result<Evaluation, EvalError>;
    /// Stable identifiers for the objective positions, for reports.
    fn objective_ids(&self) -> Vec<String>;
}

/// A freshly produced child genome, tagged with the operator that last
/// touched it (mutation only if it actually changed the rendered text).
pub struct Varied<G> {
    pub genome: G,
    pub op: Op,
}

/// Produces two children from two parents.
pub trait Variation<G>: Send + Sync {
    fn offspring(&self, a: &G, b: &G, generation: u32, rng: &mut ChaCha8Rng) -> [Varied<G>; 2];
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(values: &[f64]) -> ObjectiveVector {
        ObjectiveVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn dominance_requires_strict_improvement() {
        assert!(ov(&[1.0, 1.0]).dominates(&ov(&[0.5, 0.5])));
        assert!(ov(&[1.0, 1.0]).dominates(&ov(&[1.0, 0.0])));
        assert!(!ov(&[1.0, 1.0]).dominates(&ov(&[1.0, 1.0])));
        assert!(!ov(&[1.0, 0.0]).dominates(&ov(&[0.0, 1.0])));
        assert!(!ov(&[0.0, 1.0]).dominates(&ov(&[1.0, 0.0])));
    }

    #[test]
    fn dominance_handles_negative_infinity() {
        assert!(ov(&[0.0, 0.0]).dominates(&ov(&[f64::NEG_INFINITY, 0.0])));
        assert!(!ov(&[f64::NEG_INFINITY, 0.0]).dominates(&ov(&[f64::NEG_INFINITY, 0.0])));
    }

    #[test]
    fn objective_vector_rejects_nan_and_plus_inf() {
        assert!(ObjectiveVector::new(vec![f64::NAN]).is_err());
        assert!(ObjectiveVector::new(vec![f64::INFINITY]).is_err());
        assert!(ObjectiveVector::new(vec![]).is_err());
        assert!(ObjectiveVector::new(vec![f64::NEG_INFINITY]).is_ok());
    }

    #[test]
    fn objective_vector_json_round_trips_negative_infinity() {
        let v = ov(&[0.25, f64::NEG_INFINITY]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"[0.25,"-inf"]"#);
        let back: ObjectiveVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn crowding_json_round_trips_infinity() {
        let json = serde_json::to_string(&Crowding::Infinite).unwrap();
        assert_eq!(json, r#""inf""#);
        let back: Crowding = serde_json::from_str(&json).unwrap();
        assert!(back.is_infinite());
        let finite: Crowding = serde_json::from_str("1.5").unwrap();
        assert_eq!(finite, Crowding::Finite(1.5));
    }

    #[test]
    fn rank_crowding_comparison_is_total() {
        use Crowding::{Finite, Infinite};
        // Rank wins over crowding.
        assert_eq!(
            compare_rank_crowding(0, Finite(0.1), 5, 1, Infinite, 2),
            Ordering::Less
        );
        // Same rank: larger crowding first.
        assert_eq!(
            compare_rank_crowding(0, Infinite, 5, 0, Finite(3.0), 2),
            Ordering::Less
        );
        // Same rank and crowding: smaller id first.
        assert_eq!(
            compare_rank_crowding(0, Infinite, 5, 0, Infinite, 2),
            Ordering::Greater
        );
    }
}
