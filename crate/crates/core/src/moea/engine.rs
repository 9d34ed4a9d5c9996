//! The elitist generational loop: select, vary, evaluate, and truncate.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    crowding_distance, fast_nondominated_sort, select_parent_pair, Evaluator, Individual,
    ObjectiveVector, Op, Variation,
};
use crate::error::{Error, Result};

/// Per-generation summary, written to the convergence log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generation: u32,
    /// Best (maximum) value of each objective over the current population.
    pub objective_best: Vec<f64>,
    /// Mean of each objective over the current population (negative infinity
    /// if any member carries the failure sentinel for that objective).
    pub objective_mean: Vec<f64>,
    /// Sizes of the Pareto fronts of the current population, best first.
    pub front_sizes: Vec<usize>,
}

/// Evolutionary engine over an arbitrary genome type. All randomness flows
/// through one owned random stream in a fixed draw order (selection, then
/// variation, per offspring pair), so a seed pins the entire run; evaluation
/// runs concurrently but results are merged back in offspring order.
pub struct Engine<G> {
    variation: Box<dyn Variation<G>>,
    evaluator: Arc<dyn Evaluator<G>>,
    population: Vec<Individual<G>>,
    generation: u32,
    next_id: u64,
    rng: ChaCha8Rng,
}

/// The serializable portion of an engine mid-run (for checkpointing).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "G: Serialize",
    deserialize = "G: serde::de::DeserializeOwned"
))]
pub struct EngineState<G> {
    pub population: Vec<Individual<G>>,
    pub generation: u32,
    pub next_id: u64,
    pub rng: ChaCha8Rng,
}

impl<G: Clone + Send + Sync> Engine<G> {
    /// Builds an engine and evaluates + ranks the given initial genomes as
    /// generation 0.
    pub fn initialize(
        variation: Box<dyn Variation<G>>,
        evaluator: Arc<dyn Evaluator<G>>,
        rng: ChaCha8Rng,
        genomes: Vec<G>,
    ) -> Result<Self> {
        if genomes.len() < 2 {
            return Err(Error::Config(format!(
                "population_size must be at least 2, got {}",
                genomes.len()
            )));
        }
        let mut engine = Engine {
            variation,
            evaluator,
            population: Vec::new(),
            generation: 0,
            next_id: 0,
            rng,
        };
        engine.population = genomes
            .into_iter()
            .map(|genome| Individual {
                id: engine.take_id(),
                genome,
                parents: vec![],
                op: Op::Init,
                objectives: None,
                rank: None,
                crowding: None,
                response: None,
                transcripts: vec![],
            })
            .collect();
        engine.evaluate_missing()?;
        engine.annotate_population()?;
        Ok(engine)
    }

    /// Rebuilds an engine from checkpointed state. The population must be
    /// fully evaluated and ranked (a checkpoint is only taken at a
    /// generation boundary).
    pub fn restore(
        variation: Box<dyn Variation<G>>,
        evaluator: Arc<dyn Evaluator<G>>,
        state: EngineState<G>,
    ) -> Result<Self> {
        if state
            .population
            .iter()
            .any(|ind| ind.objectives.is_none() || ind.rank.is_none() || ind.crowding.is_none())
        {
            return Err(Error::Checkpoint(
                "restored population is missing objectives or ranking".into(),
            ));
        }
        if let Some(max_id) = state.population.iter().map(|i| i.id).max() {
            if max_id >= state.next_id {
                return Err(Error::Checkpoint(
                    "next_id does not exceed existing individual ids".into(),
                ));
            }
        }
        Ok(Engine {
            variation,
            evaluator,
            population: state.population,
            generation: state.generation,
            next_id: state.next_id,
            rng: state.rng,
        })
    }

    pub fn population(&self) -> &[Individual<G>] {
        &self.population
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    /// Snapshots the mutable state for checkpointing.
    pub fn state(&self) -> EngineState<G> {
        EngineState {
            population: self.population.clone(),
            generation: self.generation,
            next_id: self.next_id,
            rng: self.rng.clone(),
        }
    }

    /// Pareto fronts of the current population as indices, best first.
    pub fn fronts(&self) -> Result<Vec<Vec<usize>>> {
        fast_nondominated_sort(&self.objective_matrix()?)
    }

    pub fn report(&self) -> Result<GenerationReport> {
        let points = self.objective_matrix()?;
        let arity = points[0].len();
        let n = points.len() as f64;
        let mut best = vec![f64::NEG_INFINITY; arity];
        let mut mean = vec![0.0f64; arity];
        for p in &points {
            for (k, &v) in p.values().iter().enumerate() {
                if v > best[k] {
                    best[k] = v;
                }
                mean[k] += v;
            }
        }
        for v in &mut mean {
            *v /= n;
        }
        let front_sizes = fast_nondominated_sort(&points)?
            .iter()
            .map(Vec::len)
            .collect();
        Ok(GenerationReport {
            generation: self.generation,
            objective_best: best,
            objective_mean: mean,
            front_sizes,
        })
    }

    /// Runs one generation: produces as many offspring as the population
    /// holds via tournament selection and variation, evaluates them, then
    /// keeps the best half of parents ∪ offspring by Pareto rank with
    /// crowding-based truncation of the one front that straddles the cut.
    pub fn step(&mut self) -> Result<GenerationReport> {
        let n = self.population.len();
        let child_generation = self.generation + 1;

        // Selection and variation draw from the single rng sequentially.
        let mut offspring: Vec<Individual<G>> = Vec::with_capacity(n + 1);
        while offspring.len() < n {
            let (a, b) = select_parent_pair(&self.population, &mut self.rng)?;
            let parent_ids = vec![self.population[a].id, self.population[b].id];
            let [c1, c2] = self.variation.offspring(
                &self.population[a].genome,
                &self.population[b].genome,
                child_generation,
                &mut self.rng,
            );
            for varied in [c1, c2] {
                offspring.push(Individual {
                    id: self.take_id(),
                    genome: varied.genome,
                    parents: parent_ids.clone(),
                    op: varied.op,
                    objectives: None,
                    rank: None,
                    crowding: None,
                    response: None,
                    transcripts: vec![],
                });
            }
        }
        offspring.truncate(n);

        // Evaluate the batch, then merge into the combined pool.
        let mut combined = std::mem::take(&mut self.population);
        combined.append(&mut offspring);
        self.population = combined;
        self.evaluate_missing()?;

        // Elitist truncation of the combined pool back down to n.
        let points = self.objective_matrix()?;
        let fronts = fast_nondominated_sort(&points)?;
        let mut keep: Vec<usize> = Vec::with_capacity(n);
        for front in &fronts {
            if keep.len() + front.len() <= n {
                keep.extend_from_slice(front);
                if keep.len() == n {
                    break;
                }
            } else {
                let crowding = crowding_distance(&points, front)?;
                let mut by_crowding: Vec<usize> = (0..front.len()).collect();
                by_crowding.sort_by(|&x, &y| {
                    crowding[y]
                        .as_f64()
                        .partial_cmp(&crowding[x].as_f64())
                        .expect("crowding is never NaN")
                        .then(
                            self.population[front[x]]
                                .id
                                .cmp(&self.population[front[y]].id),
                        )
                });
                keep.extend(by_crowding[..n - keep.len()].iter().map(|&w| front[w]));
                break;
            }
        }
        keep.sort_unstable();
        let mut survivors = Vec::with_capacity(n);
        let mut keep_iter = keep.into_iter().peekable();
        for (idx, ind) in std::mem::take(&mut self.population).into_iter().enumerate() {
            if keep_iter.peek() == Some(&idx) {
                keep_iter.next();
                survivors.push(ind);
            }
        }
        self.population = survivors;
        self.generation = child_generation;
        self.annotate_population()?;
        self.report()
    }

    fn take_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn objective_matrix(&self) -> Result<Vec<ObjectiveVector>> {
        self.population
            .iter()
            .map(|ind| {
                ind.objectives
                    .clone()
                    .ok_or_else(|| Error::Contract("individual not yet evaluated".into()))
            })
            .collect()
    }

    /// Evaluates every individual that has no objectives yet, concurrently,
    /// and merges results back by position. The first failure (in population
    /// order, independent of scheduling) aborts the generation.
    fn evaluate_missing(&mut self) -> Result<()> {
        let pending: Vec<usize> = self
            .population
            .iter()
            .enumerate()
            .filter(|(_, ind)| ind.objectives.is_none())
            .map(|(i, _)| i)
            .collect();
        if pending.is_empty() {
            return Ok(());
        }
        let evaluator = Arc::clone(&self.evaluator);
        let results: Vec<_> = pending
            .par_iter()
            .map(|&i| evaluator.evaluate(&self.population[i].genome))
            .collect();
        for (&i, result) in pending.iter().zip(results) {
            match result {
                Ok(eval) => {
                    let ind = &mut self.population[i];
                    ind.objectives = Some(eval.objectives);
                    ind.response = eval.response;
                    ind.transcripts = eval.transcripts;
                }
                Err(source) => {
                    return Err(Error::Evaluation {
                        individual: self.population[i].id,
                        source,
                    })
                }
            }
        }
        Ok(())
    }

    /// Recomputes rank and crowding annotations for the current population.
    /// Ranks are 1-based: rank 1 is the non-dominated front.
    fn annotate_population(&mut self) -> Result<()> {
        let points = self.objective_matrix()?;
        let fronts = fast_nondominated_sort(&points)?;
        for (front_idx, front) in fronts.iter().enumerate() {
            let crowding = crowding_distance(&points, front)?;
            for (&idx, c) in front.iter().zip(crowding) {
                self.population[idx].rank = Some(front_idx as u32 + 1);
                self.population[idx].crowding = Some(c);
            }
        }
        Ok(())
    }
}
