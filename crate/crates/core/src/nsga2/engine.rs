use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{select_survivors, tournament_select, EvaluatedIndividual, ObjectiveVector};
use crate::eval::{EvalError, EvalSample};
use crate::genome::{crossover, dedup_key, mutate, random_genotype, Genotype, ModelPool, OperatorConfig};
use crate::grammar::{GrammarError, PromptGrammar};
use crate::run::{EvaluationStats, GenerationSnapshot, RunResult};

/// Maps a genotype to its objective vector.
///
/// Implementations must be deterministic for a run to be reproducible.
/// `evaluate` may be called from several threads at once.
pub trait Evaluator: Sync {
    fn evaluate(&self, genotype: &Genotype, grammar: &PromptGrammar) -> Result<ObjectiveVector, EvalError>;

    /// Cumulative counters; `evolve` reports the difference over a run.
    fn stats(&self) -> EvaluationStats {
        EvaluationStats::default()
    }

    /// The fixed instance sample every genotype is scored on, if any.
    fn sample(&self) -> Option<EvalSample> {
        None
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, genotype: &Genotype, grammar: &PromptGrammar) -> Result<ObjectiveVector, EvalError> {
        (**self).evaluate(genotype, grammar)
    }

    fn stats(&self) -> EvaluationStats {
        (**self).stats()
    }

    fn sample(&self) -> Option<EvalSample> {
        (**self).sample()
    }
}

fn default_objectives() -> Vec<String> {
    vec!["inverse_accuracy".into(), "avg_total_tokens".into()]
}

fn default_parallelism() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub population_size: usize,
    pub generations: usize,
    #[serde(default)]
    pub operators: OperatorConfig,
    pub seed: u64,
    pub sample_size: usize,
    /// Names of the minimized objectives, in vector order.
    #[serde(default = "default_objectives")]
    pub objectives: Vec<String>,
    /// Upper bound on concurrent evaluations.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            population_size: 30,
            generations: 10,
            operators: OperatorConfig::default(),
            seed: 0,
            sample_size: 100,
            objectives: default_objectives(),
            parallelism: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |m: String| Err(EvolveError::InvalidConfig(m));
        if self.population_size < 2 || !self.population_size.is_multiple_of(2) {
            return bad(format!(
                "population_size must be even and at least 2, got {}",
                self.population_size
            ));
        }
        if self.generations < 1 {
            return bad("generations must be at least 1".into());
        }
        if self.sample_size < 1 {
            return bad("sample_size must be at least 1".into());
        }
        if self.parallelism < 1 {
            return bad("parallelism must be at least 1".into());
        }
        if self.objectives.is_empty() {
            return bad("at least one objective is required".into());
        }
        self.operators
            .validate()
            .map_err(|e| EvolveError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("evaluation failed in generation {generation} for individual {individual} (model {model}, rule {rule_id}): {source}")]
    Evaluation {
        generation: usize,
        individual: usize,
        model: String,
        rule_id: usize,
        #[source]
        source: EvalError,
    },
    #[error("evaluator returned {got:?} for individual {individual}; expected {expected} finite values")]
    BadObjectives {
        individual: usize,
        expected: usize,
        got: Vec<f64>,
    },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

struct Engine<'a, E: ?Sized> {
    grammar: &'a PromptGrammar,
    evaluator: &'a E,
    cfg: &'a RunConfig,
    pool: Option<rayon::ThreadPool>,
    evaluations: u64,
}

impl<E: Evaluator + ?Sized> Engine<'_, E> {
    fn evaluate_all(
        &mut self,
        generation: usize,
        genotypes: Vec<Genotype>,
    ) -> Result<Vec<EvaluatedIndividual>, EvolveError> {
        let (grammar, evaluator) = (self.grammar, self.evaluator);
        let job = |g: &Genotype| evaluator.evaluate(g, grammar);
        // Results are collected in index order whatever the thread count.
        let results: Vec<Result<ObjectiveVector, EvalError>> = match &self.pool {
            Some(pool) => pool.install(|| genotypes.par_iter().map(job).collect()),
            None => genotypes.iter().map(job).collect(),
        };
        self.evaluations += genotypes.len() as u64;

        let dims = self.cfg.objectives.len();
        let mut out = Vec::with_capacity(genotypes.len());
        for (individual, (genotype, result)) in genotypes.into_iter().zip(results).enumerate() {
            let objectives = result.map_err(|source| EvolveError::Evaluation {
                generation,
                individual,
                model: genotype.model.name.clone(),
                rule_id: genotype.rule_id,
                source,
            })?;
            if objectives.len() != dims || !objectives.is_finite() {
                return Err(EvolveError::BadObjectives {
                    individual,
                    expected: dims,
                    got: objectives.0,
                });
            }
            let template = genotype.instantiate(grammar)?.text_template;
            out.push(EvaluatedIndividual {
                genotype,
                template,
                objectives,
                born: generation,
                rank: None,
                crowding: None,
            });
        }
        Ok(out)
    }
}

fn stamp(pop: Vec<EvaluatedIndividual>, n: usize, rank_offset: usize) -> Vec<EvaluatedIndividual> {
    let survivors = select_survivors(&pop, n).expect("objective dimensions checked at evaluation");
    let mut slots: Vec<Option<EvaluatedIndividual>> = pop.into_iter().map(Some).collect();
    survivors
        .indices
        .iter()
        .zip(survivors.ranks.iter().zip(&survivors.crowding))
        .map(|(&i, (&rank, &crowding))| {
            let mut ind = slots[i].take().expect("survivor indices are distinct");
            ind.rank = Some(rank + rank_offset);
            ind.crowding = Some(crowding);
            ind
        })
        .collect()
}

/// Environmental selection: keeps `n` members of `pop` and stamps their
/// rank and crowding.
///
/// Copies of an individual already seen earlier in `pop` are set aside and
/// only used to fill the population when fewer than `n` distinct
/// individuals exist. Such copies are ranked after every distinct member.
pub(crate) fn survive(pop: Vec<EvaluatedIndividual>, n: usize) -> Vec<EvaluatedIndividual> {
    let mut seen = HashSet::new();
    let (distinct, copies): (Vec<_>, Vec<_>) = pop.into_iter().partition(|ind| seen.insert(ind.dedup_key()));
    if distinct.len() >= n {
        return stamp(distinct, n, 0);
    }
    let d = distinct.len();
    let mut out = stamp(distinct, d, 0);
    let offset = out.iter().filter_map(|i| i.rank).max().map_or(0, |r| r + 1);
    out.extend(stamp(copies, n - d, offset));
    out
}

/// Up to `n` distinct random genotypes; falls back to repeats when the space
/// is too small to supply them within a bounded number of draws.
fn initial_genotypes<R: rand::Rng>(
    grammar: &PromptGrammar,
    models: &ModelPool,
    n: usize,
    rng: &mut R,
) -> Vec<Genotype> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut spares = Vec::new();
    for _ in 0..n * 50 {
        if out.len() == n {
            break;
        }
        let g = random_genotype(grammar, models, rng);
        let key = dedup_key(&g, grammar).expect("random genotypes are valid");
        if seen.insert(key) {
            out.push(g);
        } else if spares.len() < n {
            spares.push(g);
        }
    }
    let missing = n - out.len();
    out.extend(spares.into_iter().take(missing));
    while out.len() < n {
        out.push(random_genotype(grammar, models, rng));
    }
    out
}

/// Extra mutation rounds for an offspring that repeats an individual of the
/// current population or an earlier sibling.
const NOVELTY_RETRIES: usize = 10;

fn generation_rng(seed: u64, generation: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(generation as u64);
    rng
}

/// Runs NSGA-II over the (model, prompt) space. See [`evolve_with`].
pub fn evolve<E: Evaluator + ?Sized>(
    grammar: &PromptGrammar,
    models: &ModelPool,
    evaluator: &E,
    cfg: &RunConfig,
) -> Result<RunResult, EvolveError> {
    evolve_with(grammar, models, evaluator, cfg, |_| {})
}

/// Runs NSGA-II and calls `on_generation` after every generation
/// (generation 0 is the initial population).
///
/// Each generation draws from its own ChaCha8 stream (`seed`, stream =
/// generation index), so a run is a pure function of the seed, the search
/// space and the evaluator. The returned `run_id` is 0; campaign code
/// overwrites it.
pub fn evolve_with<E, F>(
    grammar: &PromptGrammar,
    models: &ModelPool,
    evaluator: &E,
    cfg: &RunConfig,
    mut on_generation: F,
) -> Result<RunResult, EvolveError>
where
    E: Evaluator + ?Sized,
    F: FnMut(&GenerationSnapshot),
{
    cfg.validate()?;
    let stats_before = evaluator.stats();
    let pool = if cfg.parallelism > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.parallelism)
                .build()
                .map_err(|e| EvolveError::InvalidConfig(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let mut engine = Engine {
        grammar,
        evaluator,
        cfg,
        pool,
        evaluations: 0,
    };
    let n = cfg.population_size;
    let ops = &cfg.operators;

    let mut rng = generation_rng(cfg.seed, 0);
    let initial = initial_genotypes(grammar, models, n, &mut rng);
    let mut population = survive(engine.evaluate_all(0, initial)?, n);
    let mut history = Vec::with_capacity(cfg.generations + 1);
    let snapshot = GenerationSnapshot {
        generation: 0,
        new_evaluations: n,
        population: population.clone(),
    };
    on_generation(&snapshot);
    history.push(snapshot);

    for generation in 1..=cfg.generations {
        let mut rng = generation_rng(cfg.seed, generation);
        let parents: Vec<usize> = (0..n).map(|_| tournament_select(&population, &mut rng)).collect();
        let mut seen: HashSet<String> = population.iter().map(EvaluatedIndividual::dedup_key).collect();
        let mut offspring = Vec::with_capacity(n);
        for pair in parents.chunks_exact(2) {
            let (a, b) = crossover(
                &population[pair[0]].genotype,
                &population[pair[1]].genotype,
                ops,
                &mut rng,
            );
            for child in [a, b] {
                let mut child = mutate(&child, grammar, models, ops, &mut rng);
                for _ in 0..NOVELTY_RETRIES {
                    if !seen.contains(&dedup_key(&child, grammar)?) {
                        break;
                    }
                    child = mutate(&child, grammar, models, ops, &mut rng);
                }
                seen.insert(dedup_key(&child, grammar)?);
                offspring.push(child);
            }
        }
        let offspring = engine.evaluate_all(generation, offspring)?;
        population.extend(offspring);
        population = survive(population, n);
        let snapshot = GenerationSnapshot {
            generation,
            new_evaluations: n,
            population: population.clone(),
        };
        on_generation(&snapshot);
        history.push(snapshot);
    }

    let mut seen = HashSet::new();
    let final_front: Vec<EvaluatedIndividual> = population
        .iter()
        .filter(|ind| ind.rank == Some(0))
        .filter(|ind| seen.insert(ind.dedup_key()))
        .cloned()
        .collect();

    let stats_after = evaluator.stats();
    Ok(RunResult {
        run_id: 0,
        seed: cfg.seed,
        task_id: grammar.task_id.clone(),
        config: cfg.clone(),
        models: models.clone(),
        grammar: grammar.clone(),
        sample: evaluator.sample(),
        history,
        final_front,
        stats: EvaluationStats {
            evaluations: engine.evaluations,
            backend_calls: stats_after.backend_calls - stats_before.backend_calls,
            cache_hits: stats_after.cache_hits - stats_before.cache_hits,
        },
    })
}
