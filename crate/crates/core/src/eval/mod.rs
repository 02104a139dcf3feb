//! Scoring a genotype: render the prompt for every sampled instance, ask the
//! model, extract the answer, and reduce the records to
//! `[1 - accuracy, mean total tokens]`.

mod backend;
mod cache;
mod dataset;
mod extract;
mod http;

pub use backend::{
    default_simulated_models, whitespace_tokens, BackendError, Generation, ModelBackend, SimulatedBackend,
    SimulatedModel,
};
pub use cache::{prompt_hash, CacheKey, EvalCache};
pub use dataset::{draw_sample, sample_hash, DatasetError, EvalSample, Instance, TaskDataset};
pub use extract::extract_answer;
pub use http::{HttpBackend, HttpBackendConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{dedup_key_from_parts, Genotype};
use crate::grammar::{GrammarError, PromptGrammar};
use crate::nsga2::{Evaluator, ObjectiveVector};
use crate::run::EvaluationStats;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("backend failed on instance `{instance_id}`: {source}")]
    Backend {
        instance_id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
}

/// Outcome of one query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub instance_id: String,
    pub rendered_prompt: String,
    pub raw_output: String,
    pub extracted: Option<String>,
    pub correct: bool,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl EvaluationRecord {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub objectives: ObjectiveVector,
    pub records: Vec<EvaluationRecord>,
}

/// `[1 - correct/n, total_tokens/n]`, with the counts summed as integers
/// before the single division.
pub fn objectives_from_records(records: &[EvaluationRecord]) -> ObjectiveVector {
    let n = records.len() as u64;
    assert!(n > 0, "objectives need at least one record");
    let correct = records.iter().filter(|r| r.correct).count() as u64;
    let tokens: u64 = records.iter().map(EvaluationRecord::total_tokens).sum();
    ObjectiveVector(vec![(n - correct) as f64 / n as f64, tokens as f64 / n as f64])
}

/// Evaluates `genotype` on every instance of `sample`, consulting `cache`
/// before calling `backend`.
pub fn evaluate(
    genotype: &Genotype,
    grammar: &PromptGrammar,
    dataset: &TaskDataset,
    sample: &EvalSample,
    backend: &dyn ModelBackend,
    cache: &EvalCache,
) -> Result<Evaluation, EvalError> {
    if sample.is_empty() {
        return Err(EvalError::InvalidSample("sample is empty".into()));
    }
    if let Some(bad) = sample.indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(EvalError::InvalidSample(format!(
            "index {bad} beyond dataset of {}",
            dataset.len()
        )));
    }
    let prompt = genotype.instantiate(grammar)?;
    let identity = dedup_key_from_parts(&genotype.model.name, &prompt.text_template);
    let model = genotype.model.name.as_str();

    let mut records = Vec::with_capacity(sample.len());
    for &index in &sample.indices {
        let instance = &dataset.instances[index];
        let key = CacheKey::new(&identity, &instance.id);
        let record = cache.get_or_compute(&key, || {
            let rendered = prompt.render(&instance.query);
            let generation = backend
                .generate(model, &rendered)
                .map_err(|source| EvalError::Backend {
                    instance_id: instance.id.clone(),
                    source,
                })?;
            let extracted = extract_answer(&generation.text, &dataset.label_set).map(str::to_owned);
            Ok::<_, EvalError>(EvaluationRecord {
                instance_id: instance.id.clone(),
                correct: extracted.as_deref() == Some(instance.target.as_str()),
                extracted,
                rendered_prompt: rendered,
                raw_output: generation.text,
                input_tokens: generation.input_tokens,
                output_tokens: generation.output_tokens,
            })
        })?;
        records.push(record);
    }
    Ok(Evaluation {
        objectives: objectives_from_records(&records),
        records,
    })
}

/// [`Evaluator`] over a task dataset with a sample fixed for the whole run.
pub struct TaskEvaluator {
    pub dataset: TaskDataset,
    pub sample: EvalSample,
    pub backend: std::sync::Arc<dyn ModelBackend>,
    pub cache: std::sync::Arc<EvalCache>,
}

impl TaskEvaluator {
    pub fn new(dataset: TaskDataset, sample: EvalSample, backend: std::sync::Arc<dyn ModelBackend>) -> Self {
        TaskEvaluator {
            dataset,
            sample,
            backend,
            cache: std::sync::Arc::new(EvalCache::in_memory()),
        }
    }

    pub fn with_cache(mut self, cache: std::sync::Arc<EvalCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn evaluate_full(&self, genotype: &Genotype, grammar: &PromptGrammar) -> Result<Evaluation, EvalError> {
        evaluate(
            genotype,
            grammar,
            &self.dataset,
            &self.sample,
            self.backend.as_ref(),
            &self.cache,
        )
    }
}

impl Evaluator for TaskEvaluator {
    fn evaluate(&self, genotype: &Genotype, grammar: &PromptGrammar) -> Result<ObjectiveVector, EvalError> {
        Ok(self.evaluate_full(genotype, grammar)?.objectives)
    }

    fn stats(&self) -> EvaluationStats {
        EvaluationStats {
            evaluations: 0,
            backend_calls: self.cache.misses(),
            cache_hits: self.cache.hits(),
        }
    }

    fn sample(&self) -> Option<EvalSample> {
        Some(self.sample.clone())
    }
}
