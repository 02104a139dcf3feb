//! Output of one evolutionary run and its JSON file form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::EvalSample;
use crate::genome::ModelPool;
use crate::grammar::PromptGrammar;
use crate::nsga2::{EvaluatedIndividual, RunConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationStats {
    /// Genotype evaluations requested by the engine.
    pub evaluations: u64,
    /// Queries that reached the model backend.
    pub backend_calls: u64,
    /// Queries answered from the cache.
    pub cache_hits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSnapshot {
    pub generation: usize,
    pub new_evaluations: usize,
    /// Population after environmental selection, ranks and crowding set.
    pub population: Vec<EvaluatedIndividual>,
}

/// Everything one run produced. Contains no wall-clock data so that equal
/// seeds give byte-identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: usize,
    pub seed: u64,
    pub task_id: String,
    pub config: RunConfig,
    pub models: ModelPool,
    pub grammar: PromptGrammar,
    #[serde(default)]
    pub sample: Option<EvalSample>,
    pub history: Vec<GenerationSnapshot>,
    /// Non-dominated members of the last population, one per dedup key.
    pub final_front: Vec<EvaluatedIndividual>,
    pub stats: EvaluationStats,
}

impl RunResult {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run result serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn read(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(std::io::Error::other)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json_string())
    }

    /// Final population (last history entry).
    pub fn final_population(&self) -> &[EvaluatedIndividual] {
        self.history.last().map(|s| s.population.as_slice()).unwrap_or(&[])
    }
}
