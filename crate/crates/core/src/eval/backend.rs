use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::dataset::TaskDataset;

/// Text plus token usage returned by one model call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// A model endpoint: `generate(model, prompt)` answers one fully rendered
/// prompt.
pub trait ModelBackend: Send + Sync {
    fn generate(&self, model: &str, prompt: &str) -> Result<Generation, BackendError>;
}

pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedModel {
    pub name: String,
    /// Baseline probability of answering correctly.
    pub skill: f64,
    /// Minimum number of filler words after the answer.
    pub verbosity: u64,
}

impl SimulatedModel {
    pub fn new(name: impl Into<String>, skill: f64, verbosity: u64) -> Self {
        SimulatedModel {
            name: name.into(),
            skill,
            verbosity,
        }
    }
}

/// Built-in simulated model profiles.
pub fn default_simulated_models() -> Vec<SimulatedModel> {
    vec![
        SimulatedModel::new("sim-tiny", 0.50, 1),
        SimulatedModel::new("sim-small", 0.56, 3),
        SimulatedModel::new("sim-base", 0.62, 8),
        SimulatedModel::new("sim-large", 0.68, 16),
    ]
}

const FILLER: [&str; 8] = [
    "because",
    "the",
    "statement",
    "reads",
    "that",
    "way",
    "given",
    "context",
];
const REFUSAL: &str = "I cannot decide.";
const REFUSAL_RATE: f64 = 0.02;

/// Offline, deterministic stand-in for a language model.
///
/// The output is a pure function of `(model, prompt)`. If the prompt
/// contains a query from the answer key, the model answers correctly with a
/// probability set by its skill plus a bonus for each prompt line (the
/// bonus is a hash of model and line, so models favour different
/// components). Otherwise it picks a label by hash. The answer is followed
/// by filler whose length grows with the model's verbosity. Token counts
/// are whitespace counts.
#[derive(Clone, Debug)]
pub struct SimulatedBackend {
    labels: Vec<String>,
    /// (query, target), longest query first.
    answer_key: Vec<(String, String)>,
    models: BTreeMap<String, SimulatedModel>,
}

fn unit_hash(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

impl SimulatedBackend {
    pub fn new(labels: Vec<String>, answer_key: Vec<(String, String)>) -> Self {
        let mut answer_key = answer_key;
        answer_key.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        SimulatedBackend {
            labels,
            answer_key,
            models: default_simulated_models()
                .into_iter()
                .map(|m| (m.name.clone(), m))
                .collect(),
        }
    }

    pub fn for_dataset(dataset: &TaskDataset) -> Self {
        Self::new(
            dataset.label_set.clone(),
            dataset
                .instances
                .iter()
                .map(|i| (i.query.clone(), i.target.clone()))
                .collect(),
        )
    }

    /// Replaces the model table.
    pub fn with_models(mut self, models: impl IntoIterator<Item = SimulatedModel>) -> Self {
        self.models = models.into_iter().map(|m| (m.name.clone(), m)).collect();
        self
    }

    pub fn knows_model(&self, name: &str) -> bool {
        self.models.contains_key(name)
    }

    fn competence(&self, model: &SimulatedModel, instructions: &str) -> f64 {
        let bonus: f64 = instructions
            .split('\n')
            .filter(|l| !l.trim().is_empty())
            .map(|line| 0.12 * unit_hash(&[&model.name, "line", line]) - 0.03)
            .sum();
        (model.skill + bonus).clamp(0.02, 0.98)
    }
}

impl ModelBackend for SimulatedBackend {
    fn generate(&self, model_name: &str, prompt: &str) -> Result<Generation, BackendError> {
        let model = self
            .models
            .get(model_name)
            .ok_or_else(|| BackendError::UnknownModel(model_name.to_owned()))?;
        let known = self
            .answer_key
            .iter()
            .find(|(q, _)| !q.is_empty() && prompt.contains(q.as_str()));

        let answer = if unit_hash(&[model_name, "refuse", prompt]) < REFUSAL_RATE || self.labels.is_empty() {
            None
        } else {
            let roll = unit_hash(&[model_name, "answer", prompt]);
            Some(match known {
                Some((query, target)) => {
                    let instructions = prompt.replacen(query.as_str(), "", 1);
                    if roll < self.competence(model, &instructions) {
                        target.clone()
                    } else {
                        self.labels.iter().find(|l| *l != target).unwrap_or(target).clone()
                    }
                }
                None => self.labels[(roll * self.labels.len() as f64) as usize % self.labels.len()].clone(),
            })
        };

        let extra = (unit_hash(&[model_name, "length", prompt]) * 3.0) as u64;
        let filler: Vec<&str> = (0..model.verbosity + extra)
            .map(|i| FILLER[i as usize % FILLER.len()])
            .collect();
        let text = match answer {
            Some(label) if filler.is_empty() => label,
            Some(label) => format!("{label} {}", filler.join(" ")),
            None => REFUSAL.to_owned(),
        };
        Ok(Generation {
            input_tokens: whitespace_tokens(prompt),
            output_tokens: whitespace_tokens(&text),
            text,
        })
    }
}
