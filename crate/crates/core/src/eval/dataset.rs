use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid dataset at `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("sample of {requested} requested but the dataset has {available} instances")]
    SampleTooLarge { requested: usize, available: usize },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> DatasetError {
    DatasetError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub query: String,
    pub target: String,
}

/// A binary-choice task: two canonical labels and labelled queries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDataset {
    pub task_id: String,
    pub label_set: Vec<String>,
    pub instances: Vec<Instance>,
}

impl TaskDataset {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.label_set.len() != 2 {
            return Err(invalid(
                "label_set",
                format!("binary tasks need exactly 2 labels, found {}", self.label_set.len()),
            ));
        }
        let (a, b) = (&self.label_set[0], &self.label_set[1]);
        if a.trim().is_empty() || b.trim().is_empty() || a.to_lowercase() == b.to_lowercase() {
            return Err(invalid("label_set", "labels must be non-empty and distinct"));
        }
        if self.instances.is_empty() {
            return Err(invalid("instances", "no instances"));
        }
        let mut ids = HashSet::new();
        for (i, inst) in self.instances.iter().enumerate() {
            if !ids.insert(inst.id.as_str()) {
                return Err(invalid(
                    format!("instances[{i}].id"),
                    format!("duplicate id `{}`", inst.id),
                ));
            }
            if !self.label_set.contains(&inst.target) {
                return Err(invalid(
                    format!("instances[{i}].target"),
                    format!("`{}` is not in label_set", inst.target),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, DatasetError> {
        let ds: TaskDataset = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serialization cannot fail")
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Converts a BIG-bench task document into a dataset.
    ///
    /// Each example needs an `input` and either `target_scores` (the label
    /// with the highest score is the target) or a single `target` string.
    /// Across all examples exactly two labels must occur. Label order
    /// follows first appearance.
    pub fn from_bigbench_json(text: &str, task_id: Option<&str>) -> Result<Self, DatasetError> {
        #[derive(Deserialize)]
        struct Task {
            name: Option<String>,
            examples: Vec<Example>,
        }
        #[derive(Deserialize)]
        struct Example {
            input: String,
            #[serde(default)]
            target_scores: Option<BTreeMap<String, f64>>,
            #[serde(default)]
            target: Option<serde_json::Value>,
        }

        let task: Task = serde_json::from_str(text)?;
        let task_id = task_id
            .map(str::to_owned)
            .or(task.name)
            .ok_or_else(|| invalid("name", "no task id given and the document has no name"))?;
        let mut labels: Vec<String> = Vec::new();
        let mut note = |l: &str| {
            if !labels.iter().any(|x| x == l) {
                labels.push(l.to_owned());
            }
        };
        let mut instances = Vec::with_capacity(task.examples.len());
        for (i, ex) in task.examples.iter().enumerate() {
            let field = format!("examples[{i}]");
            let target = if let Some(scores) = &ex.target_scores {
                for k in scores.keys() {
                    note(k);
                }
                let best = scores.values().cloned().fold(f64::NEG_INFINITY, f64::max);
                let winners: Vec<&String> = scores.iter().filter(|(_, v)| **v == best).map(|(k, _)| k).collect();
                if winners.len() != 1 {
                    return Err(invalid(field, "target_scores has no unique best label"));
                }
                winners[0].clone()
            } else {
                let t = match &ex.target {
                    Some(serde_json::Value::String(s)) => s.clone(),
                    Some(serde_json::Value::Array(v)) if v.len() == 1 && v[0].is_string() => {
                        v[0].as_str().unwrap().to_owned()
                    }
                    _ => return Err(invalid(field, "needs target_scores or a single string target")),
                };
                note(&t);
                t
            };
            instances.push(Instance {
                id: i.to_string(),
                query: ex.input.clone(),
                target,
            });
        }
        let ds = TaskDataset {
            task_id,
            label_set: labels,
            instances,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Stream reserved for instance sampling, disjoint from the per-generation
/// operator streams.
const SAMPLE_STREAM: u64 = 0x5341_4d50_4c45;

/// The instance indices every genotype of a run is scored on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub seed: u64,
    pub indices: Vec<usize>,
    /// Digest of `indices`, recorded so runs can be checked for a shared sample.
    pub hash: String,
}

impl EvalSample {
    pub fn new(seed: u64, indices: Vec<usize>) -> Self {
        let hash = sample_hash(&indices);
        EvalSample { seed, indices, hash }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn sample_hash(indices: &[usize]) -> String {
    let mut h = Sha256::new();
    for i in indices {
        h.update((*i as u64).to_le_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Draws `sample_size` distinct instance indices, uniformly and
/// deterministically from `seed`.
pub fn draw_sample(dataset: &TaskDataset, sample_size: usize, seed: u64) -> Result<EvalSample, DatasetError> {
    if sample_size > dataset.len() {
        return Err(DatasetError::SampleTooLarge {
            requested: sample_size,
            available: dataset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLE_STREAM);
    let indices = rand::seq::index::sample(&mut rng, dataset.len(), sample_size).into_vec();
    Ok(EvalSample::new(seed, indices))
}
