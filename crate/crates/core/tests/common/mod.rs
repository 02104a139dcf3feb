#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use paretoprompt::campaign::{prepare, ExperimentConfig, Prepared};
use paretoprompt::eval::{draw_sample, TaskEvaluator};
use paretoprompt::genome::{dedup_key, Genotype, ModelPool};
use paretoprompt::grammar::PromptGrammar;
use paretoprompt::nsga2::Evaluator;
use serde::{Deserialize, Serialize};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
}

pub fn fixture_config() -> ExperimentConfig {
    ExperimentConfig::load(fixture_dir().join("config.json")).unwrap()
}

pub fn fixture() -> Prepared {
    prepare(&fixture_config()).unwrap()
}

/// a ≤ b everywhere and a < b somewhere.
pub fn brute_dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for k in 0..a.len() {
        if a[k] > b[k] {
            return false;
        }
        if a[k] < b[k] {
            strictly = true;
        }
    }
    strictly
}

/// Indices no other point dominates, ascending.
pub fn brute_nondominated(points: &[Vec<f64>]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !(0..points.len()).any(|j| brute_dominates(&points[j], &points[i])))
        .collect()
}

/// Repeated removal of the non-dominated set.
pub fn brute_partition(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| brute_dominates(&points[j], &points[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// Area dominated by `points` and bounded by `reference`, both objectives
/// minimized.
pub fn hypervolume_2d(points: &[Vec<f64>], reference: [f64; 2]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p[0], p[1]))
        .filter(|p| p.0 <= reference[0] && p.1 <= reference[1])
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    let mut ceiling = reference[1];
    for (x, y) in pts {
        if y < ceiling {
            area += (reference[0] - x) * (ceiling - y);
            ceiling = y;
        }
    }
    area
}

/// Every (model, rule, variant choice) genotype of the space.
pub fn enumerate(grammar: &PromptGrammar, models: &ModelPool) -> Vec<Genotype> {
    let mut out = Vec::new();
    for m in 0..models.len() {
        for rule in &grammar.rules {
            let kinds: Vec<_> = rule.components().collect();
            let mut choice = vec![0usize; kinds.len()];
            loop {
                out.push(Genotype {
                    model: models.get(m),
                    rule_id: rule.rule_id,
                    selections: kinds.iter().copied().zip(choice.iter().copied()).collect(),
                });
                let mut k = 0;
                while k < kinds.len() {
                    choice[k] += 1;
                    if choice[k] < grammar.pool(kinds[k]).len() {
                        break;
                    }
                    choice[k] = 0;
                    k += 1;
                }
                if k == kinds.len() {
                    break;
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenMember {
    pub model: String,
    pub rule_id: usize,
    pub selections: BTreeMap<String, usize>,
    pub objectives: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Golden {
    pub space_size: usize,
    /// Per-objective maxima over the whole space.
    pub reference: [f64; 2],
    pub front: Vec<GoldenMember>,
}

/// Scores every genotype of the fixture space and keeps the non-dominated,
/// text-distinct ones, sorted by objectives.
pub fn exhaustive(p: &Prepared) -> Golden {
    let sample = draw_sample(&p.dataset, p.config.sample_size, p.config.base_seed).unwrap();
    let ev = TaskEvaluator::new(p.dataset.clone(), sample, p.backend.clone());
    let space = enumerate(&p.grammar, &p.models);
    let scored: Vec<(Genotype, Vec<f64>)> = space
        .iter()
        .map(|g| (g.clone(), ev.evaluate(g, &p.grammar).unwrap().0))
        .collect();
    let points: Vec<Vec<f64>> = scored.iter().map(|s| s.1.clone()).collect();
    let reference = [
        points.iter().map(|p| p[0]).fold(f64::MIN, f64::max),
        points.iter().map(|p| p[1]).fold(f64::MIN, f64::max),
    ];
    let mut seen = std::collections::HashSet::new();
    let mut front: Vec<GoldenMember> = brute_nondominated(&points)
        .into_iter()
        .filter(|&i| seen.insert(dedup_key(&scored[i].0, &p.grammar).unwrap()))
        .map(|i| GoldenMember {
            model: scored[i].0.model.name.clone(),
            rule_id: scored[i].0.rule_id,
            selections: scored[i]
                .0
                .selections
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            objectives: scored[i].1.clone(),
        })
        .collect();
    front.sort_by(|a, b| a.objectives.partial_cmp(&b.objectives).unwrap());
    Golden {
        space_size: space.len(),
        reference,
        front,
    }
}

pub fn golden_path() -> PathBuf {
    fixture_dir().join("golden_front.json")
}

pub fn load_golden() -> Golden {
    serde_json::from_str(&std::fs::read_to_string(golden_path()).unwrap()).unwrap()
}
