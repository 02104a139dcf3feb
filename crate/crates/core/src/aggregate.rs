//! Post-processing across independent runs: pool the final fronts, drop
//! duplicate (model, prompt text) pairs, keep the non-dominated remainder
//! and summarize it.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::ModelPool;
use crate::grammar::{ComponentKind, PromptGrammar};
use crate::nsga2::{nondominated_indices, EvaluatedIndividual};
use crate::run::RunResult;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("no run results to aggregate")]
    NoRuns,
    #[error("run {run_id} does not match run {reference_run}: different {field}")]
    Mismatch {
        run_id: usize,
        reference_run: usize,
        field: &'static str,
    },
    #[error("empty front: nothing to summarize")]
    EmptyFront,
    #[error("knee selection needs 2 objectives, got {0}")]
    Dimensions(usize),
}

/// A front member with the run it came from and its position in that run's
/// final set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontMember {
    pub run_id: usize,
    pub index: usize,
    #[serde(flatten)]
    pub individual: EvaluatedIndividual,
}

impl AsRef<[f64]> for FrontMember {
    fn as_ref(&self) -> &[f64] {
        self.individual.objectives.values()
    }
}

impl FrontMember {
    pub fn model(&self) -> &str {
        &self.individual.genotype.model.name
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - self.individual.objectives.0[0]
    }

    pub fn tokens(&self) -> f64 {
        self.individual.objectives.0[1]
    }
}

/// Summary of a front: three representative members (indices into the
/// front) plus per-model and per-component member counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontAnalysis {
    pub best_accuracy: usize,
    pub lowest_tokens: usize,
    pub knee: usize,
    pub model_counts: BTreeMap<String, usize>,
    pub component_counts: BTreeMap<ComponentKind, usize>,
}

impl FrontAnalysis {
    /// Models sorted by descending count, then name.
    pub fn ranked_models(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<_> = self.model_counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        v
    }

    /// Components sorted by descending count, then kind order.
    pub fn ranked_components(&self) -> Vec<(ComponentKind, usize)> {
        let mut v: Vec<_> = self.component_counts.iter().map(|(k, v)| (*k, *v)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalFront {
    pub task_id: String,
    pub models: ModelPool,
    pub objectives: Vec<String>,
    pub run_ids: Vec<usize>,
    pub members: Vec<FrontMember>,
    /// Absent only when `members` is empty.
    pub analysis: Option<FrontAnalysis>,
}

impl GlobalFront {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("front serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn read(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

fn check_consistent(results: &[RunResult]) -> Result<(), AggregateError> {
    let first = results.first().ok_or(AggregateError::NoRuns)?;
    for r in &results[1..] {
        let field = if r.task_id != first.task_id {
            "task"
        } else if r.grammar != first.grammar {
            "grammar"
        } else if r.models != first.models {
            "model pool"
        } else if r.config.objectives != first.config.objectives {
            "objectives"
        } else {
            continue;
        };
        return Err(AggregateError::Mismatch {
            run_id: r.run_id,
            reference_run: first.run_id,
            field,
        });
    }
    Ok(())
}

/// Union of the runs' final sets ordered by (run id, index), keeping the
/// first member of every dedup key.
pub fn merge_and_dedup(results: &[RunResult]) -> Result<Vec<FrontMember>, AggregateError> {
    check_consistent(results)?;
    let mut order: Vec<&RunResult> = results.iter().collect();
    order.sort_by_key(|r| r.run_id);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in order {
        for (index, ind) in r.final_front.iter().enumerate() {
            if seen.insert(ind.dedup_key()) {
                out.push(FrontMember {
                    run_id: r.run_id,
                    index,
                    individual: ind.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Non-dominated members, in input order.
pub fn final_front<V: AsRef<[f64]> + Clone>(members: &[V]) -> Vec<V> {
    nondominated_indices(members)
        .expect("members share the run objective count")
        .into_iter()
        .map(|i| members[i].clone())
        .collect()
}

fn argmin_by<V: AsRef<[f64]>>(front: &[V], primary: usize, secondary: usize) -> usize {
    (0..front.len())
        .min_by(|&a, &b| {
            let (x, y) = (front[a].as_ref(), front[b].as_ref());
            x[primary]
                .total_cmp(&y[primary])
                .then(x[secondary].total_cmp(&y[secondary]))
                .then(a.cmp(&b))
        })
        .expect("front is non-empty")
}

/// Member with the lowest first objective (ties: lowest second).
pub fn best_accuracy<V: AsRef<[f64]>>(front: &[V]) -> Result<usize, AggregateError> {
    if front.is_empty() {
        return Err(AggregateError::EmptyFront);
    }
    Ok(argmin_by(front, 0, 1))
}

/// Member with the lowest second objective (ties: lowest first).
pub fn lowest_tokens<V: AsRef<[f64]>>(front: &[V]) -> Result<usize, AggregateError> {
    if front.is_empty() {
        return Err(AggregateError::EmptyFront);
    }
    Ok(argmin_by(front, 1, 0))
}

/// Knee of a two-objective front.
///
/// Both objectives are rescaled to [0, 1] over the front (a constant
/// objective maps to 0). The knee is the member farthest from the line
/// through the two extreme members; ties go to the lower second objective.
/// Fronts of at most two members, or whose extremes coincide after
/// scaling, return the best-accuracy member.
pub fn knee_point<V: AsRef<[f64]>>(front: &[V]) -> Result<usize, AggregateError> {
    let best = best_accuracy(front)?;
    let dims = front[0].as_ref().len();
    if dims != 2 {
        return Err(AggregateError::Dimensions(dims));
    }
    if front.len() <= 2 {
        return Ok(best);
    }
    let cheap = argmin_by(front, 1, 0);
    let bounds: Vec<(f64, f64)> = (0..2)
        .map(|m| {
            front
                .iter()
                .map(|v| v.as_ref()[m])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
        })
        .collect();
    let norm = |i: usize| -> [f64; 2] {
        let v = front[i].as_ref();
        let mut out = [0.0; 2];
        for m in 0..2 {
            let (lo, hi) = bounds[m];
            out[m] = if hi > lo { (v[m] - lo) / (hi - lo) } else { 0.0 };
        }
        out
    };
    let a = norm(best);
    let b = norm(cheap);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let length = dx.hypot(dy);
    if length == 0.0 {
        return Ok(best);
    }
    let distance = |i: usize| {
        let p = norm(i);
        (dx * (p[1] - a[1]) - dy * (p[0] - a[0])).abs() / length
    };
    let knee = (0..front.len())
        .max_by(|&i, &j| {
            distance(i)
                .total_cmp(&distance(j))
                .then(front[j].as_ref()[1].total_cmp(&front[i].as_ref()[1]))
                .then(j.cmp(&i))
        })
        .expect("front is non-empty");
    Ok(knee)
}

pub fn analyze(front: &[FrontMember], grammar: &PromptGrammar) -> Result<FrontAnalysis, AggregateError> {
    let mut model_counts = BTreeMap::new();
    let mut component_counts = BTreeMap::new();
    for m in front {
        *model_counts.entry(m.model().to_owned()).or_insert(0) += 1;
        let rule = &grammar.rules[m.individual.genotype.rule_id];
        for kind in rule.components() {
            *component_counts.entry(kind).or_insert(0) += 1;
        }
    }
    Ok(FrontAnalysis {
        best_accuracy: best_accuracy(front)?,
        lowest_tokens: lowest_tokens(front)?,
        knee: knee_point(front)?,
        model_counts,
        component_counts,
    })
}

/// Merge, deduplicate, filter and analyze a set of runs.
pub fn aggregate(results: &[RunResult]) -> Result<GlobalFront, AggregateError> {
    let merged = merge_and_dedup(results)?;
    let first = &results[0];
    let members = final_front(&merged);
    let analysis = if members.is_empty() {
        None
    } else {
        Some(analyze(&members, &first.grammar)?)
    };
    let mut run_ids: Vec<usize> = results.iter().map(|r| r.run_id).collect();
    run_ids.sort_unstable();
    Ok(GlobalFront {
        task_id: first.task_id.clone(),
        models: first.models.clone(),
        objectives: first.config.objectives.clone(),
        run_ids,
        members,
        analysis,
    })
}

/// Start and end of a prompt template on one line.
pub fn prompt_preview(template: &str, width: usize) -> String {
    let flat = template.replace('\n', " | ");
    let chars: Vec<char> = flat.chars().collect();
    if chars.len() <= 2 * width {
        return flat;
    }
    let head: String = chars[..width].iter().collect();
    let tail: String = chars[chars.len() - width..].iter().collect();
    format!("{head} ... {tail}")
}

/// `model,accuracy,avg_tokens,rule_id,run_id,prompt_preview` rows.
pub fn front_csv(front: &GlobalFront) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "accuracy", "avg_tokens", "rule_id", "run_id", "prompt_preview"])
        .expect("in-memory csv write");
    for m in &front.members {
        w.write_record([
            m.model().to_owned(),
            format!("{:.4}", m.accuracy()),
            format!("{:.2}", m.tokens()),
            m.individual.genotype.rule_id.to_string(),
            m.run_id.to_string(),
            prompt_preview(&m.individual.template, 30),
        ])
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// `x,y,series` rows: average tokens, accuracy, model.
pub fn plot_csv(front: &GlobalFront) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "series"]).expect("in-memory csv write");
    for m in &front.members {
        w.write_record([
            format!("{:.2}", m.tokens()),
            format!("{:.4}", m.accuracy()),
            m.model().to_owned(),
        ])
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[[f64; 2]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn knee_of_normalized_front() {
        let front = pts(&[[0.0, 1.0], [1.0, 0.0], [0.2, 0.2]]);
        assert_eq!(knee_point(&front).unwrap(), 2);
    }

    #[test]
    fn small_fronts_return_best_accuracy() {
        assert_eq!(knee_point(&pts(&[[0.3, 10.0]])).unwrap(), 0);
        assert_eq!(knee_point(&pts(&[[0.5, 10.0], [0.3, 20.0]])).unwrap(), 1);
        assert!(matches!(knee_point::<Vec<f64>>(&[]), Err(AggregateError::EmptyFront)));
    }

    #[test]
    fn knee_ties_prefer_fewer_tokens() {
        // duplicates: lower index
        let front = pts(&[[0.0, 1.0], [1.0, 0.0], [0.25, 0.25], [0.25, 0.25]]);
        assert_eq!(knee_point(&front).unwrap(), 2);
        let front = pts(&[[0.0, 4.0], [4.0, 0.0], [1.0, 2.0], [2.0, 1.0]]);
        assert_eq!(knee_point(&front).unwrap(), 3);
    }

    #[test]
    fn extremes_break_ties() {
        let front = pts(&[[0.23, 60.0], [0.23, 56.0], [0.49, 29.0], [0.6, 29.0]]);
        assert_eq!(best_accuracy(&front).unwrap(), 1);
        assert_eq!(lowest_tokens(&front).unwrap(), 2);
    }

    #[test]
    fn final_front_filters_and_is_idempotent() {
        let s = pts(&[[1.0, 5.0], [2.0, 2.0], [3.0, 3.0], [5.0, 1.0], [0.5, 9.0]]);
        let f = final_front(&s);
        assert_eq!(f, pts(&[[1.0, 5.0], [2.0, 2.0], [5.0, 1.0], [0.5, 9.0]]));
        assert_eq!(final_front(&f), f);
        let dominated = pts(&[[1.0, 1.0], [2.0, 2.0], [3.0, 1.5]]);
        assert_eq!(final_front(&dominated), pts(&[[1.0, 1.0]]));
    }

    #[test]
    fn preview_keeps_both_ends() {
        assert_eq!(prompt_preview("short\n{user_input}", 30), "short | {user_input}");
        let long = format!("{}\n{{user_input}}\n{}", "a".repeat(50), "z".repeat(50));
        let p = prompt_preview(&long, 10);
        assert_eq!(p, format!("{} ... {}", "a".repeat(10), "z".repeat(10)));
    }
}
