//! Dominance, fast non-dominated sorting, crowding distance and the
//! selection steps of NSGA-II. All objectives are minimized.
//!
//! The free functions here only look at objective values, so they work on
//! anything that can be viewed as `&[f64]`.

mod engine;

pub use engine::{evolve, evolve_with, Evaluator, EvolveError, RunConfig};

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::Genotype;

#[derive(Debug, Error, PartialEq)]
#[error("objective vectors have different lengths ({0} vs {1})")]
pub struct DimensionMismatch(pub usize, pub usize);

/// Objective values of one individual, every coordinate minimized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveVector(pub Vec<f64>);

impl ObjectiveVector {
    pub fn new(values: Vec<f64>) -> Self {
        ObjectiveVector(values)
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

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl AsRef<[f64]> for ObjectiveVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ObjectiveVector {
    fn from(v: Vec<f64>) -> Self {
        ObjectiveVector(v)
    }
}

/// An individual together with its objectives and, after sorting, its front
/// index and crowding distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedIndividual {
    pub genotype: Genotype,
    /// Prompt template the genotype instantiates to.
    pub template: String,
    pub objectives: ObjectiveVector,
    /// Generation in which this individual was created.
    pub born: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::serde_inf::option")]
    pub crowding: Option<f64>,
}

impl AsRef<[f64]> for EvaluatedIndividual {
    fn as_ref(&self) -> &[f64] {
        &self.objectives.0
    }
}

impl EvaluatedIndividual {
    pub fn dedup_key(&self) -> String {
        crate::genome::dedup_key_from_parts(&self.genotype.model.name, &self.template)
    }
}

/// `a` dominates `b` when it is no worse everywhere and strictly better
/// somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool, DimensionMismatch> {
    if a.len() != b.len() {
        return Err(DimensionMismatch(a.len(), b.len()));
    }
    Ok(dominates_unchecked(a, b))
}

#[inline]
pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

fn check_dims<V: AsRef<[f64]>>(pop: &[V]) -> Result<(), DimensionMismatch> {
    if let Some(first) = pop.first() {
        let l = first.as_ref().len();
        if let Some(bad) = pop.iter().find(|v| v.as_ref().len() != l) {
            return Err(DimensionMismatch(l, bad.as_ref().len()));
        }
    }
    Ok(())
}

/// Partitions `pop` into fronts F0, F1, ... of indices (ascending within a
/// front). O(L·n²).
pub fn fast_nondominated_sort<V: AsRef<[f64]>>(pop: &[V]) -> Result<Vec<Vec<usize>>, DimensionMismatch> {
    check_dims(pop)?;
    let n = pop.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in (p + 1)..n {
            let (a, b) = (pop[p].as_ref(), pop[q].as_ref());
            if dominates_unchecked(a, b) {
                dominated_by[p].push(q);
                domination_count[q] += 1;
            } else if dominates_unchecked(b, a) {
                dominated_by[q].push(p);
                domination_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    Ok(fronts)
}

/// Indices of the non-dominated members of `pop`, in input order.
pub fn nondominated_indices<V: AsRef<[f64]>>(pop: &[V]) -> Result<Vec<usize>, DimensionMismatch> {
    Ok(fast_nondominated_sort(pop)?.into_iter().next().unwrap_or_default())
}

/// Crowding distance of each member of one front, in the front's order.
///
/// Boundary members of each objective get `+inf`. Interior members add
/// `(next - prev) / (max - min)` per objective. An objective whose values are
/// all equal contributes nothing. Fronts of one or two members are all
/// `+inf`.
pub fn crowding_distance<V: AsRef<[f64]>>(front: &[V]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let dims = front[0].as_ref().len();
    let mut distance = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for m in 0..dims {
        let value = |i: usize| front[i].as_ref()[m];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
        let lo = value(order[0]);
        let hi = value(order[n - 1]);
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        for w in 1..n - 1 {
            let i = order[w];
            if distance[i].is_finite() {
                distance[i] += (value(order[w + 1]) - value(order[w - 1])) / span;
            }
        }
    }
    distance
}

/// Winner of a binary tournament between `i` and `j`: lower rank, then
/// larger crowding, then lower index.
pub fn tournament_winner(i: usize, j: usize, ranks: &[usize], crowding: &[f64]) -> usize {
    pick((i, ranks[i], crowding[i]), (j, ranks[j], crowding[j]))
}

fn pick(a: (usize, usize, f64), b: (usize, usize, f64)) -> usize {
    let order = a.1.cmp(&b.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0));
    match order {
        Ordering::Greater => b.0,
        _ => a.0,
    }
}

/// Binary tournament over a ranked population. Panics if rank or crowding
/// has not been assigned.
pub fn tournament_select<R: Rng + ?Sized>(pop: &[EvaluatedIndividual], rng: &mut R) -> usize {
    let i = rng.gen_range(0..pop.len());
    let j = rng.gen_range(0..pop.len());
    let contestant = |k: usize| {
        (
            k,
            pop[k].rank.expect("rank assigned before selection"),
            pop[k].crowding.expect("crowding assigned before selection"),
        )
    };
    pick(contestant(i), contestant(j))
}

/// Outcome of environmental selection over a combined population.
#[derive(Clone, Debug, PartialEq)]
pub struct Survivors {
    /// Selected indices into the input, in survival order.
    pub indices: Vec<usize>,
    /// Front index of every selected member (parallel to `indices`).
    pub ranks: Vec<usize>,
    /// Crowding distance of every selected member, computed within its front
    /// of the full input.
    pub crowding: Vec<f64>,
}

/// Keeps whole fronts in rank order until the next one no longer fits, then
/// fills the remainder from that front by descending crowding distance
/// (ties keep input order).
pub fn select_survivors<V: AsRef<[f64]>>(pop: &[V], n: usize) -> Result<Survivors, DimensionMismatch> {
    let fronts = fast_nondominated_sort(pop)?;
    let n = n.min(pop.len());
    let mut out = Survivors {
        indices: Vec::with_capacity(n),
        ranks: Vec::with_capacity(n),
        crowding: Vec::with_capacity(n),
    };
    for (rank, front) in fronts.iter().enumerate() {
        let missing = n - out.indices.len();
        if missing == 0 {
            break;
        }
        let members: Vec<&[f64]> = front.iter().map(|&i| pop[i].as_ref()).collect();
        let dist = crowding_distance(&members);
        let mut order: Vec<usize> = (0..front.len()).collect();
        if front.len() > missing {
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            order.truncate(missing);
        }
        for k in order {
            out.indices.push(front[k]);
            out.ranks.push(rank);
            out.crowding.push(dist[k]);
        }
    }
    Ok(out)
}
