//! Individuals as (model, prompt) pairs and the variation operators that act
//! on them.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{ComponentKind, GrammarError, InstantiatedPrompt, PromptGrammar, Selections, PLACEHOLDER};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelId {
    pub index: usize,
    pub name: String,
}

/// Fixed, non-empty list of models a run may choose from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ModelPool {
    names: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ModelPoolError {
    #[error("model pool is empty")]
    Empty,
    #[error("model `{0}` listed twice")]
    Duplicate(String),
}

impl ModelPool {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, ModelPoolError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(ModelPoolError::Empty);
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(ModelPoolError::Duplicate(n.clone()));
            }
        }
        Ok(ModelPool { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> ModelId {
        ModelId {
            index,
            name: self.names[index].clone(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for ModelPool {
    type Error = ModelPoolError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        ModelPool::new(names)
    }
}

impl From<ModelPool> for Vec<String> {
    fn from(pool: ModelPool) -> Self {
        pool.names
    }
}

/// One point of the decision space: a model plus a prompt encoded as a rule
/// id and one variant index per pooled component of that rule.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub model: ModelId,
    pub rule_id: usize,
    pub selections: Selections,
}

impl Genotype {
    pub fn instantiate(&self, grammar: &PromptGrammar) -> Result<InstantiatedPrompt, GrammarError> {
        grammar.instantiate(self.rule_id, &self.selections)
    }

    pub fn has_component(&self, kind: ComponentKind) -> bool {
        self.selections.contains_key(&kind)
    }
}

#[derive(Debug, Error)]
#[error("operator probability `{name}` = {value} is outside [0, 1]")]
pub struct OperatorConfigError {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    /// Chance that a crossover swaps the parents' models.
    pub p_cx_model: f64,
    /// Chance, per shared component, that a crossover swaps its content.
    pub p_cx_attr: f64,
    /// Chance that a mutation resamples the model.
    pub p_mut_model: f64,
    /// Chance that a mutation resamples one component's content.
    pub p_mut_param: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            p_cx_model: 0.9,
            p_cx_attr: 0.9,
            p_mut_model: 0.2,
            p_mut_param: 0.2,
        }
    }
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<(), OperatorConfigError> {
        for (name, value) in [
            ("p_cx_model", self.p_cx_model),
            ("p_cx_attr", self.p_cx_attr),
            ("p_mut_model", self.p_mut_model),
            ("p_mut_param", self.p_mut_param),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(OperatorConfigError { name, value });
            }
        }
        Ok(())
    }
}

/// Uniform draw from `0..n` skipping `current`. Requires `n > 1`.
fn resample_excluding<R: Rng + ?Sized>(rng: &mut R, n: usize, current: usize) -> usize {
    let r = rng.gen_range(0..n - 1);
    if r >= current {
        r + 1
    } else {
        r
    }
}

/// Samples a model, a rule, and one variant per pooled component, all
/// uniformly.
pub fn random_genotype<R: Rng + ?Sized>(grammar: &PromptGrammar, models: &ModelPool, rng: &mut R) -> Genotype {
    let model = models.get(rng.gen_range(0..models.len()));
    let rule = &grammar.rules[rng.gen_range(0..grammar.rules.len())];
    let selections = rule
        .components()
        .map(|kind| (kind, rng.gen_range(0..grammar.pool(kind).len())))
        .collect();
    Genotype {
        model,
        rule_id: rule.rule_id,
        selections,
    }
}

/// Model mutation and single-component content mutation, each gated by its
/// own coin. A triggered mutation always picks a value different from the
/// current one when an alternative exists.
pub fn mutate<R: Rng + ?Sized>(
    g: &Genotype,
    grammar: &PromptGrammar,
    models: &ModelPool,
    cfg: &OperatorConfig,
    rng: &mut R,
) -> Genotype {
    let mut out = g.clone();
    if rng.gen_bool(cfg.p_mut_model) && models.len() > 1 {
        out.model = models.get(resample_excluding(rng, models.len(), g.model.index));
    }
    if rng.gen_bool(cfg.p_mut_param) && !out.selections.is_empty() {
        let pick = rng.gen_range(0..out.selections.len());
        let kind = *out.selections.keys().nth(pick).expect("index within len");
        let len = grammar.pool(kind).len();
        if len > 1 {
            let current = out.selections[&kind];
            out.selections.insert(kind, resample_excluding(rng, len, current));
        }
    }
    out
}

/// Conditional uniform crossover.
///
/// Offspring start as copies of `a` and `b`. One coin decides whether the
/// models are exchanged; then every component kind present in both parents
/// gets its own coin for exchanging content. Rules and the user-input slot
/// never move.
pub fn crossover<R: Rng + ?Sized>(
    a: &Genotype,
    b: &Genotype,
    cfg: &OperatorConfig,
    rng: &mut R,
) -> (Genotype, Genotype) {
    let mut c1 = a.clone();
    let mut c2 = b.clone();
    if rng.gen_bool(cfg.p_cx_model) {
        std::mem::swap(&mut c1.model, &mut c2.model);
    }
    for kind in ComponentKind::ALL {
        if !kind.has_pool() {
            continue;
        }
        if let (Some(&x), Some(&y)) = (a.selections.get(&kind), b.selections.get(&kind)) {
            if rng.gen_bool(cfg.p_cx_attr) {
                c1.selections.insert(kind, y);
                c2.selections.insert(kind, x);
            }
        }
    }
    (c1, c2)
}

/// Identity used for duplicate removal and evaluation caching: the model
/// name plus the rendered template with the placeholder removed.
pub fn dedup_key(g: &Genotype, grammar: &PromptGrammar) -> Result<String, GrammarError> {
    let prompt = g.instantiate(grammar)?;
    Ok(dedup_key_from_parts(&g.model.name, &prompt.text_template))
}

/// Same identity as [`dedup_key`], built from an already rendered template.
pub fn dedup_key_from_parts(model_name: &str, template: &str) -> String {
    format!("{model_name}\u{1f}{}", template.replacen(PLACEHOLDER, "", 1))
}
