//! Prompt grammars: flat structural rules over component kinds, plus one
//! content pool of interchangeable text variants per kind.
//!
//! A prompt is produced in three steps. A rule is chosen, the rule names the
//! pools that must be drawn from, and one variant is taken from each pool.
//! The result is an [`InstantiatedPrompt`], a template holding a single
//! [`PLACEHOLDER`] where the task query goes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel that marks where the user query is inserted.
pub const PLACEHOLDER: &str = "{user_input}";

/// Largest number of variants accepted in a single content pool.
pub const MAX_POOL_SIZE: usize = 100;

/// Per-kind variant choice for one prompt.
pub type Selections = BTreeMap<ComponentKind, usize>;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("cannot read grammar file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed grammar document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid grammar at `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown rule id {0}")]
    UnknownRule(usize),
    #[error("rule {rule_id} requires a selection for {kind}")]
    MissingSelection { rule_id: usize, kind: ComponentKind },
    #[error("rule {rule_id} has no {kind} component, selection rejected")]
    ExtraSelection { rule_id: usize, kind: ComponentKind },
    #[error("{kind} index {index} out of range (pool has {len} variants)")]
    IndexOutOfRange {
        kind: ComponentKind,
        index: usize,
        len: usize,
    },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> GrammarError {
    GrammarError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Non-terminals a rule may reference.
///
/// `Cot` is the "think step by step" component. `UserInput` is the slot for
/// the task query and never has a content pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComponentKind {
    Context,
    Cot,
    Examples,
    Req,
    Instr,
    UserInput,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 6] = [
        ComponentKind::Context,
        ComponentKind::Cot,
        ComponentKind::Examples,
        ComponentKind::Req,
        ComponentKind::Instr,
        ComponentKind::UserInput,
    ];

    /// Upper-case name used in grammar files.
    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Context => "CONTEXT",
            ComponentKind::Cot => "COT",
            ComponentKind::Examples => "EXAMPLES",
            ComponentKind::Req => "REQ",
            ComponentKind::Instr => "INSTR",
            ComponentKind::UserInput => "USER_INPUT",
        }
    }

    /// Lower-case name used in reports.
    pub fn short_name(self) -> &'static str {
        match self {
            ComponentKind::Context => "context",
            ComponentKind::Cot => "cot",
            ComponentKind::Examples => "examples",
            ComponentKind::Req => "req",
            ComponentKind::Instr => "instr",
            ComponentKind::UserInput => "user_input",
        }
    }

    pub fn has_pool(self) -> bool {
        self != ComponentKind::UserInput
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComponentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown component kind `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrammarRule {
    pub rule_id: usize,
    pub sequence: Vec<ComponentKind>,
}

impl GrammarRule {
    pub fn contains(&self, kind: ComponentKind) -> bool {
        self.sequence.contains(&kind)
    }

    /// Kinds that draw from a content pool, in rule order.
    pub fn components(&self) -> impl Iterator<Item = ComponentKind> + '_ {
        self.sequence.iter().copied().filter(|k| k.has_pool())
    }

    fn validate(&self, pools: &BTreeMap<ComponentKind, ContentPool>) -> Result<(), GrammarError> {
        let field = format!("rules[{}]", self.rule_id);
        let inputs = self.sequence.iter().filter(|k| **k == ComponentKind::UserInput).count();
        if inputs != 1 {
            return Err(invalid(
                field,
                format!("USER_INPUT must appear exactly once, found {inputs}"),
            ));
        }
        let mut seen = BTreeSet::new();
        for kind in &self.sequence {
            if !seen.insert(*kind) {
                return Err(invalid(field, format!("duplicate component {kind}")));
            }
        }
        if !self.contains(ComponentKind::Req) && !self.contains(ComponentKind::Context) {
            return Err(invalid(field, "rule must include REQ or CONTEXT"));
        }
        for kind in self.components() {
            if !pools.contains_key(&kind) {
                return Err(invalid(field, format!("{kind} has no content pool")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContentPool {
    pub kind: ComponentKind,
    pub variants: Vec<String>,
}

impl ContentPool {
    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    fn validate(&self) -> Result<(), GrammarError> {
        let field = format!("pools.{}", self.kind);
        if !self.kind.has_pool() {
            return Err(invalid(field, "USER_INPUT cannot have a content pool"));
        }
        if self.variants.is_empty() || self.variants.len() > MAX_POOL_SIZE {
            return Err(invalid(
                field,
                format!(
                    "pool must hold 1..={MAX_POOL_SIZE} variants, found {}",
                    self.variants.len()
                ),
            ));
        }
        let mut seen = BTreeSet::new();
        for (i, v) in self.variants.iter().enumerate() {
            let vf = format!("{field}[{i}]");
            if v.is_empty() {
                return Err(invalid(vf, "variant text is empty"));
            }
            if v.contains(PLACEHOLDER) {
                return Err(invalid(vf, format!("variant contains the {PLACEHOLDER} token")));
            }
            if !seen.insert(v.as_str()) {
                return Err(invalid(vf, "duplicate variant"));
            }
        }
        Ok(())
    }
}

/// On-disk shape of a grammar document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarFile {
    task_id: String,
    rules: Vec<Vec<ComponentKind>>,
    pools: BTreeMap<ComponentKind, Vec<String>>,
}

/// A validated prompt search space for one task.
///
/// Immutable once built; rule ids are the positions in `rules`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "GrammarFile", try_from = "GrammarFile")]
pub struct PromptGrammar {
    pub task_id: String,
    pub rules: Vec<GrammarRule>,
    pub pools: BTreeMap<ComponentKind, ContentPool>,
}

impl From<PromptGrammar> for GrammarFile {
    fn from(g: PromptGrammar) -> Self {
        GrammarFile {
            task_id: g.task_id,
            rules: g.rules.into_iter().map(|r| r.sequence).collect(),
            pools: g.pools.into_iter().map(|(k, p)| (k, p.variants)).collect(),
        }
    }
}

impl TryFrom<GrammarFile> for PromptGrammar {
    type Error = GrammarError;

    fn try_from(f: GrammarFile) -> Result<Self, Self::Error> {
        PromptGrammar::new(f.task_id, f.rules, f.pools)
    }
}

impl PromptGrammar {
    pub fn new(
        task_id: impl Into<String>,
        rules: Vec<Vec<ComponentKind>>,
        pools: BTreeMap<ComponentKind, Vec<String>>,
    ) -> Result<Self, GrammarError> {
        let pools: BTreeMap<_, _> = pools
            .into_iter()
            .map(|(kind, variants)| (kind, ContentPool { kind, variants }))
            .collect();
        for pool in pools.values() {
            pool.validate()?;
        }
        if rules.is_empty() {
            return Err(invalid("rules", "at least one rule is required"));
        }
        let rules: Vec<_> = rules
            .into_iter()
            .enumerate()
            .map(|(rule_id, sequence)| GrammarRule { rule_id, sequence })
            .collect();
        for rule in &rules {
            rule.validate(&pools)?;
        }
        Ok(PromptGrammar {
            task_id: task_id.into(),
            rules,
            pools,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, GrammarError> {
        let file: GrammarFile = serde_json::from_str(text)?;
        PromptGrammar::try_from(file)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("grammar serialization cannot fail")
    }

    pub fn rule(&self, rule_id: usize) -> Result<&GrammarRule, GrammarError> {
        self.rules.get(rule_id).ok_or(GrammarError::UnknownRule(rule_id))
    }

    /// Pool for `kind`. Panics if the grammar has none; callers only ask for
    /// kinds that appear in a validated rule.
    pub fn pool(&self, kind: ComponentKind) -> &ContentPool {
        &self.pools[&kind]
    }

    /// Checks that `selections` names exactly the rule's pooled kinds, each
    /// with an in-range index.
    pub fn check_selections(&self, rule_id: usize, selections: &Selections) -> Result<(), GrammarError> {
        let rule = self.rule(rule_id)?;
        for kind in selections.keys() {
            if !kind.has_pool() || !rule.contains(*kind) {
                return Err(GrammarError::ExtraSelection { rule_id, kind: *kind });
            }
        }
        for kind in rule.components() {
            let index = *selections
                .get(&kind)
                .ok_or(GrammarError::MissingSelection { rule_id, kind })?;
            let len = self.pool(kind).len();
            if index >= len {
                return Err(GrammarError::IndexOutOfRange { kind, index, len });
            }
        }
        Ok(())
    }

    /// Assembles the prompt template for a rule and a set of pool choices.
    ///
    /// Component texts are joined with `\n` in rule order; the user-input
    /// position holds [`PLACEHOLDER`].
    pub fn instantiate(&self, rule_id: usize, selections: &Selections) -> Result<InstantiatedPrompt, GrammarError> {
        self.check_selections(rule_id, selections)?;
        let rule = &self.rules[rule_id];
        let parts: Vec<&str> = rule
            .sequence
            .iter()
            .map(|kind| match kind {
                ComponentKind::UserInput => PLACEHOLDER,
                k => self.pool(*k).variants[selections[k]].as_str(),
            })
            .collect();
        Ok(InstantiatedPrompt {
            text_template: parts.join("\n"),
            rule_id,
            selections: selections.clone(),
        })
    }
}

/// Reads and validates a grammar document.
pub fn load_grammar(path: impl AsRef<Path>) -> Result<PromptGrammar, GrammarError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GrammarError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PromptGrammar::from_json_str(&text)
}

/// Rules used when a task does not ship its own structure.
pub fn default_rules() -> Vec<Vec<ComponentKind>> {
    use ComponentKind::*;
    vec![
        vec![Req, UserInput, Instr],
        vec![Cot, Examples, Req, UserInput, Instr],
        vec![Req, Examples, UserInput, Instr],
        vec![Context, Req, UserInput, Instr],
    ]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstantiatedPrompt {
    pub text_template: String,
    pub rule_id: usize,
    pub selections: Selections,
}

impl InstantiatedPrompt {
    /// Substitutes `query` for the placeholder. Single pass: placeholder
    /// text inside `query` is left alone.
    pub fn render(&self, query: &str) -> String {
        self.text_template.replacen(PLACEHOLDER, query, 1)
    }

    /// Template with the placeholder token deleted.
    pub fn without_placeholder(&self) -> String {
        self.text_template.replacen(PLACEHOLDER, "", 1)
    }
}
