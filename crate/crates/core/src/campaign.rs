//! Experiment configuration and the file-level workflows behind the
//! command-line tool: multi-run campaigns, aggregation, reports and export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{self, AggregateError, GlobalFront};
use crate::eval::{
    draw_sample, DatasetError, EvalCache, HttpBackend, HttpBackendConfig, ModelBackend, SimulatedBackend, TaskDataset,
    TaskEvaluator,
};
use crate::genome::{ModelPool, OperatorConfig};
use crate::grammar::{load_grammar, GrammarError, PromptGrammar};
use crate::nsga2::{evolve_with, EvolveError, RunConfig};
use crate::run::{GenerationSnapshot, RunResult};

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Backend,
    Data,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("run {run_id}: {source}")]
    Evolve {
        run_id: usize,
        #[source]
        source: EvolveError,
    },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

impl CampaignError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CampaignError::Config(_) | CampaignError::Grammar(_) | CampaignError::Dataset(_) => ErrorClass::Config,
            CampaignError::Io { .. } => ErrorClass::Io,
            CampaignError::Evolve {
                source: EvolveError::InvalidConfig(_),
                ..
            } => ErrorClass::Config,
            CampaignError::Evolve { .. } => ErrorClass::Backend,
            CampaignError::Aggregate(_) => ErrorClass::Data,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    #[default]
    Simulated,
    Http(HttpBackendConfig),
}

fn d_population() -> usize {
    30
}
fn d_generations() -> usize {
    10
}
fn d_sample() -> usize {
    100
}
fn d_runs() -> usize {
    11
}
fn d_parallelism() -> usize {
    1
}
fn d_out() -> PathBuf {
    PathBuf::from("results")
}

/// One experiment: a task, its grammar, a model pool and the search budget.
/// Relative paths are resolved against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub grammar: PathBuf,
    pub models: Vec<String>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default = "d_population")]
    pub population_size: usize,
    #[serde(default = "d_generations")]
    pub generations: usize,
    #[serde(default = "d_sample")]
    pub sample_size: usize,
    #[serde(default = "d_runs")]
    pub runs: usize,
    #[serde(default)]
    pub operators: OperatorConfig,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "d_out")]
    pub out_dir: PathBuf,
    #[serde(default = "d_parallelism")]
    pub parallelism: usize,
    /// Append-only evaluation cache shared by all runs. Without it every run
    /// gets its own in-memory cache.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, grammar: impl Into<PathBuf>, models: Vec<String>) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            grammar: grammar.into(),
            models,
            backend: BackendConfig::Simulated,
            population_size: d_population(),
            generations: d_generations(),
            sample_size: d_sample(),
            runs: d_runs(),
            operators: OperatorConfig::default(),
            base_seed: 0,
            out_dir: d_out(),
            parallelism: d_parallelism(),
            cache: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CampaignError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CampaignError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.grammar, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(c) = cfg.cache.as_mut().filter(|c| c.is_relative()) {
            *c = base.join(&*c);
        }
        Ok(cfg)
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            population_size: self.population_size,
            generations: self.generations,
            operators: self.operators,
            seed,
            sample_size: self.sample_size,
            parallelism: self.parallelism,
            ..RunConfig::default()
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.runs < 1 {
            return Err(CampaignError::Config("runs must be at least 1".into()));
        }
        for (what, p) in [("dataset", &self.dataset), ("grammar", &self.grammar)] {
            if !p.is_file() {
                return Err(CampaignError::Config(format!("{what} file {} not found", p.display())));
            }
        }
        self.run_config(self.base_seed)
            .validate()
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        ModelPool::new(self.models.clone()).map_err(|e| CampaignError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Command-line overrides; any field that is set wins over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub url: Option<String>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Simulated,
    Http,
}

impl ExperimentConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CampaignError> {
        if let Some(r) = o.runs {
            self.runs = r;
        }
        if let Some(s) = o.seed {
            self.base_seed = s;
        }
        if let Some(out) = &o.out_dir {
            self.out_dir = out.clone();
        }
        match (o.backend, &o.url) {
            (Some(BackendKind::Simulated), Some(_)) => {
                return Err(CampaignError::Config("--url only applies to the http backend".into()))
            }
            (Some(BackendKind::Simulated), None) => self.backend = BackendConfig::Simulated,
            (Some(BackendKind::Http), url) | (None, url @ Some(_)) => {
                let url = match (url, &self.backend) {
                    (Some(u), BackendConfig::Http(h)) => HttpBackendConfig {
                        url: u.clone(),
                        ..h.clone()
                    },
                    (Some(u), _) => HttpBackendConfig::new(u.clone()),
                    (None, BackendConfig::Http(h)) => h.clone(),
                    (None, BackendConfig::Simulated) => {
                        return Err(CampaignError::Config(
                            "the http backend needs a URL (config `backend.url` or --url)".into(),
                        ))
                    }
                };
                self.backend = BackendConfig::Http(url);
            }
            (None, None) => {}
        }
        Ok(())
    }
}

/// Wall-clock timings of one run, kept apart from the run result so that
/// result files stay reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunTiming {
    pub run_id: usize,
    pub total_seconds: f64,
    pub generation_seconds: Vec<f64>,
}

pub fn run_file_name(run_id: usize) -> String {
    format!("run_{run_id:03}.json")
}

fn timing_file_name(run_id: usize) -> String {
    format!("run_{run_id:03}.timing.json")
}

/// Loaded inputs of a campaign.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dataset: TaskDataset,
    pub grammar: PromptGrammar,
    pub models: ModelPool,
    pub backend: Arc<dyn ModelBackend>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, CampaignError> {
    config.validate()?;
    let dataset = TaskDataset::load(&config.dataset)?;
    let grammar = load_grammar(&config.grammar)?;
    if dataset.task_id != grammar.task_id {
        return Err(CampaignError::Config(format!(
            "dataset task `{}` does not match grammar task `{}`",
            dataset.task_id, grammar.task_id
        )));
    }
    if config.sample_size > dataset.len() {
        return Err(DatasetError::SampleTooLarge {
            requested: config.sample_size,
            available: dataset.len(),
        }
        .into());
    }
    let models = ModelPool::new(config.models.clone()).map_err(|e| CampaignError::Config(e.to_string()))?;
    let backend: Arc<dyn ModelBackend> = match &config.backend {
        BackendConfig::Simulated => {
            let sim = SimulatedBackend::for_dataset(&dataset);
            if let Some(unknown) = models.names().iter().find(|m| !sim.knows_model(m)) {
                return Err(CampaignError::Config(format!(
                    "`{unknown}` is not a simulated model (known: sim-tiny, sim-small, sim-base, sim-large)"
                )));
            }
            Arc::new(sim)
        }
        BackendConfig::Http(h) => {
            Arc::new(HttpBackend::new(h.clone()).map_err(|e| CampaignError::Config(e.to_string()))?)
        }
    };
    Ok(Prepared {
        config: config.clone(),
        dataset,
        grammar,
        models,
        backend,
    })
}

/// Executes one run of a prepared campaign. Run `r` uses seed
/// `base_seed + r` for both the instance sample and the operators.
pub fn execute_run(
    prepared: &Prepared,
    run_id: usize,
    cache: Option<Arc<EvalCache>>,
    mut progress: impl FnMut(&GenerationSnapshot),
) -> Result<(RunResult, RunTiming), CampaignError> {
    let cfg = &prepared.config;
    let seed = cfg.base_seed + run_id as u64;
    let sample = draw_sample(&prepared.dataset, cfg.sample_size, seed)?;
    let mut evaluator = TaskEvaluator::new(prepared.dataset.clone(), sample, prepared.backend.clone());
    if let Some(c) = cache {
        evaluator = evaluator.with_cache(c);
    }
    let start = Instant::now();
    let mut last = start;
    let mut generation_seconds = Vec::new();
    let mut result = evolve_with(
        &prepared.grammar,
        &prepared.models,
        &evaluator,
        &cfg.run_config(seed),
        |snap| {
            let now = Instant::now();
            generation_seconds.push((now - last).as_secs_f64());
            last = now;
            progress(snap);
        },
    )
    .map_err(|source| CampaignError::Evolve { run_id, source })?;
    result.run_id = run_id;
    let timing = RunTiming {
        run_id,
        total_seconds: start.elapsed().as_secs_f64(),
        generation_seconds,
    };
    Ok((result, timing))
}

/// Runs every run of the campaign and writes `run_NNN.json` (plus a timing
/// sidecar) into the output directory. Nothing is written if the
/// configuration is invalid.
pub fn run_campaign(
    config: &ExperimentConfig,
    mut progress: impl FnMut(usize, &GenerationSnapshot),
) -> Result<Vec<PathBuf>, CampaignError> {
    let prepared = prepare(config)?;
    let shared = match &config.cache {
        Some(p) => Some(Arc::new(EvalCache::open(p).map_err(io_err(p))?)),
        None => None,
    };
    std::fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let mut written = Vec::with_capacity(config.runs);
    for run_id in 0..config.runs {
        let (result, timing) = execute_run(&prepared, run_id, shared.clone(), |s| progress(run_id, s))?;
        let path = config.out_dir.join(run_file_name(run_id));
        result.write(&path).map_err(io_err(&path))?;
        let tpath = config.out_dir.join(timing_file_name(run_id));
        let ttext = serde_json::to_string_pretty(&timing).expect("timing serialization cannot fail");
        std::fs::write(&tpath, ttext).map_err(io_err(&tpath))?;
        written.push(path);
    }
    Ok(written)
}

/// One-line summary of a generation's first front.
pub fn summarize_generation(snap: &GenerationSnapshot) -> String {
    let front: Vec<&[f64]> = snap
        .population
        .iter()
        .filter(|i| i.rank == Some(0))
        .map(|i| i.objectives.values())
        .collect();
    let best = aggregate::best_accuracy(&front).ok().map(|i| front[i]);
    let cheap = aggregate::lowest_tokens(&front).ok().map(|i| front[i]);
    match (best, cheap) {
        (Some(b), Some(c)) => format!(
            "gen {:>3}: front {:>2} | best acc {:.2} @ {:.1} tok | fewest tok {:.1} @ acc {:.2}",
            snap.generation,
            front.len(),
            1.0 - b[0],
            b[1],
            c[1],
            1.0 - c[0]
        ),
        _ => format!("gen {:>3}: empty front", snap.generation),
    }
}

/// Reads every `run_*.json` result in `dir`, in file-name order.
pub fn read_run_results(dir: &Path) -> Result<Vec<RunResult>, CampaignError> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_") && n.ends_with(".json") && !n.ends_with(".timing.json"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| RunResult::read(p).map_err(io_err(p))).collect()
}

pub const GLOBAL_FRONT_FILE: &str = "global_front.json";
pub const FRONT_CSV_FILE: &str = "front.csv";
pub const PLOT_CSV_FILE: &str = "plot_data.csv";

/// Aggregates all runs found in `in_dir` and writes the global front files
/// into `out_dir`.
pub fn aggregate_dir(in_dir: &Path, out_dir: &Path) -> Result<GlobalFront, CampaignError> {
    let results = read_run_results(in_dir)?;
    if results.is_empty() {
        return Err(AggregateError::NoRuns.into());
    }
    let front = aggregate::aggregate(&results)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for (name, body) in [
        (GLOBAL_FRONT_FILE, front.to_json_string()),
        (FRONT_CSV_FILE, aggregate::front_csv(&front)),
        (PLOT_CSV_FILE, aggregate::plot_csv(&front)),
    ] {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(io_err(&p))?;
    }
    Ok(front)
}

pub fn load_front(path: &Path) -> Result<GlobalFront, CampaignError> {
    GlobalFront::read(path).map_err(io_err(path))
}

/// Human-readable summary: dominant models and components, then the
/// best-accuracy, lowest-token and knee solutions.
pub fn report(front: &GlobalFront) -> Result<String, CampaignError> {
    let analysis = front.analysis.as_ref().ok_or(AggregateError::EmptyFront)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Task: {}  |  front size: {}  |  runs: {}",
        front.task_id,
        front.members.len(),
        front.run_ids.len()
    );
    let _ = writeln!(out, "\nDominant models (count)");
    for (m, c) in analysis.ranked_models() {
        let _ = writeln!(out, "  {m} ({c})");
    }
    let _ = writeln!(out, "\nDominant components (count)");
    for (k, c) in analysis.ranked_components() {
        let _ = writeln!(out, "  {} ({c})", k.short_name());
    }
    let _ = writeln!(
        out,
        "\n{:<15} {:<20} {:>6} {:>9}",
        "Solution", "Model", "Acc.", "Tokens"
    );
    for (label, idx) in [
        ("Best accuracy", analysis.best_accuracy),
        ("Lowest tokens", analysis.lowest_tokens),
        ("Knee", analysis.knee),
    ] {
        let m = &front.members[idx];
        let _ = writeln!(
            out,
            "{:<15} {:<20} {:>6.2} {:>9.1}",
            label,
            m.model(),
            m.accuracy(),
            m.tokens()
        );
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

pub fn export(front: &GlobalFront, format: ExportFormat) -> String {
    match format {
        ExportFormat::Csv => aggregate::front_csv(front),
        ExportFormat::Json => front.to_json_string(),
    }
}
