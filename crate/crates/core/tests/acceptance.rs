//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 10 talks to a real chat-completions endpoint when
//! `PARETOPROMPT_LIVE_URL` is set (models from `PARETOPROMPT_LIVE_MODELS`,
//! comma separated; bearer token from `PARETOPROMPT_API_KEY`). Without it the
//! same path runs against an in-process mock endpoint.

mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use common::*;
use paretoprompt::aggregate::{self, final_front, knee_point};
use paretoprompt::campaign::{self, execute_run, BackendConfig, Prepared};
use paretoprompt::eval::{
    draw_sample, evaluate, objectives_from_records, whitespace_tokens, BackendError, EvalCache, EvaluationRecord,
    Generation, HttpBackendConfig, ModelBackend,
};
use paretoprompt::genome::{crossover, dedup_key, mutate, random_genotype, Genotype, ModelPool, OperatorConfig};
use paretoprompt::grammar::{ComponentKind, ComponentKind::*, PromptGrammar, PLACEHOLDER};
use paretoprompt::nsga2::{crowding_distance, fast_nondominated_sort};
use paretoprompt::run::RunResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sorting_oracle() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut total = 0;
    for case in 0..1000 {
        let n = rng.gen_range(1..=200);
        let dims = if case % 2 == 0 { 2 } else { 3 };
        // coarse grids force ties and duplicate vectors
        let grid = [3.0, 10.0, 1000.0][case % 3];
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dims).map(|_| (rng.gen::<f64>() * grid).floor()).collect())
            .collect();
        let got = fast_nondominated_sort(&pts).unwrap();
        assert_eq!(got, brute_partition(&pts), "case {case}");
        total += n;
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "took {secs:.1}s");
    format!("1000 populations, {total} points, {secs:.2}s")
}

fn crowding_oracle() -> String {
    let c = crowding_distance(&[vec![0.0, 10.0], vec![5.0, 5.0], vec![10.0, 0.0]]);
    assert!(c[0].is_infinite() && c[2].is_infinite());
    assert!((c[1] - 2.0).abs() < 1e-12);

    // f1 neighbours give 3/4 and 3/4, f2 neighbours give 3/4 and 2/4
    let c = crowding_distance(&[vec![0.0, 4.0], vec![1.0, 2.0], vec![3.0, 1.0], vec![4.0, 0.0]]);
    assert!(c[0].is_infinite() && c[3].is_infinite());
    assert!((c[1] - 1.5).abs() < 1e-12);
    assert!((c[2] - 1.25).abs() < 1e-12);

    let c = crowding_distance(&[vec![0.0, 2.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![2.0, 0.0]]);
    assert!(c[1].is_finite() && c[1] == c[2], "{c:?}");
    assert!((c[1] - 1.0).abs() < 1e-12);

    let c = crowding_distance(&vec![vec![1.0, 1.0]; 5]);
    assert!(c.iter().all(|v| !v.is_nan()), "{c:?}");
    "2.0 interior, 1.5/1.25 four-point, duplicates finite".into()
}

fn operator_grammar() -> PromptGrammar {
    let pools: BTreeMap<ComponentKind, Vec<String>> = [(Context, 3), (Cot, 2), (Examples, 4), (Req, 4), (Instr, 3)]
        .into_iter()
        .map(|(k, n)| (k, (0..n).map(|i| format!("{} variant {i}", k.short_name())).collect()))
        .collect();
    PromptGrammar::new(
        "ops",
        vec![
            vec![Req, UserInput, Instr],
            vec![Cot, Examples, Req, UserInput, Instr],
            vec![Context, Req, UserInput, Instr],
            vec![Context, UserInput],
        ],
        pools,
    )
    .unwrap()
}

fn operator_statistics() -> String {
    let grammar = operator_grammar();
    let models = ModelPool::new(["a", "b", "c"]).unwrap();
    let cfg = OperatorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 10_000;

    let (mut model_swaps, mut model_trials, mut attr_swaps, mut attr_trials) = (0, 0, 0, 0);
    while model_trials < trials || attr_trials < trials {
        let a = random_genotype(&grammar, &models, &mut rng);
        let b = random_genotype(&grammar, &models, &mut rng);
        let (c1, _) = crossover(&a, &b, &cfg, &mut rng);
        if a.model != b.model && model_trials < trials {
            model_trials += 1;
            model_swaps += (c1.model == b.model) as usize;
        }
        for (kind, &x) in &a.selections {
            match b.selections.get(kind) {
                Some(&y) if x != y && attr_trials < trials => {
                    attr_trials += 1;
                    attr_swaps += (c1.selections[kind] == y) as usize;
                }
                _ => {}
            }
        }
    }

    let (mut model_muts, mut param_muts) = (0, 0);
    for _ in 0..trials {
        let g = random_genotype(&grammar, &models, &mut rng);
        let m = mutate(&g, &grammar, &models, &cfg, &mut rng);
        model_muts += (m.model != g.model) as usize;
        param_muts += (m.selections != g.selections) as usize;
    }

    let rate = |k: usize| k as f64 / trials as f64;
    let observed = [
        ("p_cx_model", rate(model_swaps), cfg.p_cx_model),
        ("p_cx_attr", rate(attr_swaps), cfg.p_cx_attr),
        ("p_mut_model", rate(model_muts), cfg.p_mut_model),
        ("p_mut_param", rate(param_muts), cfg.p_mut_param),
    ];
    for (name, got, want) in observed {
        assert!((got - want).abs() <= 0.02, "{name}: observed {got}, nominal {want}");
    }
    observed
        .iter()
        .map(|(n, got, _)| format!("{n}={got:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn input_line(g: &Genotype, grammar: &PromptGrammar) -> usize {
    let t = g.instantiate(grammar).unwrap().text_template;
    t.split('\n').position(|l| l.contains(PLACEHOLDER)).unwrap()
}

fn operator_structure() -> String {
    let grammar = operator_grammar();
    let models = ModelPool::new(["a", "b"]).unwrap();
    let cfg = OperatorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut mixed, mut violations) = (0, 0);
    for _ in 0..100_000 {
        let a = random_genotype(&grammar, &models, &mut rng);
        let b = random_genotype(&grammar, &models, &mut rng);
        mixed += (a.rule_id != b.rule_id) as usize;
        let (c1, c2) = crossover(&a, &b, &cfg, &mut rng);
        for (child, parent) in [(&c1, &a), (&c2, &b)] {
            let keys_kept = child.selections.keys().eq(parent.selections.keys());
            let absent_swapped = child.selections.iter().any(|(k, v)| {
                (!a.selections.contains_key(k) || !b.selections.contains_key(k)) && parent.selections[k] != *v
            });
            let ok = keys_kept
                && !absent_swapped
                && child.rule_id == parent.rule_id
                && input_line(child, &grammar) == input_line(parent, &grammar);
            violations += (!ok) as usize;
        }
    }
    assert_eq!(violations, 0);
    assert!(mixed > 50_000);
    format!("100000 crossovers ({mixed} mixed-rule), 0 violations")
}

fn front_points(r: &RunResult) -> Vec<Vec<f64>> {
    r.final_front.iter().map(|i| i.objectives.0.clone()).collect()
}

fn end_to_end_recovery(p: &Prepared) -> String {
    let golden = load_golden();
    let fresh = exhaustive(p);
    assert_eq!(fresh, golden, "frozen front is stale");
    let start = Instant::now();
    let (run, _) = execute_run(p, 0, None, |_| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let target: Vec<Vec<f64>> = golden.front.iter().map(|m| m.objectives.clone()).collect();
    let ratio = hypervolume_2d(&front_points(&run), golden.reference) / hypervolume_2d(&target, golden.reference);
    assert!(ratio >= 0.99, "hypervolume ratio {ratio}");
    assert!(secs < 60.0, "took {secs:.1}s");
    format!(
        "space {}, hypervolume ratio {ratio:.4}, {} evaluations, {secs:.2}s",
        golden.space_size, run.stats.evaluations
    )
}

fn aggregation_oracle(p: &Prepared) -> String {
    let runs: Vec<RunResult> = (0..11)
        .map(|r| {
            let (mut res, _) = execute_run(p, r, None, |_| {}).unwrap();
            res.run_id = r;
            res
        })
        .collect();
    let global = aggregate::aggregate(&runs).unwrap();

    let mut seen = std::collections::HashSet::new();
    let merged: Vec<Vec<f64>> = runs
        .iter()
        .flat_map(|r| r.final_front.iter())
        .filter(|i| seen.insert(dedup_key(&i.genotype, &p.grammar).unwrap()))
        .map(|i| i.objectives.0.clone())
        .collect();
    let mut expected: Vec<Vec<f64>> = brute_nondominated(&merged)
        .into_iter()
        .map(|i| merged[i].clone())
        .collect();
    let mut got: Vec<Vec<f64>> = global
        .members
        .iter()
        .map(|m| m.individual.objectives.0.clone())
        .collect();
    expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(got, expected);

    let again = final_front(&global.members);
    assert_eq!(again, global.members);

    let golden: Vec<Vec<f64>> = load_golden().front.iter().map(|m| m.objectives.clone()).collect();
    assert_eq!(got, golden, "11-run global front differs from enumeration");
    format!(
        "{} merged, {} on global front, idempotent, equals enumeration",
        merged.len(),
        got.len()
    )
}

fn determinism() -> String {
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let mut cfg = fixture_config();
        cfg.runs = 2;
        cfg.out_dir = d.path().join("runs");
        campaign::run_campaign(&cfg, |_, _| {}).unwrap();
        campaign::aggregate_dir(&cfg.out_dir, &d.path().join("agg")).unwrap();
    }
    let files = [
        "runs/run_000.json",
        "runs/run_001.json",
        "agg/global_front.json",
        "agg/front.csv",
        "agg/plot_data.csv",
    ];
    for f in files {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    format!("{} files byte-identical across invocations", files.len())
}

struct Scripted(fn(&str) -> String);

impl ModelBackend for Scripted {
    fn generate(&self, _: &str, prompt: &str) -> Result<Generation, BackendError> {
        let text = (self.0)(prompt);
        Ok(Generation {
            input_tokens: whitespace_tokens(prompt),
            output_tokens: whitespace_tokens(&text),
            text,
        })
    }
}

fn metric_identities(p: &Prepared) -> String {
    let sample = draw_sample(&p.dataset, 20, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_genotype(&p.grammar, &p.models, &mut rng);
    let ds = &p.dataset;
    // fn pointers cannot capture, so the oracle answers from a static key
    static KEY: std::sync::OnceLock<Vec<(String, String)>> = std::sync::OnceLock::new();
    let _ = KEY.set(
        ds.instances
            .iter()
            .map(|i| (i.query.clone(), i.target.clone()))
            .collect(),
    );
    let oracle = Scripted(|prompt| {
        let (_, t) = KEY
            .get()
            .unwrap()
            .iter()
            .find(|(q, _)| prompt.contains(q.as_str()))
            .unwrap();
        format!("Answer: {t}.")
    });
    let e = evaluate(&g, &p.grammar, ds, &sample, &oracle, &EvalCache::in_memory()).unwrap();
    assert_eq!(e.objectives.0[0], 0.0);

    let mute = Scripted(|_| "I would rather not say.".into());
    let e = evaluate(&g, &p.grammar, ds, &sample, &mute, &EvalCache::in_memory()).unwrap();
    assert_eq!(e.objectives.0[0], 1.0);

    let record = |input: u64, output: u64, correct: bool| EvaluationRecord {
        instance_id: String::new(),
        rendered_prompt: String::new(),
        raw_output: String::new(),
        extracted: None,
        correct,
        input_tokens: input,
        output_tokens: output,
    };
    // 2 of 3 correct, 601 tokens over 3 queries
    let recs = [record(100, 100, true), record(150, 50, false), record(190, 11, true)];
    let o = objectives_from_records(&recs);
    assert_eq!(o.0, vec![1.0 / 3.0, 601.0 / 3.0]);
    "f1=0 for oracle, f1=1 for no-label output, token mean 601/3 exact".into()
}

fn knee_properties() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..2000 {
        let n = rng.gen_range(1..40);
        let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut ys: Vec<f64> = (0..n).map(|_| rng.gen_range(10.0..500.0)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let front: Vec<Vec<f64>> = xs.iter().zip(&ys).map(|(x, y)| vec![*x, *y]).collect();
        let k = knee_point(&front).unwrap();
        assert!(k < front.len());
        let c = rng.gen_range(0.01..100.0);
        let axis = rng.gen_range(0..2);
        let scaled: Vec<Vec<f64>> = front
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q[axis] *= c;
                q
            })
            .collect();
        assert_eq!(knee_point(&scaled).unwrap(), k);
    }
    "2000 random fronts: knee in front, invariant under rescaling".into()
}

/// Minimal chat-completions endpoint: answers "yes" with usage counts.
fn mock_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut buf = vec![0; len];
                if reader.read_exact(&mut buf).is_err() {
                    return;
                }
                let req: serde_json::Value = serde_json::from_slice(&buf).unwrap_or_default();
                let prompt = req["messages"][0]["content"].as_str().unwrap_or("");
                let body = serde_json::json!({
                    "choices": [{"message": {"role": "assistant", "content": "yes"}}],
                    "usage": {"prompt_tokens": whitespace_tokens(prompt), "completion_tokens": 1},
                })
                .to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            });
        }
    });
    url
}

fn live_smoke() -> String {
    let (url, models, label) = match std::env::var("PARETOPROMPT_LIVE_URL") {
        Ok(url) => {
            let models: Vec<String> = std::env::var("PARETOPROMPT_LIVE_MODELS")
                .expect("PARETOPROMPT_LIVE_MODELS must list the models to try")
                .split(',')
                .map(|s| s.trim().to_owned())
                .filter(|s| !s.is_empty())
                .collect();
            (url, models, "live endpoint")
        }
        Err(_) => (
            mock_endpoint(),
            vec!["mock-a".into(), "mock-b".into()],
            "local mock endpoint",
        ),
    };
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config();
    cfg.models = models;
    cfg.backend = BackendConfig::Http(HttpBackendConfig {
        backoff_ms: 50,
        ..HttpBackendConfig::new(url)
    });
    cfg.population_size = 4;
    cfg.generations = 2;
    cfg.sample_size = 5;
    cfg.runs = 1;
    cfg.out_dir = dir.path().join("runs");
    let written = campaign::run_campaign(&cfg, |_, _| {}).unwrap();
    let run = RunResult::read(&written[0]).unwrap();
    assert_eq!(run.history.len(), 3);
    assert!(!run.final_front.is_empty());
    assert!(run.stats.backend_calls > 0);
    assert!(run
        .history
        .iter()
        .flat_map(|h| &h.population)
        .all(|i| i.objectives.0[1] > 0.0));
    let front = campaign::aggregate_dir(&cfg.out_dir, &dir.path().join("agg")).unwrap();
    assert!(!campaign::report(&front).unwrap().is_empty());
    format!(
        "{label}: {} backend calls, nonzero token usage",
        run.stats.backend_calls
    )
}

type Check = Box<dyn Fn() -> String>;

fn main() {
    let shared = Arc::new(fixture());
    let (p5, p6, p8) = (shared.clone(), shared.clone(), shared.clone());
    let criteria: Vec<(&str, Check)> = vec![
        ("sorting oracle", Box::new(sorting_oracle)),
        ("crowding oracle", Box::new(crowding_oracle)),
        ("operator statistics", Box::new(operator_statistics)),
        ("operator structure", Box::new(operator_structure)),
        ("end-to-end recovery", Box::new(move || end_to_end_recovery(&p5))),
        ("aggregation oracle", Box::new(move || aggregation_oracle(&p6))),
        ("determinism", Box::new(determinism)),
        ("metric identities", Box::new(move || metric_identities(&p8))),
        ("knee properties", Box::new(knee_properties)),
        ("live smoke", Box::new(live_smoke)),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {:>2} {name}: FAIL ({msg})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
