use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{BackendConfig, BackendKind, Config};
use super::{compute_metrics, HarnessError, MetricsReport};
use crate::agent::{run_episode, EpisodeResult, Memories};
use crate::backend::{
    extract_json, BackendError, ChatBackend, ChatRequest, HttpBackend, Message, OracleBackend, ReplayCache, ReplayMode,
};
use crate::distill::{distill_all, filter_successes, heuristic_segment_textcraft};
use crate::feasibility::{build_bank, load_bank, save_bank, Candidate, RuleBank, Selection, VerificationReport};
use crate::model::{
    build_transition_pool, read_trajectories, write_trajectories, Env, Task, Transition, TransitionPool,
};
use crate::par::Exec;
use crate::progress::{Blueprint, HashingEmbedder, ProgressMemory};
use crate::prompts::{inductor_system, render, template, Role};
use crate::rules::parse_action;
use crate::scene::Reconstructor;
use crate::textcraft::{generate_task_with, EnvState, GenConfig};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |error| HarnessError::Io { path: path.display().to_string(), error }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> HarnessError + '_ {
    move |error| HarnessError::Json { path: path.display().to_string(), error }
}

fn ensure_parent(path: &Path) -> Result<(), HarnessError> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(io_err(dir)),
        None => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    ensure_parent(path)?;
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(json_err(path))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(json_err(path))?);
        }
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(json_err(path))?;
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_trajectory_file(path: &Path) -> Result<Vec<crate::model::Trajectory>, HarnessError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(read_trajectories(BufReader::new(f))?)
}

/// Chat backend described by the config.
pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn ChatBackend>, HarnessError> {
    let live = || -> Box<dyn ChatBackend> {
        match &cfg.http {
            Some(http) => Box::new(HttpBackend::new(http.clone())),
            None => Box::new(OracleBackend::new(cfg.actor)),
        }
    };
    Ok(match cfg.kind {
        BackendKind::Oracle => Box::new(OracleBackend::new(cfg.actor)),
        BackendKind::Http => {
            let http = cfg.http.clone().ok_or_else(|| HarnessError::Config("missing [backend.http]".into()))?;
            Box::new(HttpBackend::new(http))
        }
        BackendKind::Replay => {
            let path =
                cfg.replay_path.as_ref().ok_or_else(|| HarnessError::Config("missing backend.replay_path".into()))?;
            let mode = if cfg.record { ReplayMode::Record(live()) } else { ReplayMode::Strict };
            let cache = ReplayCache::open(path, mode)
                .map_err(|e| HarnessError::Config(format!("replay cache {}: {e}", path.display())))?;
            Box::new(cache)
        }
    })
}

/// Tasks paired with fresh simulator states. Only TextCraft has a simulator.
pub fn load_tasks(cfg: &Config) -> Result<Vec<(Task, EnvState)>, HarnessError> {
    if cfg.env != Env::Textcraft {
        return Err(HarnessError::Config(format!(
            "no built-in simulator for {}; episodes can only be run for textcraft",
            cfg.env
        )));
    }
    let spec = &cfg.tasks;
    let budget = cfg.loop_config().step_budget;
    let tasks = match &spec.file {
        Some(path) => {
            let tasks: Vec<Task> = read_jsonl(path).map_err(|e| HarnessError::Config(e.to_string()))?;
            tasks
                .into_iter()
                .map(|t| {
                    let state = EnvState::from_task(&t, budget)
                        .map_err(|e| HarnessError::Config(format!("task {}: {e}", t.id)))?;
                    Ok((t, state))
                })
                .collect::<Result<Vec<_>, HarnessError>>()?
        }
        None => {
            let gen = GenConfig { depth: spec.depth, branching: spec.branching, distractors: spec.distractors, budget };
            (0..spec.count as u64)
                .map(|i| {
                    generate_task_with(cfg.seed.wrapping_add(i), &gen)
                        .map_err(|e| HarnessError::Config(format!("task generation for seed {}: {e}", cfg.seed + i)))
                })
                .collect::<Result<Vec<_>, HarnessError>>()?
        }
    };
    if tasks.is_empty() {
        return Err(HarnessError::Config("task set is empty".into()));
    }
    Ok(tasks)
}

/// Episodes over `tasks`, returned in task order whatever the worker count.
pub fn run_tasks(
    tasks: &[(Task, EnvState)],
    memories: &Memories<'_>,
    backend: &dyn ChatBackend,
    cfg: &Config,
) -> Vec<EpisodeResult> {
    let loop_cfg = cfg.loop_config();
    let exec = Exec::default();
    exec.with_workers(cfg.eval.workers, || {
        exec.map(tasks, |(task, state)| {
            let mut env = state.clone();
            run_episode(task, memories, &mut env, backend, &loop_cfg)
        })
    })
}

struct Loaded {
    embedder: HashingEmbedder,
    progress: Option<ProgressMemory>,
    bank: Option<RuleBank>,
}

impl Loaded {
    fn from_config(cfg: &Config) -> Result<Self, HarnessError> {
        let embedder = HashingEmbedder::new(cfg.memory.embedding_dim);
        let progress = cfg
            .memory
            .progress
            .as_ref()
            .map(|p| {
                ProgressMemory::load(p, &embedder)
                    .map_err(|e| HarnessError::Config(format!("progress memory {}: {e}", p.display())))
            })
            .transpose()?;
        let bank = cfg
            .memory
            .bank
            .as_ref()
            .map(|p| load_bank(p).map_err(|e| HarnessError::Config(format!("rule bank {}: {e}", p.display()))))
            .transpose()?;
        if let Some(b) = &bank {
            if b.env != cfg.env {
                return Err(HarnessError::Config(format!("rule bank is for {}, run is for {}", b.env, cfg.env)));
            }
        }
        Ok(Loaded { embedder, progress, bank })
    }

    fn memories(&self) -> Memories<'_> {
        Memories { progress: self.progress.as_ref(), embedder: &self.embedder, bank: self.bank.as_ref() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub metrics: MetricsReport,
    pub below_threshold: bool,
    pub results_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Runs the configured task set and writes `results.jsonl` and
/// `metrics.json` into `out_dir`.
pub fn cmd_eval(cfg: &Config, backend: &dyn ChatBackend, out_dir: &Path) -> Result<EvalOutcome, HarnessError> {
    cfg.validate()?;
    let loaded = Loaded::from_config(cfg)?;
    let tasks = load_tasks(cfg)?;
    let results = run_tasks(&tasks, &loaded.memories(), backend, cfg);
    let metrics = compute_metrics(&results)?;
    let results_path = out_dir.join(RESULTS_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);
    write_results(&results_path, &results)?;
    write_json(&metrics_path, &metrics)?;
    let below_threshold = metrics.success_rate < cfg.eval.min_success_rate;
    Ok(EvalOutcome { metrics, below_threshold, results_path, metrics_path })
}

pub fn write_results(path: &Path, results: &[EpisodeResult]) -> Result<(), HarnessError> {
    write_jsonl(path, results)
}

pub fn read_results(path: &Path) -> Result<Vec<EpisodeResult>, HarnessError> {
    read_jsonl(path)
}

pub fn cmd_metrics(results: &Path) -> Result<MetricsReport, HarnessError> {
    compute_metrics(&read_results(results)?)
}

/// Runs episodes and stores them as trajectories for pool building and
/// distillation. Returns `(episodes, successes)`.
pub fn cmd_collect(cfg: &Config, backend: &dyn ChatBackend, out: &Path) -> Result<(usize, usize), HarnessError> {
    cfg.validate()?;
    let loaded = Loaded::from_config(cfg)?;
    let tasks = load_tasks(cfg)?;
    let results = run_tasks(&tasks, &loaded.memories(), backend, cfg);
    let trajectories: Vec<_> = tasks.iter().zip(&results).map(|((t, _), r)| r.to_trajectory(t)).collect();
    let mut w = create(out)?;
    write_trajectories(&mut w, &trajectories).and_then(|_| w.flush()).map_err(io_err(out))?;
    Ok((results.len(), results.iter().filter(|r| r.success).count()))
}

pub fn cmd_build_pool(trajectories: &Path, out: &Path) -> Result<TransitionPool, HarnessError> {
    let trajs = read_trajectory_file(trajectories)?;
    let pool = build_transition_pool(&trajs, &Reconstructor)?;
    write_json(out, &pool)?;
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InduceReport {
    pub env: Env,
    pub positives: usize,
    pub negatives: usize,
    pub batches: usize,
    pub malformed_responses: usize,
    /// Distinct DSL candidates returned by the inductor.
    pub candidates: usize,
    pub parse_errors: usize,
    pub zero_fp: usize,
    pub selected: usize,
    pub selections: Vec<Selection>,
    pub verification: Vec<VerificationReport>,
}

fn transition_view(env: Env, t: &Transition) -> Value {
    let action = parse_action(env, &t.action).map_or_else(|_| json!({"raw": t.action}), |a| a.to_json());
    json!({
        "initial_state": t.scene.rule_view(),
        "action": action,
        "observation": t.post_observation,
        "success": t.valid,
    })
}

/// Negatives in chunks of `size`, each paired with as many positives taken
/// round-robin.
fn induction_batches(pool: &TransitionPool, size: usize) -> Vec<Vec<&Transition>> {
    pool.negatives
        .chunks(size)
        .enumerate()
        .map(|(b, negs)| {
            let mut batch: Vec<&Transition> = negs.iter().collect();
            if !pool.positives.is_empty() {
                let n = negs.len().min(pool.positives.len());
                batch.extend((0..n).map(|i| &pool.positives[(b * size + i) % pool.positives.len()]));
            }
            batch
        })
        .collect()
}

fn chat_with_retries(backend: &dyn ChatBackend, req: &ChatRequest, retries: usize) -> Result<String, BackendError> {
    let mut last = None;
    for attempt in 0..=retries {
        match backend.chat(req) {
            Ok(r) => return Ok(r),
            Err(e @ BackendError::CacheMiss { .. }) => return Err(e),
            Err(e) => {
                tracing::warn!(attempt, error = %e, "backend call failed");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Asks the inductor for rules batch by batch, then verifies, filters and
/// selects. Writes the bank to `out` and the report next to it.
pub fn cmd_induce(
    cfg: &Config,
    pool_path: &Path,
    backend: &dyn ChatBackend,
    out: &Path,
) -> Result<InduceReport, HarnessError> {
    let pool: TransitionPool = read_json(pool_path)?;
    let env = pool.env;
    let settings = &cfg.induce;
    let mut current_rules: Vec<String> = Vec::new();
    let mut candidates: BTreeMap<String, Candidate> = BTreeMap::new();
    let mut malformed = 0;
    let batches = induction_batches(&pool, settings.batch_size.max(1));
    if batches.is_empty() {
        tracing::warn!("transition pool has no negatives; the rule bank will be empty");
    }
    for batch in &batches {
        let transitions: Vec<Value> = batch.iter().map(|t| transition_view(env, t)).collect();
        let prompt = render(
            template(Role::Inductor, env),
            &[
                ("transitions", &serde_json::to_string_pretty(&transitions).expect("values serialize")),
                ("rules", &serde_json::to_string_pretty(&current_rules).expect("strings serialize")),
            ],
        );
        let req =
            ChatRequest::new(Role::Inductor, env, vec![Message::system(inductor_system(env)), Message::user(prompt)]);
        let reply = chat_with_retries(backend, &req, settings.retries)?;
        let Some(v) = extract_json(&reply, '{') else {
            malformed += 1;
            tracing::warn!("inductor reply has no JSON object");
            continue;
        };
        if let Some(rules) = v.get("final_rules").and_then(Value::as_array) {
            current_rules = rules.iter().filter_map(Value::as_str).map(String::from).collect();
        }
        for item in v.get("final_rules_dsl").and_then(Value::as_array).into_iter().flatten() {
            let (Some(text), Some(dsl)) =
                (item.get("rule").and_then(Value::as_str), item.get("dsl").and_then(Value::as_str))
            else {
                continue;
            };
            let cand = Candidate::new(env, text, dsl);
            let key = cand.parsed.as_ref().map_or_else(|_| format!("unparsed:{dsl}"), |r| r.id.clone());
            candidates.entry(key).or_insert(cand);
        }
    }
    let cands: Vec<Candidate> = candidates.into_values().collect();
    let outcome = build_bank(Exec::default(), &cands, &pool, settings.budget, settings.min_gain);
    ensure_parent(out)?;
    save_bank(&outcome.bank, out)?;
    let report = InduceReport {
        env,
        positives: pool.positives.len(),
        negatives: pool.negatives.len(),
        batches: batches.len(),
        malformed_responses: malformed,
        candidates: outcome.candidates(),
        parse_errors: outcome.reports.iter().filter(|r| !r.parse_ok).count(),
        zero_fp: outcome.zero_fp(),
        selected: outcome.selections.len(),
        selections: outcome.selections,
        verification: outcome.reports,
    };
    write_json(&report_path(out), &report)?;
    Ok(report)
}

/// `<bank>.report.json` next to the bank file.
pub fn report_path(bank: &Path) -> PathBuf {
    bank.with_extension("report.json")
}

/// Segments successful trajectories into blueprints (JSONL). Returns the
/// number written and the number dropped.
pub fn cmd_distill(
    cfg: &Config,
    trajectories: &Path,
    backend: &dyn ChatBackend,
    out: &Path,
) -> Result<(usize, usize), HarnessError> {
    let trajs = read_trajectory_file(trajectories)?;
    let (blueprints, dropped) = if cfg.distill.heuristic {
        if trajs.iter().any(|t| t.env() != Env::Textcraft) {
            return Err(HarnessError::Config("heuristic distillation only supports textcraft".into()));
        }
        let mut ok = filter_successes(&trajs);
        ok.sort_by(|a, b| a.task.id.cmp(&b.task.id));
        (ok.iter().map(heuristic_segment_textcraft).collect::<Vec<_>>(), 0)
    } else {
        let outcome = distill_all(Exec::default(), &trajs, backend, cfg.distill.retries);
        (outcome.blueprints, outcome.dropped.len())
    };
    write_jsonl(out, &blueprints)?;
    Ok((blueprints.len(), dropped))
}

pub fn cmd_build_memory(cfg: &Config, blueprints: &Path, out: &Path) -> Result<ProgressMemory, HarnessError> {
    let bps: Vec<Blueprint> = read_jsonl(blueprints)?;
    let embedder = HashingEmbedder::new(cfg.memory.embedding_dim);
    let mut memory = ProgressMemory::new(&embedder);
    for bp in &bps {
        memory.add_blueprint(bp, &embedder)?;
    }
    ensure_parent(out)?;
    memory.save(out)?;
    Ok(memory)
}
