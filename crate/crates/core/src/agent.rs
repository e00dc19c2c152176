//! Inference loop: plan a blueprint, act under rule verification, and track
//! anchor progress with the monitor.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{extract_json, BackendError, ChatBackend, ChatRequest, Message, TurnContext, TurnStep};
use crate::feasibility::{verify_action, RuleBank};
use crate::model::{Env, Step, Task, Trajectory, Validity};
use crate::progress::{Embedder, ProgressMemory};
use crate::prompts::{render, template, Role};
use crate::scene::{Reconstructor, SceneReconstructor};
use crate::textcraft::{self, inventory_line, EnvError, EnvState};

pub const FALLBACK_PLAN: &str = "complete the task";
/// How many recent steps the monitor sees.
const MONITOR_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub max_refine: usize,
    pub step_budget: u32,
    pub topk_tasks: usize,
    pub topk_anchors: usize,
    /// Off means a single fallback anchor and no planner call.
    pub planner: bool,
}

impl LoopConfig {
    pub fn for_env(env: Env) -> Self {
        let (step_budget, topk_anchors) = match env {
            Env::Alfworld => (50, 3),
            Env::Webshop => (15, 3),
            Env::Textcraft => (textcraft::STEP_BUDGET, 0),
        };
        LoopConfig { max_refine: 5, step_budget, topk_tasks: 3, topk_anchors, planner: true }
    }
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig::for_env(Env::Textcraft)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvFeedback {
    pub observation: String,
    pub done: bool,
    pub reward: f64,
}

/// A live episode the agent can act in.
pub trait Environment {
    fn env(&self) -> Env;
    fn initial_observation(&self, task: &Task) -> String;
    fn step(&mut self, action: &str) -> Result<EnvFeedback, EnvError>;
}

impl Environment for EnvState {
    fn env(&self) -> Env {
        Env::Textcraft
    }

    fn initial_observation(&self, task: &Task) -> String {
        textcraft::initial_observation(task)
    }

    fn step(&mut self, action: &str) -> Result<EnvFeedback, EnvError> {
        let out = self.apply(action)?;
        Ok(EnvFeedback { observation: out.observation, done: out.done, reward: f64::from(out.reward) })
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("step budget of {0} exhausted")]
    BudgetExhausted(u32),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Read-only memories for one run. Either may be absent for ablations.
#[derive(Clone, Copy)]
pub struct Memories<'a> {
    pub progress: Option<&'a ProgressMemory>,
    pub embedder: &'a dyn Embedder,
    pub bank: Option<&'a RuleBank>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    /// 1-based environment step the proposal was for.
    pub step: usize,
    pub attempt: usize,
    pub action: String,
    pub rule_ids: Vec<String>,
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub initial_observation: String,
    pub history: Vec<Step>,
    pub planned_anchors: Vec<String>,
    /// 1-based.
    pub anchor_index: usize,
    pub anchor_trace: Vec<usize>,
    pub refinement_log: Vec<Refinement>,
    pub actor_calls: usize,
    pub done: bool,
    pub reward: f64,
}

impl AgentState {
    pub fn new(initial_observation: String, planned_anchors: Vec<String>) -> Self {
        let planned_anchors =
            if planned_anchors.is_empty() { vec![FALLBACK_PLAN.to_string()] } else { planned_anchors };
        AgentState {
            initial_observation,
            history: Vec::new(),
            planned_anchors,
            anchor_index: 1,
            anchor_trace: vec![1],
            refinement_log: Vec::new(),
            actor_calls: 0,
            done: false,
            reward: 0.0,
        }
    }

    pub fn current_anchor(&self) -> &str {
        &self.planned_anchors[self.anchor_index - 1]
    }

    fn observation(&self) -> &str {
        self.history.last().map_or(&self.initial_observation, |s| &s.observation)
    }

    fn turn_context(&self, task: &Task, attempt: usize) -> TurnContext {
        TurnContext {
            task_id: task.id.clone(),
            instruction: task.instruction.clone(),
            initial_observation: self.initial_observation.clone(),
            history: self
                .history
                .iter()
                .map(|s| TurnStep { action: s.action.clone(), observation: s.observation.clone() })
                .collect(),
            anchors: self.planned_anchors.clone(),
            anchor_index: self.anchor_index - 1,
            attempt,
        }
    }
}

/// Outcome of one executed environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub action: String,
    pub observation: String,
    pub valid: Validity,
    /// Proposals rejected before execution.
    pub refinements: usize,
    /// True when the executed action was still blocked after `max_refine`.
    pub forced: bool,
    pub advanced: bool,
}

fn numbered(lines: &[String]) -> String {
    lines.iter().enumerate().map(|(i, l)| format!("{}. {l}", i + 1)).collect::<Vec<_>>().join("\n")
}

fn examples_block(env: Env, examples: &[(&str, Vec<&str>)]) -> String {
    examples
        .iter()
        .map(|(task, anchors)| match env {
            Env::Textcraft => {
                format!("Task:\n{task}\nOutput:\n{}", serde_json::to_string(anchors).expect("strings serialize"))
            }
            _ => {
                let guide: Vec<String> = anchors.iter().map(|a| a.to_string()).collect();
                format!("Task: {task}\nblueprint action guide:\n{}", numbered(&guide))
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Reads an anchor list from a planner reply: a JSON array of strings, or a
/// numbered / bulleted guide.
pub fn parse_plan(reply: &str) -> Vec<String> {
    if let Some(Value::Array(items)) = extract_json(reply, '[') {
        let anchors: Vec<String> =
            items.iter().filter_map(Value::as_str).map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        if !anchors.is_empty() {
            return anchors;
        }
    }
    reply
        .lines()
        .filter_map(|line| {
            let t = line.trim();
            let rest = t.trim_start_matches(|c: char| c.is_ascii_digit());
            let body = if rest.len() < t.len() {
                rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?
            } else {
                t.strip_prefix("- ").or_else(|| t.strip_prefix("* "))?
            };
            let body = body.trim();
            let body = body
                .split_once(':')
                .filter(|(head, _)| head.to_ascii_lowercase().starts_with("blueprint"))
                .map_or(body, |(_, tail)| tail.trim());
            (!body.is_empty()).then(|| body.to_string())
        })
        .collect()
}

/// Plans the anchor sequence for a task. Any failure yields the single
/// fallback anchor.
pub fn plan_blueprint(
    task: &Task,
    initial_observation: &str,
    memories: &Memories<'_>,
    backend: &dyn ChatBackend,
    config: &LoopConfig,
) -> Vec<String> {
    if !config.planner {
        return vec![FALLBACK_PLAN.into()];
    }
    let retrieved = memories
        .progress
        .map(|m| m.topk_tasks(memories.embedder, &task.instruction, config.topk_tasks))
        .transpose()
        .unwrap_or_else(|e| {
            tracing::warn!(error = %e, "task retrieval failed");
            None
        })
        .unwrap_or_default();
    let examples: Vec<(&str, Vec<&str>)> =
        retrieved.iter().map(|(_, e)| (e.task_instruction.as_str(), e.anchor_texts())).collect();
    let prompt = render(
        template(Role::Planner, task.env),
        &[("EXAMPLES", &examples_block(task.env, &examples)), ("TASK", &task.instruction)],
    );
    let ctx = AgentState::new(initial_observation.to_string(), Vec::new()).turn_context(task, 0);
    let request = ChatRequest::new(Role::Planner, task.env, vec![Message::user(prompt)]).with_context(ctx);
    match backend.chat(&request) {
        Ok(reply) => {
            let anchors = parse_plan(&reply);
            if anchors.is_empty() {
                vec![FALLBACK_PLAN.into()]
            } else {
                anchors
            }
        }
        Err(e) => {
            tracing::warn!(task = %task.id, error = %e, "planner failed, using fallback anchor");
            vec![FALLBACK_PLAN.into()]
        }
    }
}

fn history_block(state: &AgentState) -> String {
    let mut out = state.initial_observation.clone();
    for s in &state.history {
        out.push_str(&format!("\n> {}\n{}", s.action, s.observation));
    }
    out
}

fn demonstrations(state: &AgentState, memories: &Memories<'_>, config: &LoopConfig) -> String {
    let Some(memory) = memories.progress else { return String::new() };
    let hits = match memory.topk_anchors(memories.embedder, state.current_anchor(), config.topk_anchors) {
        Ok(h) => h,
        Err(e) => {
            tracing::warn!(error = %e, "anchor retrieval failed");
            return String::new();
        }
    };
    hits.iter()
        .map(|h| {
            let steps: Vec<String> = h.chunk.iter().map(|c| format!("{}\n> {}", c.observation, c.action)).collect();
            format!("[{}]\n{}", h.anchor_text, steps.join("\n"))
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// First non-empty line of an actor reply, without a leading prompt marker.
pub fn clean_action(reply: &str) -> String {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with("```")).unwrap_or("");
    let line = line.trim_start_matches('>').trim();
    line.strip_prefix("Action:").map_or(line, str::trim).to_string()
}

fn monitor_signal(reply: &str, current: usize) -> bool {
    extract_json(reply, '{')
        .and_then(|v| v.get("next_blueprint_idx").and_then(Value::as_u64))
        .is_some_and(|next| next == current as u64 + 1)
}

fn monitor(task: &Task, state: &AgentState, backend: &dyn ChatBackend) -> Result<bool, BackendError> {
    let recent: Vec<String> = state
        .history
        .iter()
        .enumerate()
        .skip(state.history.len().saturating_sub(MONITOR_WINDOW))
        .map(|(i, s)| format!("{}. Action: {}\n   Observation: {}", i + 1, s.action, s.observation))
        .collect();
    let inventory = match Reconstructor.reconstruct(task, &state.initial_observation, &state.history) {
        Ok(crate::scene::SceneState::Textcraft(s)) => inventory_line(&s.inventory),
        _ => String::new(),
    };
    let prompt = render(
        template(Role::Monitor, task.env),
        &[
            ("TASK", &task.instruction),
            ("GUIDE", &numbered(&state.planned_anchors)),
            ("CUR_NUM", &state.anchor_index.to_string()),
            ("NUM", &state.planned_anchors.len().to_string()),
            ("CUR_blueprint", state.current_anchor()),
            ("TRAJECTORY", &recent.join("\n")),
            ("INVENTORY", &inventory),
        ],
    );
    let request = ChatRequest::new(Role::Monitor, task.env, vec![Message::user(prompt)])
        .with_context(state.turn_context(task, 0));
    Ok(monitor_signal(&backend.chat(&request)?, state.anchor_index - 1))
}

/// One environment step: propose, verify and refine, execute, monitor.
#[allow(clippy::too_many_arguments)]
pub fn act_once(
    state: &mut AgentState,
    task: &Task,
    memories: &Memories<'_>,
    env: &mut dyn Environment,
    backend: &dyn ChatBackend,
    config: &LoopConfig,
) -> Result<StepReport, AgentError> {
    if state.done {
        return Err(AgentError::EpisodeFinished);
    }
    if state.history.len() >= config.step_budget as usize {
        return Err(AgentError::BudgetExhausted(config.step_budget));
    }
    let step_no = state.history.len() + 1;
    let anchor = state.current_anchor().to_string();
    let demos = demonstrations(state, memories, config);
    let base_history = history_block(state);
    let scene = memories.bank.and_then(|_| {
        Reconstructor
            .reconstruct(task, &state.initial_observation, &state.history)
            .map_err(|e| tracing::warn!(error = %e, "scene reconstruction failed, skipping verification"))
            .ok()
    });

    let mut feedback = String::new();
    let mut action = String::new();
    let mut refinements = 0;
    let mut forced = false;
    for attempt in 0..=config.max_refine {
        let prompt = render(
            template(Role::Actor, task.env),
            &[
                ("TASK", &task.instruction),
                ("blueprint_ACTION_GUIDE", &numbered(&state.planned_anchors)),
                ("CURRENT_blueprint", &anchor),
                ("blueprint_LEVEL_DEMONSTRATIONS", &demos),
                ("HISTORY", &format!("{base_history}{feedback}")),
            ],
        );
        let request = ChatRequest::new(Role::Actor, task.env, vec![Message::user(prompt)])
            .with_context(state.turn_context(task, attempt));
        state.actor_calls += 1;
        action = clean_action(&backend.chat(&request)?);
        let (Some(bank), Some(scene)) = (memories.bank, scene.as_ref()) else { break };
        let verdict = verify_action(bank, state.observation(), scene, &action);
        if verdict.permit {
            break;
        }
        let lines = verdict.feedback();
        state.refinement_log.push(Refinement {
            step: step_no,
            attempt,
            action: action.clone(),
            rule_ids: verdict.blocking.iter().map(|b| b.rule_id.clone()).collect(),
            feedback: lines.clone(),
        });
        if attempt == config.max_refine {
            forced = true;
            break;
        }
        refinements += 1;
        feedback.push_str(&format!("\n> {action}\n{lines}"));
    }

    let out = env.step(&action)?;
    let valid = task.env.validity(&out.observation);
    state.history.push(Step::new(task.env, action.clone(), out.observation.clone()));
    state.done = out.done;
    state.reward = out.reward;

    let advanced =
        if state.anchor_index < state.planned_anchors.len() { monitor(task, state, backend)? } else { false };
    if advanced {
        state.anchor_index += 1;
    }
    state.anchor_trace.push(state.anchor_index);
    Ok(StepReport { action, observation: out.observation, valid, refinements, forced, advanced })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedStep {
    pub action: String,
    pub observation: String,
    pub valid: Validity,
}

/// One JSONL line of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub env: Env,
    pub success: bool,
    pub reward: f64,
    pub steps_taken: usize,
    pub invalid_steps: usize,
    pub steps: Vec<ExecutedStep>,
    pub planned_anchors: Vec<String>,
    /// 1-based anchor index before the first step and after each step.
    pub anchor_trace: Vec<usize>,
    pub refinement_log: Vec<Refinement>,
    pub actor_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub initial_observation: String,
}

impl EpisodeResult {
    pub fn to_trajectory(&self, task: &Task) -> Trajectory {
        Trajectory {
            task: task.clone(),
            initial_observation: self.initial_observation.clone(),
            steps: self.steps.iter().map(|s| Step::new(self.env, s.action.clone(), s.observation.clone())).collect(),
            success: self.success,
            reward: self.reward,
        }
    }
}

fn finish(task: &Task, state: AgentState, error: Option<String>) -> EpisodeResult {
    let steps: Vec<ExecutedStep> = state
        .history
        .iter()
        .map(|s| ExecutedStep { action: s.action.clone(), observation: s.observation.clone(), valid: s.valid })
        .collect();
    EpisodeResult {
        task_id: task.id.clone(),
        env: task.env,
        success: error.is_none() && state.reward >= 1.0,
        reward: if error.is_none() { state.reward } else { 0.0 },
        steps_taken: steps.len(),
        invalid_steps: steps.iter().filter(|s| s.valid == Validity::Invalid).count(),
        steps,
        planned_anchors: state.planned_anchors,
        anchor_trace: state.anchor_trace,
        refinement_log: state.refinement_log,
        actor_calls: state.actor_calls,
        error,
        initial_observation: state.initial_observation,
    }
}

/// Runs until the environment reports done or the step budget is spent.
/// Backend and environment errors end the episode as a failure.
pub fn run_episode(
    task: &Task,
    memories: &Memories<'_>,
    env: &mut dyn Environment,
    backend: &dyn ChatBackend,
    config: &LoopConfig,
) -> EpisodeResult {
    let o0 = env.initial_observation(task);
    let anchors =
        if config.step_budget == 0 { Vec::new() } else { plan_blueprint(task, &o0, memories, backend, config) };
    let mut state = AgentState::new(o0, anchors);
    while !state.done && state.history.len() < config.step_budget as usize {
        if let Err(e) = act_once(&mut state, task, memories, env, backend, config) {
            tracing::warn!(task = %task.id, error = %e, "episode aborted");
            return finish(task, state, Some(e.to_string()));
        }
    }
    finish(task, state, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ActorDouble, OracleBackend};
    use crate::feasibility::textcraft_reference_bank;
    use crate::progress::HashingEmbedder;
    use crate::textcraft::generate_task;

    fn mem<'a>(e: &'a HashingEmbedder, bank: Option<&'a RuleBank>) -> Memories<'a> {
        Memories { progress: None, embedder: e, bank }
    }

    #[test]
    fn plan_parsing() {
        assert_eq!(parse_plan("Sure:\n[\"a\", \"b\"]"), ["a", "b"]);
        assert_eq!(
            parse_plan("1. go to desk\n2) take mug\n- blueprint 3: put mug"),
            ["go to desk", "take mug", "put mug"]
        );
        assert!(parse_plan("I cannot help with that.").is_empty());
    }

    #[test]
    fn action_cleaning() {
        assert_eq!(clean_action("\n> get 1 poppy\nextra"), "get 1 poppy");
        assert_eq!(clean_action("Action: inventory"), "inventory");
    }

    #[test]
    fn monitor_signal_is_binary() {
        assert!(monitor_signal(r#"{"next_blueprint_idx": 2}"#, 1));
        assert!(!monitor_signal(r#"{"next_blueprint_idx": 3}"#, 1));
        assert!(!monitor_signal(r#"{"next_blueprint_idx": 1}"#, 1));
        assert!(!monitor_signal("no json", 1));
    }

    struct Prose;

    impl ChatBackend for Prose {
        fn chat(&self, _: &ChatRequest) -> Result<String, BackendError> {
            Ok("I think you should craft things.".into())
        }
    }

    #[test]
    fn prose_plan_falls_back() {
        let (task, env) = generate_task(3, 2, 2).unwrap();
        let e = HashingEmbedder::default();
        let plan =
            plan_blueprint(&task, &env.initial_observation(&task), &mem(&e, None), &Prose, &LoopConfig::default());
        assert_eq!(plan, [FALLBACK_PLAN]);
    }

    #[test]
    fn oracle_solves_and_trace_is_monotone() {
        let e = HashingEmbedder::default();
        let bank = textcraft_reference_bank();
        for seed in 0..10 {
            let (task, mut env) = generate_task(seed, 2, 2).unwrap();
            let r =
                run_episode(&task, &mem(&e, Some(&bank)), &mut env, &OracleBackend::default(), &LoopConfig::default());
            assert!(r.success, "{}: {:?}", task.id, r.error);
            assert!(r.planned_anchors.last().unwrap().starts_with("Craft the "));
            assert_eq!(r.anchor_trace.len(), r.steps_taken + 1);
            assert!(r.anchor_trace.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
            assert!(r.refinement_log.is_empty());
        }
    }

    #[test]
    fn zero_budget_runs_no_steps() {
        let e = HashingEmbedder::default();
        let (task, mut env) = generate_task(1, 2, 2).unwrap();
        let cfg = LoopConfig { step_budget: 0, ..LoopConfig::default() };
        let r = run_episode(&task, &mem(&e, None), &mut env, &OracleBackend::default(), &cfg);
        assert_eq!((r.steps_taken, r.reward, r.actor_calls), (0, 0.0, 0));
    }

    #[test]
    fn noisy_actor_is_refined() {
        let e = HashingEmbedder::default();
        let bank = textcraft_reference_bank();
        let backend = OracleBackend::new(ActorDouble::Noisy { p: 1.0, seed: 4 });
        let (task, mut env) = generate_task(5, 2, 2).unwrap();
        let cfg = LoopConfig::default();
        let r = run_episode(&task, &mem(&e, Some(&bank)), &mut env, &backend, &cfg);
        assert!(r.success);
        assert!(!r.refinement_log.is_empty());
        assert_eq!(r.invalid_steps, 0);
        assert!(r.actor_calls <= r.steps_taken * (cfg.max_refine + 1));
    }

    struct Stubborn;

    impl ChatBackend for Stubborn {
        fn chat(&self, r: &ChatRequest) -> Result<String, BackendError> {
            Ok(match r.role {
                Role::Actor => "craft 99 nothing using 1 air".into(),
                _ => "[]".into(),
            })
        }
    }

    #[test]
    fn forced_fallback_after_k_refinements() {
        let e = HashingEmbedder::default();
        let bank = textcraft_reference_bank();
        let (task, mut env) = generate_task(2, 2, 2).unwrap();
        let cfg = LoopConfig { step_budget: 3, ..LoopConfig::default() };
        let r = run_episode(&task, &mem(&e, Some(&bank)), &mut env, &Stubborn, &cfg);
        assert_eq!(r.steps_taken, 3);
        assert_eq!(r.invalid_steps, 3);
        assert_eq!(r.actor_calls, 3 * (cfg.max_refine + 1));
        assert_eq!(r.refinement_log.len(), 3 * (cfg.max_refine + 1));
        assert!(!r.success);
    }
}
