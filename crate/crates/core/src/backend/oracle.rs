//! Scripted TextCraft backend for closed-loop runs.
//!
//! Every role is answered from the structured request context: the planner
//! and actor use the recipe planner, the monitor compares the inventory with
//! the current anchor's target, the distiller runs the heuristic segmenter
//! and the inductor returns the reference rule set. Actor doubles inject
//! infeasible crafts or off-task drift with seeded randomness.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest};
use crate::distill::heuristic_segment_textcraft;
use crate::feasibility::textcraft_reference_rules;
use crate::model::{Env, Step, Task, Trajectory, TrajectoryRecord};
use crate::prompts::Role;
use crate::scene::{reconstruct_textcraft, TextcraftSymbolicState};
use crate::textcraft::{anchor_target, closure_recipes, plan_anchors, plan_to, ItemCount, Recipe};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnStep {
    pub action: String,
    pub observation: String,
}

/// What the planner, actor and monitor are told about the episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnContext {
    pub task_id: String,
    pub instruction: String,
    pub initial_observation: String,
    pub history: Vec<TurnStep>,
    pub anchors: Vec<String>,
    /// 0-based.
    pub anchor_index: usize,
    /// 0 for the first proposal of a step, then one per refinement.
    pub attempt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillContext {
    pub trajectory: TrajectoryRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseClass {
    /// Output count differs from the recipe.
    WrongCount,
    /// Exact recipe, but the inventory does not cover it.
    MissingInputs,
    /// Correct count, extra input not in the recipe.
    WrongInputs,
}

/// Actor behaviour of the oracle backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActorDouble {
    Oracle,
    /// Replaces the first proposal of a step with an infeasible craft with
    /// probability `p`; refinements get the oracle action.
    Noisy {
        p: f64,
        seed: u64,
    },
    /// Drifts off task with probability `p` scaled by how much of the goal's
    /// recipe tree the current anchor spans.
    Wandering {
        p: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleBackend {
    pub actor: ActorDouble,
}

impl Default for OracleBackend {
    fn default() -> Self {
        OracleBackend { actor: ActorDouble::Oracle }
    }
}

fn refuse(msg: impl Into<String>) -> BackendError {
    BackendError::Refusal(msg.into())
}

fn context<T: for<'de> Deserialize<'de>>(request: &ChatRequest) -> Result<T, BackendError> {
    let ctx = request.context.clone().ok_or_else(|| refuse("oracle backend needs a request context"))?;
    serde_json::from_value(ctx).map_err(|e| refuse(format!("bad oracle context: {e}")))
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Per-step RNG: independent of thread scheduling and of earlier draws.
fn step_rng(seed: u64, ctx: &TurnContext) -> ChaCha8Rng {
    let step = ctx.history.len() as u64;
    ChaCha8Rng::seed_from_u64(seed ^ fnv(&ctx.task_id) ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct Situation {
    scene: TextcraftSymbolicState,
    recipes: Vec<Recipe>,
}

impl Situation {
    fn of(ctx: &TurnContext) -> Result<Self, BackendError> {
        let task = Task::new(ctx.task_id.clone(), Env::Textcraft, ctx.instruction.clone())
            .map_err(|e| refuse(e.to_string()))?;
        let history: Vec<Step> =
            ctx.history.iter().map(|s| Step::new(Env::Textcraft, s.action.clone(), s.observation.clone())).collect();
        let scene =
            reconstruct_textcraft(&task, &ctx.initial_observation, &history).map_err(|e| refuse(e.to_string()))?;
        let recipes = scene.recipes.iter().map(|r| r.recipe()).collect();
        Ok(Situation { scene, recipes })
    }

    fn target(&self, anchor: Option<&String>) -> ItemCount {
        anchor.and_then(|a| anchor_target(a, &self.scene.goal)).unwrap_or_else(|| self.scene.goal.clone())
    }

    fn met(&self, target: &ItemCount) -> bool {
        self.scene.count(&target.item) >= target.count
    }

    /// Target of the first unmet anchor from `j` on, else the goal.
    fn working_target(&self, ctx: &TurnContext) -> ItemCount {
        ctx.anchors
            .iter()
            .skip(ctx.anchor_index)
            .map(|a| self.target(Some(a)))
            .find(|t| !self.met(t))
            .unwrap_or_else(|| self.scene.goal.clone())
    }

    fn next_action(&self, ctx: &TurnContext) -> Result<String, BackendError> {
        let target = self.working_target(ctx);
        let plan = match plan_to(&self.recipes, &self.scene.inventory, &target) {
            Ok(p) if !p.is_empty() => p,
            Ok(_) => plan_to(&self.recipes, &self.scene.inventory, &self.scene.goal)?,
            // Unknown anchor item: work toward the goal instead.
            Err(_) => plan_to(&self.recipes, &self.scene.inventory, &self.scene.goal)?,
        };
        Ok(plan.into_iter().next().unwrap_or_else(|| "inventory".into()))
    }

    fn noisy_action(&self, rng: &mut ChaCha8Rng) -> Option<(NoiseClass, String)> {
        let class = *[NoiseClass::WrongCount, NoiseClass::MissingInputs, NoiseClass::WrongInputs].choose(rng)?;
        let r = self.recipes.choose(rng)?;
        let inputs = |r: &Recipe| r.inputs.iter().map(ItemCount::to_string).collect::<Vec<_>>().join(", ");
        let wrong_count = |r: &Recipe, rng: &mut ChaCha8Rng| {
            let n = r.output.count + rng.random_range(1..=3);
            format!("craft {n} {} using {}", r.output.item, inputs(r))
        };
        Some(match class {
            NoiseClass::WrongCount => (class, wrong_count(r, rng)),
            NoiseClass::MissingInputs => {
                let short: Vec<&Recipe> = self
                    .recipes
                    .iter()
                    .filter(|r| Recipe::sorted_inputs(&r.inputs).iter().any(|i| self.scene.count(&i.item) < i.count))
                    .collect();
                match short.choose(rng) {
                    Some(r) => (class, r.line()),
                    None => (NoiseClass::WrongCount, wrong_count(r, rng)),
                }
            }
            NoiseClass::WrongInputs => {
                let used: BTreeSet<&str> = r.inputs.iter().map(|i| i.item.as_str()).collect();
                let pool: Vec<&str> = self
                    .recipes
                    .iter()
                    .flat_map(|x| {
                        std::iter::once(x.output.item.as_str()).chain(x.inputs.iter().map(|i| i.item.as_str()))
                    })
                    .filter(|i| !used.contains(i) && *i != r.output.item)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let extra = pool.choose(rng).copied().unwrap_or("cobblestone");
                (class, format!("craft {} {} using {}, 1 {extra}", r.output.count, r.output.item, inputs(r)))
            }
        })
    }

    fn drift_action(&self, rng: &mut ChaCha8Rng) -> String {
        let closure = closure_recipes(&self.recipes, &self.scene.goal.item).unwrap_or_default();
        let needed: BTreeSet<&str> = self
            .recipes
            .iter()
            .filter(|r| closure.contains(&r.output.item))
            .flat_map(|r| r.inputs.iter().map(|i| i.item.as_str()))
            .collect();
        let distractors: Vec<&str> = self
            .recipes
            .iter()
            .flat_map(|r| r.inputs.iter().map(|i| i.item.as_str()))
            .filter(|i| !needed.contains(i) && !self.scene.craftable_items.contains(*i))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        match distractors.choose(rng) {
            Some(item) if rng.random_bool(0.7) => format!("get 1 {item}"),
            _ => "inventory".into(),
        }
    }

    /// |closure(target)| / |closure(goal)|.
    fn span_ratio(&self, target: &ItemCount) -> f64 {
        let size = |item: &str| closure_recipes(&self.recipes, item).map_or(1, |c| c.len().max(1)) as f64;
        (size(&target.item) / size(&self.scene.goal.item)).min(1.0)
    }
}

impl OracleBackend {
    pub fn new(actor: ActorDouble) -> Self {
        OracleBackend { actor }
    }

    fn plan(&self, ctx: &TurnContext) -> Result<String, BackendError> {
        let s = Situation::of(ctx)?;
        let anchors = plan_anchors(&s.recipes, &s.scene.goal)?;
        let texts: Vec<&str> = anchors.iter().map(|a| a.text.as_str()).collect();
        Ok(serde_json::to_string(&texts).expect("strings serialize"))
    }

    fn act(&self, ctx: &TurnContext) -> Result<String, BackendError> {
        let s = Situation::of(ctx)?;
        match self.actor {
            ActorDouble::Noisy { p, seed } if ctx.attempt == 0 => {
                let mut rng = step_rng(seed, ctx);
                if rng.random_bool(p.clamp(0.0, 1.0)) {
                    if let Some((_, a)) = s.noisy_action(&mut rng) {
                        return Ok(a);
                    }
                }
            }
            ActorDouble::Wandering { p, seed } if ctx.attempt == 0 => {
                let mut rng = step_rng(seed, ctx);
                let anchor = ctx.anchors.get(ctx.anchor_index);
                let ratio = s.span_ratio(&s.target(anchor));
                if rng.random_bool((p * ratio).clamp(0.0, 1.0)) {
                    return Ok(s.drift_action(&mut rng));
                }
            }
            _ => {}
        }
        s.next_action(ctx)
    }

    fn monitor(&self, ctx: &TurnContext) -> Result<String, BackendError> {
        let s = Situation::of(ctx)?;
        let target = s.target(ctx.anchors.get(ctx.anchor_index));
        let proven = s.met(&target);
        let last = ctx.history.last();
        let reply = json!({
            "thought_process": format!(
                "Target is {target}. Inventory holds {} {}. {}.",
                s.scene.count(&target.item),
                target.item,
                if proven { "Requirement met" } else { "Requirement not met" }
            ),
            "next_blueprint_idx": ctx.anchor_index + usize::from(proven),
            "evidence_step": if proven { ctx.history.len() } else { 0 },
            "evidence": if proven { last.map_or("", |l| l.observation.as_str()) } else { "" },
            "reason": if proven { "proven" } else { "not proven" },
        });
        Ok(reply.to_string())
    }

    fn distill(&self, ctx: DistillContext) -> Result<String, BackendError> {
        let traj = Trajectory::try_from(ctx.trajectory).map_err(|e| refuse(e.to_string()))?;
        let bp = heuristic_segment_textcraft(&traj);
        let out: Vec<Value> = bp
            .anchors
            .iter()
            .filter_map(|a| a.span.map(|(b, e)| json!({"blueprint": a.text, "actions": (b..=e).collect::<Vec<_>>()})))
            .collect();
        Ok(Value::Array(out).to_string())
    }

    fn induce(&self) -> String {
        let mut rules: Vec<(String, String)> =
            textcraft_reference_rules().into_iter().map(|c| (c.description, c.source)).collect();
        // An over-broad candidate that the zero-false-rejection filter removes.
        rules.push((
            "Getting an item that is already held fails.".into(),
            r#"when get: if get(scene.inventory, action.item, 0) > 0 then block "Already holding {action.item}." suggest "Do not get {action.item} again.""#.into(),
        ));
        let texts: Vec<String> = rules.iter().enumerate().map(|(i, (d, _))| format!("Rule {}: {d}", i + 1)).collect();
        let dsl: Vec<Value> = texts.iter().zip(&rules).map(|(t, (_, s))| json!({"rule": t, "dsl": s})).collect();
        json!({
            "verified_rules": [],
            "conflicting_rules": [],
            "improved_rules": [],
            "new_rules": texts,
            "final_rules": texts,
            "final_rules_dsl": dsl,
        })
        .to_string()
    }
}

impl ChatBackend for OracleBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if request.env != Env::Textcraft {
            return Err(refuse(format!("oracle backend only scripts textcraft, not {}", request.env)));
        }
        match request.role {
            Role::Planner => self.plan(&context(request)?),
            Role::Actor => self.act(&context(request)?),
            Role::Monitor => self.monitor(&context(request)?),
            Role::Distiller => self.distill(context(request)?),
            Role::Inductor => Ok(self.induce()),
        }
    }
}
