//! Trajectories, transitions and the per-environment validity predicates.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Exec;
use crate::scene::{SceneError, SceneReconstructor, SceneState};

/// Canonical rejection observations.
pub const ALFWORLD_REJECTION: &str = "Nothing happens.";
pub const WEBSHOP_REJECTION: &str = "Invalid action!";
pub const TEXTCRAFT_REJECTION_PREFIX: &str = "Could not";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Env {
    Alfworld,
    Webshop,
    Textcraft,
}

impl Env {
    pub const ALL: [Env; 3] = [Env::Alfworld, Env::Webshop, Env::Textcraft];

    pub fn as_str(self) -> &'static str {
        match self {
            Env::Alfworld => "alfworld",
            Env::Webshop => "webshop",
            Env::Textcraft => "textcraft",
        }
    }

    /// The environment's validity predicate.
    pub fn validity(self, observation: &str) -> Validity {
        match self {
            Env::Alfworld => valid_alfworld(observation),
            Env::Webshop => valid_webshop(observation),
            Env::Textcraft => valid_textcraft(observation),
        }
    }
}

impl fmt::Display for Env {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Env {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "alfworld" => Ok(Env::Alfworld),
            "webshop" => Ok(Env::Webshop),
            "textcraft" => Ok(Env::Textcraft),
            other => Err(format!("unknown environment `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validity {
    Valid,
    Invalid,
    /// Matched neither a success nor a rejection pattern.
    Unknown,
}

impl Validity {
    /// `Unknown` counts as valid for metrics.
    pub fn counts_as_valid(self) -> bool {
        self != Validity::Invalid
    }
}

pub fn valid_alfworld(observation: &str) -> Validity {
    if observation == ALFWORLD_REJECTION {
        Validity::Invalid
    } else {
        Validity::Valid
    }
}

pub fn valid_webshop(observation: &str) -> Validity {
    if observation == WEBSHOP_REJECTION {
        Validity::Invalid
    } else {
        Validity::Valid
    }
}

pub fn valid_textcraft(observation: &str) -> Validity {
    if observation.starts_with(TEXTCRAFT_REJECTION_PREFIX) {
        Validity::Invalid
    } else if observation.starts_with("Got ")
        || observation.starts_with("Crafted ")
        || observation == "OK."
        || observation.starts_with("Inventory:")
    {
        Validity::Valid
    } else {
        Validity::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub env: Env,
    pub instruction: String,
}

impl Task {
    pub fn new(id: impl Into<String>, env: Env, instruction: impl Into<String>) -> Result<Self, ModelError> {
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err(ModelError::EmptyInstruction);
        }
        Ok(Task { id: id.into(), env, instruction })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub action: String,
    pub observation: String,
    pub valid: Validity,
}

impl Step {
    /// Builds a step, deriving validity from the environment's predicate.
    pub fn new(env: Env, action: impl Into<String>, observation: impl Into<String>) -> Self {
        let observation = observation.into();
        Step { action: action.into(), valid: env.validity(&observation), observation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: Task,
    pub initial_observation: String,
    pub steps: Vec<Step>,
    pub success: bool,
    pub reward: f64,
}

/// One line of a trajectory JSONL file. Validity is never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub env: Env,
    pub instruction: String,
    pub initial_observation: String,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: String,
    pub observation: String,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        TrajectoryRecord {
            task_id: t.task.id.clone(),
            env: t.task.env,
            instruction: t.task.instruction.clone(),
            initial_observation: t.initial_observation.clone(),
            steps: t
                .steps
                .iter()
                .map(|s| StepRecord { action: s.action.clone(), observation: s.observation.clone() })
                .collect(),
            success: t.success,
            reward: t.reward,
        }
    }
}

impl TryFrom<TrajectoryRecord> for Trajectory {
    type Error = ModelError;

    fn try_from(r: TrajectoryRecord) -> Result<Self, Self::Error> {
        if !(0.0..=1.0).contains(&r.reward) {
            return Err(ModelError::RewardOutOfRange(r.reward));
        }
        let env = r.env;
        Ok(Trajectory {
            task: Task::new(r.task_id, env, r.instruction)?,
            initial_observation: r.initial_observation,
            steps: r.steps.into_iter().map(|s| Step::new(env, s.action, s.observation)).collect(),
            success: r.success,
            reward: r.reward,
        })
    }
}

impl Trajectory {
    pub fn env(&self) -> Env {
        self.task.env
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&TrajectoryRecord::from(self)).expect("trajectory record serializes")
    }
}

pub fn write_trajectories<W: Write>(mut w: W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for t in trajectories {
        writeln!(w, "{}", t.to_json_line())?;
    }
    Ok(())
}

pub fn read_trajectories<R: BufRead>(r: R) -> Result<Vec<Trajectory>, ModelError> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| ModelError::Json { line: lineno + 1, source: e })?;
        out.push(Trajectory::try_from(record)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub pre_observation: String,
    pub scene: SceneState,
    pub action: String,
    pub post_observation: String,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPool {
    pub env: Env,
    pub positives: Vec<Transition>,
    pub negatives: Vec<Transition>,
}

impl TransitionPool {
    pub fn empty(env: Env) -> Self {
        TransitionPool { env, positives: Vec::new(), negatives: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("task instruction is empty")]
    EmptyInstruction,
    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("trajectories span several environments ({0} and {1})")]
    MixedEnvironments(Env, Env),
    #[error("no trajectories given")]
    NoTrajectories,
    #[error("scene reconstruction failed for task {task}: {source}")]
    Scene { task: String, source: SceneError },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mines one transition per step. The scene for step `t` is reconstructed
/// from `o_0` and the steps strictly before `t`, and `o_0` is the
/// pre-observation of the first action. Steps of unknown validity are left
/// out of both partitions. Output order: trajectory id, then step index.
pub fn build_transition_pool(
    trajectories: &[Trajectory],
    scenes: &(dyn SceneReconstructor + Sync),
) -> Result<TransitionPool, ModelError> {
    build_transition_pool_with(Exec::default(), trajectories, scenes)
}

pub fn build_transition_pool_with(
    exec: Exec,
    trajectories: &[Trajectory],
    scenes: &(dyn SceneReconstructor + Sync),
) -> Result<TransitionPool, ModelError> {
    let env = trajectories.first().ok_or(ModelError::NoTrajectories)?.env();
    if let Some(other) = trajectories.iter().map(Trajectory::env).find(|e| *e != env) {
        return Err(ModelError::MixedEnvironments(env, other));
    }

    let mut order: Vec<&Trajectory> = trajectories.iter().collect();
    order.sort_by(|a, b| a.task.id.cmp(&b.task.id));

    let mined = exec.map(&order, |traj| mine_transitions(traj, scenes));
    let mut pool = TransitionPool::empty(env);
    for batch in mined {
        for t in batch? {
            if t.1 {
                pool.positives.push(t.0);
            } else {
                pool.negatives.push(t.0);
            }
        }
    }
    Ok(pool)
}

fn mine_transitions(
    traj: &Trajectory,
    scenes: &(dyn SceneReconstructor + Sync),
) -> Result<Vec<(Transition, bool)>, ModelError> {
    let mut out = Vec::with_capacity(traj.steps.len());
    for (i, step) in traj.steps.iter().enumerate() {
        let valid = match step.valid {
            Validity::Valid => true,
            Validity::Invalid => false,
            Validity::Unknown => continue,
        };
        let scene = scenes
            .reconstruct(&traj.task, &traj.initial_observation, &traj.steps[..i])
            .map_err(|source| ModelError::Scene { task: traj.task.id.clone(), source })?;
        let pre_observation =
            if i == 0 { traj.initial_observation.clone() } else { traj.steps[i - 1].observation.clone() };
        out.push((
            Transition {
                pre_observation,
                scene,
                action: step.action.clone(),
                post_observation: step.observation.clone(),
                valid,
            },
            valid,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Reconstructor;
    use proptest::prelude::*;

    #[test]
    fn alfworld_predicate_is_exact_match() {
        assert_eq!(valid_alfworld("Nothing happens."), Validity::Invalid);
        assert_eq!(valid_alfworld("You pick up the mug 1 from the desk 1."), Validity::Valid);
        assert_eq!(valid_alfworld("Nothing happens"), Validity::Valid);
    }

    #[test]
    fn webshop_predicate_is_exact_match() {
        assert_eq!(valid_webshop("Invalid action!"), Validity::Invalid);
        assert_eq!(valid_webshop("Your score (min 0.0, max 1.0): 1.0"), Validity::Valid);
        assert_eq!(valid_webshop(""), Validity::Valid);
    }

    #[test]
    fn textcraft_predicate_is_tristate() {
        assert_eq!(valid_textcraft("Could not find enough items to craft minecraft:stick"), Validity::Invalid);
        assert_eq!(valid_textcraft("Got 1 oak logs"), Validity::Valid);
        assert_eq!(valid_textcraft("Crafted 1 red dye"), Validity::Valid);
        assert_eq!(valid_textcraft("OK."), Validity::Valid);
        assert_eq!(valid_textcraft("Inventory: [stick] (4)"), Validity::Valid);
        assert_eq!(valid_textcraft("The sky is blue"), Validity::Unknown);
        assert!(Validity::Unknown.counts_as_valid());
    }

    proptest! {
        #[test]
        fn predicates_are_total(s in ".*") {
            for env in Env::ALL {
                let _ = env.validity(&s);
            }
        }
    }

    fn alf(id: &str, steps: &[(&str, &str)]) -> Trajectory {
        Trajectory {
            task: Task::new(id, Env::Alfworld, "put a mug in cabinet").unwrap(),
            initial_observation: "You are in the middle of a room. Looking quickly around you, you see a cabinet 1, a desk 1, and a drawer 2.".into(),
            steps: steps.iter().map(|(a, o)| Step::new(Env::Alfworld, *a, *o)).collect(),
            success: false,
            reward: 0.0,
        }
    }

    #[test]
    fn pool_counts_all_valid() {
        let t = alf(
            "a",
            &[
                ("go to desk 1", "You arrive at desk 1. On the desk 1, you see a mug 1."),
                ("take mug 1 from desk 1", "You pick up the mug 1 from the desk 1."),
                ("go to cabinet 1", "You arrive at cabinet 1. The cabinet 1 is closed."),
            ],
        );
        let pool = build_transition_pool(&[t], &Reconstructor).unwrap();
        assert_eq!((pool.positives.len(), pool.negatives.len()), (3, 0));
        assert_eq!(pool.positives[0].pre_observation.split('.').next().unwrap(), "You are in the middle of a room");
    }

    #[test]
    fn pool_partitions_fixture() {
        // 5 valid and 2 rejected steps across two trajectories.
        let t1 = alf(
            "t1",
            &[
                ("go to desk 1", "You arrive at desk 1. On the desk 1, you see a mug 1."),
                ("put mug 1 in/on desk 1", "Nothing happens."),
                ("take mug 1 from desk 1", "You pick up the mug 1 from the desk 1."),
            ],
        );
        let t2 = alf(
            "t2",
            &[
                ("open drawer 2", "Nothing happens."),
                ("go to drawer 2", "You arrive at drawer 2. The drawer 2 is closed."),
                ("open drawer 2", "You open the drawer 2. The drawer 2 is open. In it, you see nothing."),
                ("go to cabinet 1", "You arrive at cabinet 1. On the cabinet 1, you see a plate 1."),
            ],
        );
        let pool = build_transition_pool(&[t2.clone(), t1.clone()], &Reconstructor).unwrap();
        assert_eq!(pool.positives.len(), 5);
        assert_eq!(pool.negatives.len(), 2);
        assert!(pool.positives.iter().all(|t| t.valid));
        assert!(pool.negatives.iter().all(|t| !t.valid));
        // sorted by trajectory id: t1's rejection first
        assert_eq!(pool.negatives[0].action, "put mug 1 in/on desk 1");

        let again = build_transition_pool(&[t1, t2], &Reconstructor).unwrap();
        assert_eq!(serde_json::to_string(&pool).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn pool_rejects_mixed_envs() {
        let a = alf("a", &[]);
        let mut b = alf("b", &[]);
        b.task.env = Env::Webshop;
        assert!(matches!(
            build_transition_pool(&[a, b], &Reconstructor),
            Err(ModelError::MixedEnvironments(Env::Alfworld, Env::Webshop))
        ));
    }

    #[test]
    fn jsonl_round_trip_recomputes_validity() {
        let t = alf("x", &[("go to desk 1", "Nothing happens.")]);
        let mut buf = Vec::new();
        write_trajectories(&mut buf, std::slice::from_ref(&t)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains("valid"));
        let back = read_trajectories(&buf[..]).unwrap();
        assert_eq!(back, vec![t]);
        assert_eq!(back[0].steps[0].valid, Validity::Invalid);
    }

    #[test]
    fn empty_instruction_is_rejected() {
        assert!(Task::new("x", Env::Webshop, "   ").is_err());
    }
}
