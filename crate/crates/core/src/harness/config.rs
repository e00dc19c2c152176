use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::LoopConfig;
use crate::backend::{ActorDouble, HttpConfig};
use crate::feasibility::{DEFAULT_BUDGET, DEFAULT_MIN_GAIN};
use crate::model::Env;
use crate::progress::HashingEmbedder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    #[default]
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Actor behaviour of the oracle backend.
    pub actor: ActorDouble,
    pub http: Option<HttpConfig>,
    /// JSONL cache used by the replay backend.
    pub replay_path: Option<PathBuf>,
    /// Record misses through `http` (or the oracle when `http` is unset).
    pub record: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Oracle,
            actor: ActorDouble::Oracle,
            http: None,
            replay_path: None,
            record: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub progress: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub embedding_dim: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig { progress: None, bank: None, embedding_dim: HashingEmbedder::DEFAULT_DIMENSION }
    }
}

/// Per-field overrides of the environment's loop defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopOverrides {
    pub max_refine: Option<usize>,
    pub step_budget: Option<u32>,
    pub topk_tasks: Option<usize>,
    pub topk_anchors: Option<usize>,
    pub planner: Option<bool>,
}

impl LoopOverrides {
    pub fn resolve(&self, env: Env) -> LoopConfig {
        let d = LoopConfig::for_env(env);
        LoopConfig {
            max_refine: self.max_refine.unwrap_or(d.max_refine),
            step_budget: self.step_budget.unwrap_or(d.step_budget),
            topk_tasks: self.topk_tasks.unwrap_or(d.topk_tasks),
            topk_anchors: self.topk_anchors.unwrap_or(d.topk_anchors),
            planner: self.planner.unwrap_or(d.planner),
        }
    }
}

/// Task set: either a JSONL file of tasks or generated TextCraft tasks with
/// seeds `seed, seed + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub file: Option<PathBuf>,
    pub count: usize,
    pub depth: u32,
    pub branching: u32,
    pub distractors: bool,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec { file: None, count: 50, depth: 3, branching: 2, distractors: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Runs below this success rate exit with status 1.
    pub min_success_rate: f64,
    /// 0 uses every core.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InduceSettings {
    pub budget: usize,
    pub min_gain: usize,
    /// Negative transitions per inductor call.
    pub batch_size: usize,
    pub retries: usize,
}

impl Default for InduceSettings {
    fn default() -> Self {
        InduceSettings { budget: DEFAULT_BUDGET, min_gain: DEFAULT_MIN_GAIN, batch_size: 20, retries: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSettings {
    pub retries: usize,
    /// TextCraft only: segment locally instead of calling the distiller.
    pub heuristic: bool,
}

impl Default for DistillSettings {
    fn default() -> Self {
        DistillSettings { retries: crate::distill::DEFAULT_RETRIES, heuristic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub env: Env,
    pub seed: u64,
    pub backend: BackendConfig,
    pub memory: MemoryConfig,
    #[serde(rename = "loop")]
    pub loop_overrides: LoopOverrides,
    pub tasks: TaskSpec,
    pub eval: EvalSettings,
    pub induce: InduceSettings,
    pub distill: DistillSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            env: Env::Textcraft,
            seed: 0,
            backend: BackendConfig::default(),
            memory: MemoryConfig::default(),
            loop_overrides: LoopOverrides::default(),
            tasks: TaskSpec::default(),
            eval: EvalSettings::default(),
            induce: InduceSettings::default(),
            distill: DistillSettings::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Config = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::from_toml(&text)
    }

    /// Drops memories for the ablation arms. Without progress memory the
    /// planner is off too, leaving one fallback anchor.
    pub fn ablate(&mut self, no_progress: bool, no_feasibility: bool) {
        if no_progress {
            self.memory.progress = None;
            self.loop_overrides.planner = Some(false);
        }
        if no_feasibility {
            self.memory.bank = None;
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        self.loop_overrides.resolve(self.env)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match self.backend.kind {
            BackendKind::Http if self.backend.http.is_none() => {
                return bad("backend.kind = \"http\" needs [backend.http]".into())
            }
            BackendKind::Replay if self.backend.replay_path.is_none() => {
                return bad("backend.kind = \"replay\" needs backend.replay_path".into())
            }
            _ => {}
        }
        if self.memory.embedding_dim == 0 {
            return bad("memory.embedding_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eval.min_success_rate) {
            return bad(format!("eval.min_success_rate {} outside [0, 1]", self.eval.min_success_rate));
        }
        if self.induce.batch_size == 0 {
            return bad("induce.batch_size must be positive".into());
        }
        match self.backend.actor {
            ActorDouble::Noisy { p, .. } | ActorDouble::Wandering { p, .. } if !(0.0..=1.0).contains(&p) => {
                return bad(format!("backend.actor.p {p} outside [0, 1]"))
            }
            _ => {}
        }
        Ok(())
    }
}
