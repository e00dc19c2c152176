//! Deterministic reconstruction of the agent-visible scene from interaction
//! history.
//!
//! Each environment has a small adapter driven by a regex table in
//! `assets/patterns/<env>.toml`. Reconstruction only ever reads
//! `Step::action` / `Step::observation` text.

mod alfworld;
mod textcraft;
mod webshop;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Env, Step, Task};

pub use alfworld::{reconstruct_alfworld, AlfworldSceneGraph, ObjectPlacement};
pub use textcraft::parse_instruction as parse_textcraft_instruction;
pub use textcraft::{reconstruct_textcraft, RecipeView, TextcraftSymbolicState};
pub use webshop::{reconstruct_webshop, PageBlock, PageType, UiBlock, WebshopHistory, WebshopUiState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "lowercase")]
pub enum SceneState {
    Alfworld(AlfworldSceneGraph),
    Webshop(WebshopUiState),
    Textcraft(TextcraftSymbolicState),
}

impl SceneState {
    pub fn env(&self) -> Env {
        match self {
            SceneState::Alfworld(_) => Env::Alfworld,
            SceneState::Webshop(_) => Env::Webshop,
            SceneState::Textcraft(_) => Env::Textcraft,
        }
    }

    /// Canonical JSON: sorted keys, no insignificant whitespace.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("scene serializes");
        serde_json::to_string(&value).expect("json value serializes")
    }

    /// The JSON model rules evaluate against. Same as the canonical form minus
    /// the `env` tag, except that a TextCraft inventory that has not been
    /// observed yet is absent rather than empty.
    pub fn rule_view(&self) -> Value {
        let mut value = match self {
            SceneState::Alfworld(s) => serde_json::to_value(s),
            SceneState::Webshop(s) => serde_json::to_value(s),
            SceneState::Textcraft(s) => serde_json::to_value(s),
        }
        .expect("scene serializes");
        if let (SceneState::Textcraft(s), Value::Object(map)) = (self, &mut value) {
            if !s.inventory_known {
                map.remove("inventory");
            }
        }
        value
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SceneError {
    #[error("crafting command line {line} does not parse: `{text}`")]
    RecipeParse { line: usize, text: String },
    #[error("task has no `Goal:` line")]
    MissingGoal,
}

/// The Γ operator: history → agent-visible structured state.
pub trait SceneReconstructor {
    fn reconstruct(&self, task: &Task, initial_observation: &str, history: &[Step]) -> Result<SceneState, SceneError>;
}

/// Default reconstructor dispatching on the task's environment.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reconstructor;

impl SceneReconstructor for Reconstructor {
    fn reconstruct(&self, task: &Task, initial_observation: &str, history: &[Step]) -> Result<SceneState, SceneError> {
        Ok(match task.env {
            Env::Alfworld => SceneState::Alfworld(reconstruct_alfworld(initial_observation, history)),
            Env::Webshop => SceneState::Webshop(reconstruct_webshop(history)),
            Env::Textcraft => SceneState::Textcraft(reconstruct_textcraft(task, initial_observation, history)?),
        })
    }
}

pub(crate) mod patterns {
    use regex::Regex;
    use serde::de::DeserializeOwned;

    pub(crate) fn load<T: DeserializeOwned>(name: &str, source: &str) -> T {
        toml::from_str(source).unwrap_or_else(|e| panic!("bundled pattern table {name} is invalid: {e}"))
    }

    pub(crate) fn re(pattern: &str) -> Regex {
        Regex::new(pattern).unwrap_or_else(|e| panic!("bad bundled pattern `{pattern}`: {e}"))
    }
}
