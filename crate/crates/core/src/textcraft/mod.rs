//! Native, deterministic crafting environment.
//!
//! Items are either gettable (never produced by a recipe) or craftable
//! (exactly one recipe each). Crafting must match a recipe exactly: same
//! output count, same input list up to order.

mod generate;
mod solve;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Env, Task};
use crate::rules::{parse_action, ActionTerm, TextcraftAction};
use crate::scene::SceneError;

pub use generate::{generate_task, generate_task_with, GenConfig, GenError};
pub use solve::{anchor_target, closure_recipes, gross_requirements, plan_anchors, plan_to, solve, Anchor, NoPlan};

pub const STEP_BUDGET: u32 = 40;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemCount {
    pub item: String,
    pub count: u32,
}

impl ItemCount {
    pub fn new(item: impl Into<String>, count: u32) -> Self {
        ItemCount { item: item.into(), count }
    }
}

impl fmt::Display for ItemCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.count, self.item)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub output: ItemCount,
    pub inputs: Vec<ItemCount>,
}

impl Recipe {
    /// Crafting-command line, also the exact action that executes it.
    pub fn line(&self) -> String {
        let inputs: Vec<String> = self.inputs.iter().map(ItemCount::to_string).collect();
        format!("craft {} using {}", self.output, inputs.join(", "))
    }

    pub(crate) fn sorted_inputs(inputs: &[ItemCount]) -> Vec<ItemCount> {
        let mut merged: BTreeMap<&str, u32> = BTreeMap::new();
        for i in inputs {
            *merged.entry(&i.item).or_default() += i.count;
        }
        merged.into_iter().map(|(k, v)| ItemCount::new(k, v)).collect()
    }

    pub fn matches(&self, count: u32, inputs: &[ItemCount]) -> bool {
        count == self.output.count && Self::sorted_inputs(inputs) == Self::sorted_inputs(&self.inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub recipes: Vec<Recipe>,
    pub goal: ItemCount,
    pub inventory: BTreeMap<String, u32>,
    pub done: bool,
    pub reward: u8,
    pub steps_taken: u32,
    pub budget: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub observation: String,
    pub done: bool,
    pub reward: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("task is not a textcraft task")]
    WrongEnv,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Renders the task text from recipes and goal.
pub fn render_instruction(recipes: &[Recipe], goal: &ItemCount) -> String {
    let lines: Vec<String> = recipes.iter().map(Recipe::line).collect();
    let goal_text = if goal.count == 1 { goal.item.clone() } else { goal.to_string() };
    format!("Crafting commands:\n{}\n\nGoal: craft {goal_text}.", lines.join("\n"))
}

/// First observation of an episode: the task text and an empty inventory.
pub fn initial_observation(task: &Task) -> String {
    format!("{}\n\nInventory: empty", task.instruction)
}

pub fn inventory_line(inventory: &BTreeMap<String, u32>) -> String {
    let held: Vec<String> = inventory.iter().filter(|(_, n)| **n > 0).map(|(k, n)| format!("[{k}] ({n})")).collect();
    if held.is_empty() {
        "Inventory: empty".into()
    } else {
        format!("Inventory: {}", held.join(", "))
    }
}

impl EnvState {
    pub fn new(recipes: Vec<Recipe>, goal: ItemCount, budget: u32) -> Self {
        EnvState { recipes, goal, inventory: BTreeMap::new(), done: budget == 0, reward: 0, steps_taken: 0, budget }
    }

    pub fn from_task(task: &Task, budget: u32) -> Result<Self, EnvError> {
        if task.env != Env::Textcraft {
            return Err(EnvError::WrongEnv);
        }
        let (goal, views) = crate::scene::parse_textcraft_instruction(&task.instruction)?;
        Ok(EnvState::new(views.iter().map(|v| v.recipe()).collect(), goal, budget))
    }

    pub fn recipe_for(&self, item: &str) -> Option<&Recipe> {
        self.recipes.iter().find(|r| r.output.item == item)
    }

    pub fn is_craftable(&self, item: &str) -> bool {
        self.recipe_for(item).is_some()
    }

    pub fn count(&self, item: &str) -> u32 {
        self.inventory.get(item).copied().unwrap_or(0)
    }

    fn add(&mut self, item: &str, n: u32) {
        let e = self.inventory.entry(item.to_string()).or_default();
        *e = e.saturating_add(n);
    }

    fn execute(&mut self, raw: &str) -> String {
        let action = match parse_action(Env::Textcraft, raw) {
            Ok(ActionTerm::Textcraft(a)) => a,
            _ => return format!("Could not execute {}", raw.trim()),
        };
        match action {
            TextcraftAction::Inventory => inventory_line(&self.inventory),
            TextcraftAction::Think { .. } => "OK.".into(),
            TextcraftAction::Get { count, item } => {
                if self.is_craftable(&item) {
                    format!("Could not get {item}: it has to be crafted")
                } else if count == 0 {
                    format!("Could not get 0 {item}")
                } else {
                    self.add(&item, count);
                    format!("Got {count} {item}")
                }
            }
            TextcraftAction::Craft { count, item, inputs } => {
                let Some(recipe) = self.recipe_for(&item) else {
                    return format!("Could not find a valid recipe for {item}");
                };
                if !recipe.matches(count, &inputs) {
                    return format!("Could not find a valid recipe for {count} {item} with the given inputs");
                }
                let need = Recipe::sorted_inputs(&recipe.inputs);
                if need.iter().any(|i| self.count(&i.item) < i.count) {
                    return format!("Could not find enough items to craft {item}");
                }
                for i in &need {
                    let left = self.count(&i.item) - i.count;
                    if left == 0 {
                        self.inventory.remove(&i.item);
                    } else {
                        self.inventory.insert(i.item.clone(), left);
                    }
                }
                self.add(&item, count);
                format!("Crafted {count} {item}")
            }
        }
    }

    /// Applies one action in place.
    pub fn apply(&mut self, action_raw: &str) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let observation = self.execute(action_raw);
        self.steps_taken += 1;
        if self.count(&self.goal.item) >= self.goal.count {
            self.done = true;
            self.reward = 1;
        } else if self.steps_taken >= self.budget {
            self.done = true;
        }
        Ok(StepOutcome { observation, done: self.done, reward: self.reward })
    }
}

/// Pure transition: `(state, action) -> (state', outcome)`.
pub fn step(state: &EnvState, action_raw: &str) -> Result<(EnvState, StepOutcome), EnvError> {
    let mut next = state.clone();
    let out = next.apply(action_raw)?;
    Ok((next, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{valid_textcraft, Validity};

    fn state() -> EnvState {
        EnvState::new(
            vec![
                Recipe { output: ItemCount::new("red dye", 1), inputs: vec![ItemCount::new("poppy", 1)] },
                Recipe { output: ItemCount::new("stick", 4), inputs: vec![ItemCount::new("planks", 2)] },
            ],
            ItemCount::new("red dye", 1),
            STEP_BUDGET,
        )
    }

    #[test]
    fn craft_consumes_inputs() {
        let mut s = state();
        assert_eq!(s.apply("get 2 poppy").unwrap().observation, "Got 2 poppy");
        let out = s.apply("craft 1 red dye using 1 poppy").unwrap();
        assert_eq!(out.observation, "Crafted 1 red dye");
        assert_eq!(s.count("poppy"), 1);
        assert!(out.done);
        assert_eq!(out.reward, 1);
        assert_eq!(s.apply("inventory"), Err(EnvError::EpisodeFinished));
    }

    #[test]
    fn failures_start_with_could_not() {
        let mut s = state();
        for a in [
            "craft 1 red dye using 1 poppy",
            "get 1 stick",
            "craft 2 stick using 2 planks",
            "craft 4 stick using 1 planks",
            "craft 1 torch using 1 stick",
            "dance",
        ] {
            let o = s.apply(a).unwrap().observation;
            assert_eq!(valid_textcraft(&o), Validity::Invalid, "{a} -> {o}");
        }
        assert!(s.inventory.is_empty());
    }

    #[test]
    fn inventory_and_think() {
        let mut s = state();
        assert_eq!(s.apply("inventory").unwrap().observation, "Inventory: empty");
        s.apply("get 3 planks").unwrap();
        assert_eq!(s.apply("inventory").unwrap().observation, "Inventory: [planks] (3)");
        assert_eq!(s.apply("think: plan").unwrap().observation, "OK.");
    }

    #[test]
    fn budget_ends_the_episode() {
        let mut s = EnvState::new(state().recipes, ItemCount::new("red dye", 1), 2);
        assert!(!s.apply("inventory").unwrap().done);
        let out = s.apply("inventory").unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 0);
    }

    #[test]
    fn instruction_round_trips_through_the_scene_parser() {
        let s = state();
        let text = render_instruction(&s.recipes, &s.goal);
        let task = Task::new("t", Env::Textcraft, &text).unwrap();
        let back = EnvState::from_task(&task, STEP_BUDGET).unwrap();
        assert_eq!(back.recipes, s.recipes);
        assert_eq!(back.goal, s.goal);
    }
}
