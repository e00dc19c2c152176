use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{patterns, SceneError};
use crate::model::{Env, Step, Task, Validity};
use crate::rules::{parse_action, ActionTerm, TextcraftAction};
use crate::textcraft::{ItemCount, Recipe};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeView {
    pub output: ItemCount,
    pub inputs: Vec<ItemCount>,
    pub raw: String,
}

impl RecipeView {
    pub fn recipe(&self) -> Recipe {
        Recipe { output: self.output.clone(), inputs: self.inputs.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextcraftSymbolicState {
    pub goal: ItemCount,
    pub recipes: Vec<RecipeView>,
    pub craftable_items: BTreeSet<String>,
    pub inventory: BTreeMap<String, u32>,
    pub inventory_known: bool,
}

impl TextcraftSymbolicState {
    pub fn count(&self, item: &str) -> u32 {
        self.inventory.get(item).copied().unwrap_or(0)
    }

    pub fn recipe_for(&self, item: &str) -> Option<&RecipeView> {
        self.recipes.iter().find(|r| r.output.item == item)
    }
}

#[derive(Deserialize)]
struct Table {
    commands_header: String,
    recipe_line: String,
    ingredient: String,
    goal: String,
    got: String,
    crafted: String,
    inventory: String,
    inventory_entry: String,
}

pub(crate) struct Patterns {
    commands_header: String,
    recipe_line: Regex,
    ingredient: Regex,
    goal: Regex,
    got: Regex,
    crafted: Regex,
    inventory: Regex,
    inventory_entry: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let t: Table = patterns::load("textcraft", include_str!("../../assets/patterns/textcraft.toml"));
        Patterns {
            commands_header: t.commands_header,
            recipe_line: patterns::re(&t.recipe_line),
            ingredient: patterns::re(&t.ingredient),
            goal: patterns::re(&t.goal),
            got: patterns::re(&t.got),
            crafted: patterns::re(&t.crafted),
            inventory: patterns::re(&t.inventory),
            inventory_entry: patterns::re(&t.inventory_entry),
        }
    })
}

/// Parses one `craft <n> <item> using <n> <item>[, ...]` line.
pub(crate) fn parse_recipe_line(line: &str) -> Option<Recipe> {
    let p = patterns();
    let c = p.recipe_line.captures(line.trim())?;
    let output = ItemCount { item: c["item"].trim().to_string(), count: c["count"].parse().ok()? };
    let inputs = c["inputs"]
        .split(',')
        .map(|part| {
            let ic = p.ingredient.captures(part.trim())?;
            Some(ItemCount { item: ic["item"].trim().to_string(), count: ic["count"].parse().ok()? })
        })
        .collect::<Option<Vec<_>>>()?;
    Some(Recipe { output, inputs })
}

/// Goal and recipe list from a task instruction.
pub fn parse_instruction(instruction: &str) -> Result<(ItemCount, Vec<RecipeView>), SceneError> {
    let p = patterns();
    let mut recipes = Vec::new();
    let mut goal = None;
    let mut in_commands = false;
    for (i, raw) in instruction.lines().enumerate() {
        let line = raw.trim();
        if let Some(c) = p.goal.captures(line) {
            let count = c.name("count").and_then(|m| m.as_str().parse().ok()).unwrap_or(1);
            goal = Some(ItemCount { item: c["item"].trim().to_string(), count });
            in_commands = false;
            continue;
        }
        if line == p.commands_header {
            in_commands = true;
            continue;
        }
        if in_commands && !line.is_empty() {
            let recipe = parse_recipe_line(line)
                .ok_or_else(|| SceneError::RecipeParse { line: i + 1, text: line.to_string() })?;
            recipes.push(RecipeView { output: recipe.output, inputs: recipe.inputs, raw: line.to_string() });
        }
    }
    Ok((goal.ok_or(SceneError::MissingGoal)?, recipes))
}

fn parse_inventory(text: &str) -> Option<BTreeMap<String, u32>> {
    let p = patterns();
    text.lines().find_map(|line| {
        let c = p.inventory.captures(line.trim())?;
        Some(
            p.inventory_entry
                .captures_iter(&c["rest"])
                .filter_map(|e| Some((e["item"].trim().to_string(), e["count"].parse().ok()?)))
                .filter(|(_, n)| *n > 0)
                .collect(),
        )
    })
}

pub fn reconstruct_textcraft(
    task: &Task,
    initial_observation: &str,
    history: &[Step],
) -> Result<TextcraftSymbolicState, SceneError> {
    let p = patterns();
    let (goal, recipes) = parse_instruction(&task.instruction)?;
    let mut state = TextcraftSymbolicState {
        goal,
        craftable_items: recipes.iter().map(|r| r.output.item.clone()).collect(),
        recipes,
        inventory: BTreeMap::new(),
        inventory_known: false,
    };
    if let Some(inv) = parse_inventory(initial_observation) {
        state.inventory = inv;
        state.inventory_known = true;
    }

    for (t, step) in history.iter().enumerate() {
        if step.valid == Validity::Invalid {
            continue;
        }
        let obs = step.observation.trim();
        if let Some(inv) = parse_inventory(obs) {
            state.inventory = inv;
            state.inventory_known = true;
        } else if let Some(c) = p.got.captures(obs) {
            let n: u32 = c["count"].parse().unwrap_or(0);
            *state.inventory.entry(c["item"].trim().to_string()).or_default() += n;
            state.inventory_known = true;
        } else if let Some(c) = p.crafted.captures(obs) {
            let n: u32 = c["count"].parse().unwrap_or(0);
            let item = c["item"].trim().to_string();
            let inputs = match parse_action(Env::Textcraft, &step.action) {
                Ok(ActionTerm::Textcraft(TextcraftAction::Craft { inputs, .. })) => inputs,
                _ => {
                    tracing::warn!(step = t, action = %step.action, "crafted observation without a parseable craft action; skipped");
                    continue;
                }
            };
            if let Some(short) = inputs.iter().find(|i| state.count(&i.item) < i.count) {
                tracing::warn!(step = t, item = %short.item, "replayed craft would drive inventory negative; step ignored");
                continue;
            }
            for i in &inputs {
                let left = state.count(&i.item) - i.count;
                if left == 0 {
                    state.inventory.remove(&i.item);
                } else {
                    state.inventory.insert(i.item.clone(), left);
                }
            }
            *state.inventory.entry(item).or_default() += n;
            state.inventory_known = true;
        }
    }
    Ok(state)
}
