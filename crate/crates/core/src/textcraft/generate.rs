//! Seeded recipe-DAG task generator.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{render_instruction, solve, EnvState, ItemCount, Recipe, STEP_BUDGET};
use crate::model::{Env, Task};

const ADJECTIVES: &[&str] = &[
    "oak", "birch", "spruce", "red", "blue", "green", "white", "black", "iron", "gold", "stone", "glass", "amber",
    "copper", "silver", "mossy", "polished", "cracked", "smooth", "bright", "dark", "light", "woven", "carved",
];
const NOUNS: &[&str] = &[
    "logs", "planks", "stick", "dye", "ingot", "block", "slab", "banner", "lantern", "rod", "plate", "gear", "wire",
    "pane", "brick", "dust", "shard", "fiber", "thread", "cloth", "nugget", "bead", "tile", "ring",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenConfig {
    pub depth: u32,
    pub branching: u32,
    /// Adds recipes that are not needed for the goal.
    pub distractors: bool,
    /// Tasks whose oracle plan exceeds this many steps are regenerated.
    pub budget: u32,
}

impl GenConfig {
    pub fn new(depth: u32, branching: u32) -> Self {
        GenConfig { depth, branching, distractors: true, budget: STEP_BUDGET }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("depth and branching must both be at least 1")]
    BadShape,
    #[error("no task with depth {depth} and branching {branching} fits a {budget}-step budget")]
    Unsolvable { depth: u32, branching: u32, budget: u32 },
}

struct Builder {
    rng: ChaCha8Rng,
    names: Vec<String>,
    fresh: usize,
    levels: Vec<Vec<String>>,
    recipes: Vec<Recipe>,
    varied: bool,
}

impl Builder {
    fn new(seed: u64, varied: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names: Vec<String> =
            ADJECTIVES.iter().flat_map(|a| NOUNS.iter().map(move |n| format!("{a} {n}"))).collect();
        names.shuffle(&mut rng);
        Builder { rng, names, fresh: 0, levels: Vec::new(), recipes: Vec::new(), varied }
    }

    fn fresh_name(&mut self) -> String {
        let i = self.fresh;
        self.fresh += 1;
        match self.names.get(i) {
            Some(n) => n.clone(),
            None => format!("{} {}", self.names[i % self.names.len()], i / self.names.len() + 1),
        }
    }

    fn count(&mut self, choices: &[u32]) -> u32 {
        if self.varied {
            *choices.choose(&mut self.rng).expect("non-empty")
        } else {
            1
        }
    }

    fn level(&mut self, l: usize) -> &mut Vec<String> {
        if self.levels.len() <= l {
            self.levels.resize(l + 1, Vec::new());
        }
        &mut self.levels[l]
    }

    /// An item of exactly level `l` (0 = gettable), reusing one sometimes.
    fn item(&mut self, l: usize, branching: u32, allow_reuse: bool) -> String {
        let reuse_p = if l == 0 { 0.3 } else { 0.25 };
        if allow_reuse && !self.level(l).is_empty() && self.rng.random_bool(reuse_p) {
            let pool = self.level(l).clone();
            return pool.choose(&mut self.rng).expect("non-empty").clone();
        }
        let name = self.fresh_name();
        if l > 0 {
            let mut inputs: Vec<ItemCount> = Vec::new();
            let first = self.item(l - 1, branching, true);
            let c = self.count(&[1, 1, 2, 3]);
            inputs.push(ItemCount::new(first, c));
            for _ in 1..branching {
                let lower = self.rng.random_range(0..l);
                let it = self.item(lower, branching, true);
                if inputs.iter().all(|i| i.item != it) {
                    let c = self.count(&[1, 1, 2, 3]);
                    inputs.push(ItemCount::new(it, c));
                }
            }
            let out = self.count(&[1, 1, 2, 4]);
            self.recipes.push(Recipe { output: ItemCount::new(name.clone(), out), inputs });
        }
        self.level(l).push(name.clone());
        name
    }

    fn distractors(&mut self) {
        let n = self.rng.random_range(1..=3);
        for _ in 0..n {
            let name = self.fresh_name();
            let k = self.rng.random_range(1..=2);
            let mut inputs: Vec<ItemCount> = Vec::new();
            for _ in 0..k {
                let it = self.item(0, 1, true);
                if inputs.iter().all(|i| i.item != it) {
                    let c = self.count(&[1, 2]);
                    inputs.push(ItemCount::new(it, c));
                }
            }
            let out = self.count(&[1, 2]);
            self.recipes.push(Recipe { output: ItemCount::new(name, out), inputs });
        }
    }
}

fn build(seed: u64, cfg: &GenConfig, varied: bool) -> (Vec<Recipe>, ItemCount) {
    let mut b = Builder::new(seed, varied);
    let goal = b.item(cfg.depth as usize, cfg.branching, false);
    if cfg.distractors {
        b.distractors();
    }
    let mut recipes = b.recipes;
    recipes.shuffle(&mut b.rng);
    (recipes, ItemCount::new(goal, 1))
}

/// Generates a solvable task. The same `(seed, cfg)` always yields the same
/// task.
pub fn generate_task_with(seed: u64, cfg: &GenConfig) -> Result<(Task, EnvState), GenError> {
    if cfg.depth == 0 || cfg.branching == 0 {
        return Err(GenError::BadShape);
    }
    let base = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for attempt in 0..64u64 {
        let varied = attempt < 48;
        let (recipes, goal) = build(base.wrapping_add(attempt), cfg, varied);
        let fits = solve(&recipes, &goal).is_ok_and(|p| p.len() <= cfg.budget as usize);
        if fits {
            let task = Task::new(format!("textcraft-{seed}"), Env::Textcraft, render_instruction(&recipes, &goal))
                .expect("rendered instruction is non-empty");
            return Ok((task, EnvState::new(recipes, goal, cfg.budget)));
        }
    }
    Err(GenError::Unsolvable { depth: cfg.depth, branching: cfg.branching, budget: cfg.budget })
}

pub fn generate_task(seed: u64, depth: u32, branching: u32) -> Result<(Task, EnvState), GenError> {
    generate_task_with(seed, &GenConfig::new(depth, branching))
}

/// Length of the longest recipe chain below `item`.
#[cfg(test)]
pub(crate) fn recipe_depth(recipes: &[Recipe], item: &str) -> u32 {
    use std::collections::BTreeSet;

    fn go(recipes: &[Recipe], item: &str, seen: &mut BTreeSet<String>) -> u32 {
        let Some(r) = recipes.iter().find(|r| r.output.item == item) else { return 0 };
        if !seen.insert(item.to_string()) {
            return 0;
        }
        let d = 1 + r.inputs.iter().map(|i| go(recipes, &i.item, seen)).max().unwrap_or(0);
        seen.remove(item);
        d
    }
    go(recipes, item, &mut BTreeSet::new())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn minimal_task() {
        let (task, state) = generate_task_with(7, &GenConfig { distractors: false, ..GenConfig::new(1, 1) }).unwrap();
        assert_eq!(state.recipes.len(), 1);
        assert_eq!(state.recipes[0].output.item, state.goal.item);
        assert!(task.instruction.starts_with("Crafting commands:\ncraft "));
        assert!(task.instruction.ends_with(&format!("Goal: craft {}.", state.goal.item)));
    }

    #[test]
    fn deterministic() {
        let a = generate_task(11, 3, 2).unwrap();
        let b = generate_task(11, 3, 2).unwrap();
        assert_eq!(a.0.instruction, b.0.instruction);
        assert_ne!(a.0.instruction, generate_task(12, 3, 2).unwrap().0.instruction);
    }

    #[test]
    fn depth_is_respected() {
        for seed in 0..50 {
            let (_, s) = generate_task(seed, 3, 2).unwrap();
            assert_eq!(recipe_depth(&s.recipes, &s.goal.item), 3, "seed {seed}");
        }
    }

    #[test]
    fn recipes_are_well_formed() {
        for seed in 0..50 {
            let (_, s) = generate_task(seed, 4, 3).unwrap();
            let outputs: BTreeSet<&str> = s.recipes.iter().map(|r| r.output.item.as_str()).collect();
            assert_eq!(outputs.len(), s.recipes.len(), "one recipe per output");
            for r in &s.recipes {
                assert!(r.output.count >= 1);
                assert!(r.inputs.iter().all(|i| i.count >= 1 && i.item != r.output.item));
            }
        }
    }

    #[test]
    fn bad_shape() {
        assert_eq!(generate_task(1, 0, 1).unwrap_err(), GenError::BadShape);
    }
}
