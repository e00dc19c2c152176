//! Test-side generators and oracles shared by the acceptance runner and the
//! integration tests. Nothing here calls the library code it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dualmem_core::model::{Env, Step, Task, Trajectory};
use dualmem_core::textcraft::{generate_task, initial_observation, plan_to, EnvState, ItemCount, Recipe};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Random TextCraft trajectories

fn inputs_text(r: &Recipe) -> String {
    r.inputs.iter().map(|i| format!("{} {}", i.count, i.item)).collect::<Vec<_>>().join(", ")
}

fn leaves(recipes: &[Recipe]) -> Vec<String> {
    let outputs: BTreeSet<&str> = recipes.iter().map(|r| r.output.item.as_str()).collect();
    recipes
        .iter()
        .flat_map(|r| r.inputs.iter().map(|i| i.item.clone()))
        .filter(|i| !outputs.contains(i.as_str()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// A mix of on-plan steps and every kind of mistake the simulator knows.
pub fn random_action(rng: &mut ChaCha8Rng, env: &EnvState) -> String {
    let leaves = leaves(&env.recipes);
    let r = env.recipes.choose(rng).expect("tasks have recipes");
    match rng.random_range(0..10) {
        0..=3 => plan_to(&env.recipes, &env.inventory, &env.goal)
            .ok()
            .and_then(|p| p.into_iter().next())
            .unwrap_or_else(|| "inventory".into()),
        4 => format!("get {} {}", rng.random_range(1..4), leaves.choose(rng).cloned().unwrap_or_else(|| "dirt".into())),
        5 => format!("get 1 {}", r.output.item),
        6 => r.line(),
        7 => format!("craft {} {} using {}", r.output.count + rng.random_range(1..3), r.output.item, inputs_text(r)),
        8 => format!("craft {} {} using {}, 1 {}", r.output.count, r.output.item, inputs_text(r), "gravel"),
        _ => ["inventory", "dance wildly", "craft", "get many things", "think: hmm"].choose(rng).unwrap().to_string(),
    }
}

/// Random-policy episode on a generated task.
pub fn random_trajectory(rng: &mut ChaCha8Rng, seed: u64, depth: u32, max_steps: usize) -> Trajectory {
    let (task, mut env) = generate_task(seed, depth, 2).expect("generator succeeds for small depths");
    let o0 = initial_observation(&task);
    let mut steps = Vec::new();
    while steps.len() < max_steps && !env.done {
        let a = random_action(rng, &env);
        let out = env.apply(&a).expect("episode running");
        steps.push(Step::new(Env::Textcraft, a, out.observation));
    }
    Trajectory { task, initial_observation: o0, steps, success: env.reward == 1, reward: f64::from(env.reward) }
}

// ---------------------------------------------------------------------------
// Candidate rules for synthetic pools

/// Templated TextCraft candidates: sound ones, over-broad ones and noise.
pub fn candidate_sources(rng: &mut ChaCha8Rng, items: &[String]) -> Vec<String> {
    let item = |rng: &mut ChaCha8Rng| items.choose(rng).cloned().unwrap_or_else(|| "stick".into());
    let n = |rng: &mut ChaCha8Rng| rng.random_range(0..5);
    let mut out = vec![
        r#"when craft: if not exists(recipe_for(action.item)) or recipe_for(action.item).output.count != action.count then block "bad count" suggest "use the recipe""#.to_string(),
        r#"when craft: if any i in action.inputs: get(scene.inventory, i.item, 0) < i.count then block "missing {i.item}" suggest "get {i.item}""#.to_string(),
        r#"when get: if exists(recipe_for(action.item)) then block "craft {action.item}" suggest "craft it""#.to_string(),
    ];
    for _ in 0..rng.random_range(4..12) {
        let src = match rng.random_range(0..8) {
            0 => format!(
                r#"when craft: if get(scene.inventory, action.item, 0) > {} then block "x" suggest "y""#,
                n(rng)
            ),
            1 => format!(r#"when get: if action.count > {} then block "x" suggest "y""#, n(rng)),
            2 => format!(r#"when craft: if action.count != {} then block "x" suggest "y""#, n(rng)),
            3 => format!(r#"when *: if equals(action.item, "{}") then block "x" suggest "y""#, item(rng)),
            4 => format!(r#"when craft: if len(action.inputs) > {} then block "x" suggest "y""#, n(rng)),
            5 => format!(
                r#"when get: if get(scene.inventory, "{}", 0) < {} then block "x" suggest "y""#,
                item(rng),
                n(rng)
            ),
            6 => {
                format!(r#"when craft: if starts_with(action.item, "{}") then block "x" suggest "y""#, &item(rng)[..1])
            }
            _ => format!(
                r#"when craft: if all i in action.inputs: get(scene.inventory, i.item, 0) >= {} then block "x" suggest "y""#,
                n(rng)
            ),
        };
        out.push(src);
    }
    out
}

// ---------------------------------------------------------------------------
// Untyped program fuzzer

const FIELD_NAMES: &[&str] = &[
    "item",
    "count",
    "inputs",
    "inventory",
    "goal",
    "recipes",
    "output",
    "craftable_items",
    "inventory_known",
    "name",
    "raw",
    "args",
    "query",
    "target",
    "object",
    "location",
    "holding",
    "page",
    "ui",
    "history",
    "page_type",
    "clickables",
    "asins",
    "objects",
    "receptacles",
    "opened",
    "bogus",
];
const STRINGS: &[&str] = &["", "a", "stick", "craft", "Could not", "cabinet 1", "buy now", "search"];

pub fn fuzz_expr(rng: &mut ChaCha8Rng, depth: u32, vars: &mut Vec<String>) -> String {
    let leaf = depth == 0 || rng.random_bool(0.3);
    if leaf {
        return match rng.random_range(0..7) {
            0 => format!("{}", rng.random_range(-3..10)),
            1 => format!("{:?}", STRINGS.choose(rng).unwrap()),
            2 => ["true", "false", "null"].choose(rng).unwrap().to_string(),
            _ => {
                let mut roots: Vec<String> = ["action", "scene", "obs"].iter().map(|s| s.to_string()).collect();
                roots.extend(vars.iter().cloned());
                let mut s = roots.choose(rng).unwrap().clone();
                for _ in 0..rng.random_range(0..3) {
                    s = format!("{s}.{}", FIELD_NAMES.choose(rng).unwrap());
                }
                if rng.random_bool(0.1) {
                    s = format!("{s}[{}]", rng.random_range(0..3));
                }
                s
            }
        };
    }
    let d = depth - 1;
    match rng.random_range(0..9) {
        0 => format!("not ({})", fuzz_expr(rng, d, vars)),
        1 => format!("-({})", fuzz_expr(rng, d, vars)),
        2 | 3 => {
            let op = ["and", "or", "=", "!=", "<", "<=", ">", ">=", "+", "-", "*"].choose(rng).unwrap();
            format!("({}) {op} ({})", fuzz_expr(rng, d, vars), fuzz_expr(rng, d, vars))
        }
        4 => format!("len({})", fuzz_expr(rng, d, vars)),
        5 => format!("exists({})", fuzz_expr(rng, d, vars)),
        6 => {
            let f = ["starts_with", "contains", "equals"].choose(rng).unwrap();
            format!("{f}({}, {})", fuzz_expr(rng, d, vars), fuzz_expr(rng, d, vars))
        }
        7 => format!("get({}, {}, {})", fuzz_expr(rng, d, vars), fuzz_expr(rng, d, vars), fuzz_expr(rng, d, vars)),
        _ => {
            let q = ["any", "all"].choose(rng).unwrap();
            let v = format!("v{}", vars.len());
            let list = fuzz_expr(rng, d, vars);
            vars.push(v.clone());
            let body = fuzz_expr(rng, d, vars);
            vars.pop();
            format!("({q} {v} in {list}: {body})")
        }
    }
}

pub fn fuzz_rule(rng: &mut ChaCha8Rng, env: Env) -> String {
    let mut vars = Vec::new();
    let mut cond = fuzz_expr(rng, 4, &mut vars);
    if env == Env::Textcraft && rng.random_bool(0.2) {
        cond = format!("({cond}) or exists(recipe_for(action.item).inputs)");
    }
    format!(r#"when *: if {cond} then block "blocked {{action.raw}} at {{obs}}" suggest "try {{scene.goal.item}}""#)
}

// ---------------------------------------------------------------------------
// Typed programs with an independent three-valued oracle

pub type Leaves = BTreeMap<&'static str, Option<LeafValue>>;

#[derive(Debug, Clone, PartialEq)]
pub enum LeafValue {
    Num(f64),
    Str(String),
}

pub const NUM_LEAVES: &[&str] = &["action.count", "scene.goal.count"];
pub const STR_LEAVES: &[&str] = &["action.item", "scene.goal.item"];

#[derive(Debug, Clone)]
pub enum NumE {
    Leaf(&'static str),
    Lit(i64),
    Add(Box<NumE>, Box<NumE>),
    Sub(Box<NumE>, Box<NumE>),
    Mul(Box<NumE>, Box<NumE>),
    Len(Box<StrE>),
}

#[derive(Debug, Clone)]
pub enum StrE {
    Leaf(&'static str),
    Lit(String),
}

#[derive(Debug, Clone)]
pub enum BoolE {
    Lit(bool),
    Cmp(&'static str, NumE, NumE),
    StrEq(bool, StrE, StrE),
    StartsWith(StrE, StrE),
    Not(Box<BoolE>),
    And(Box<BoolE>, Box<BoolE>),
    Or(Box<BoolE>, Box<BoolE>),
}

fn gen_num(rng: &mut ChaCha8Rng, d: u32, words: &[String]) -> NumE {
    if d == 0 || rng.random_bool(0.4) {
        return match rng.random_range(0..3) {
            0 => NumE::Lit(rng.random_range(0..6)),
            _ => NumE::Leaf(NUM_LEAVES.choose(rng).unwrap()),
        };
    }
    let a = Box::new(gen_num(rng, d - 1, words));
    match rng.random_range(0..4) {
        0 => NumE::Add(a, Box::new(gen_num(rng, d - 1, words))),
        1 => NumE::Sub(a, Box::new(gen_num(rng, d - 1, words))),
        2 => NumE::Mul(a, Box::new(gen_num(rng, d - 1, words))),
        _ => NumE::Len(Box::new(gen_str(rng, words))),
    }
}

fn gen_str(rng: &mut ChaCha8Rng, words: &[String]) -> StrE {
    if rng.random_bool(0.5) {
        StrE::Leaf(STR_LEAVES.choose(rng).unwrap())
    } else {
        let w = words.choose(rng).cloned().unwrap_or_default();
        let cut = rng.random_range(0..=w.len().min(4));
        StrE::Lit(if rng.random_bool(0.3) { w.chars().take(cut).collect() } else { w })
    }
}

pub fn gen_bool(rng: &mut ChaCha8Rng, d: u32, words: &[String]) -> BoolE {
    if d == 0 || rng.random_bool(0.25) {
        return match rng.random_range(0..6) {
            0 => BoolE::Lit(rng.random_bool(0.5)),
            1 | 2 => BoolE::Cmp(
                ["<", "<=", ">", ">=", "=", "!="].choose(rng).unwrap(),
                gen_num(rng, 2, words),
                gen_num(rng, 2, words),
            ),
            3 | 4 => BoolE::StrEq(rng.random_bool(0.5), gen_str(rng, words), gen_str(rng, words)),
            _ => BoolE::StartsWith(gen_str(rng, words), gen_str(rng, words)),
        };
    }
    match rng.random_range(0..3) {
        0 => BoolE::Not(Box::new(gen_bool(rng, d - 1, words))),
        1 => BoolE::And(Box::new(gen_bool(rng, d - 1, words)), Box::new(gen_bool(rng, d - 1, words))),
        _ => BoolE::Or(Box::new(gen_bool(rng, d - 1, words)), Box::new(gen_bool(rng, d - 1, words))),
    }
}

impl NumE {
    pub fn src(&self) -> String {
        match self {
            NumE::Leaf(p) => p.to_string(),
            NumE::Lit(n) => n.to_string(),
            NumE::Add(a, b) => format!("({} + {})", a.src(), b.src()),
            NumE::Sub(a, b) => format!("({} - {})", a.src(), b.src()),
            NumE::Mul(a, b) => format!("({} * {})", a.src(), b.src()),
            NumE::Len(s) => format!("len({})", s.src()),
        }
    }

    fn eval(&self, env: &Leaves) -> Option<f64> {
        match self {
            NumE::Leaf(p) => match env.get(p).cloned().flatten() {
                Some(LeafValue::Num(x)) => Some(x),
                _ => None,
            },
            NumE::Lit(n) => Some(*n as f64),
            NumE::Add(a, b) => Some(a.eval(env)? + b.eval(env)?),
            NumE::Sub(a, b) => Some(a.eval(env)? - b.eval(env)?),
            NumE::Mul(a, b) => Some(a.eval(env)? * b.eval(env)?),
            NumE::Len(s) => s.eval(env).map(|s| s.chars().count() as f64),
        }
    }
}

impl StrE {
    pub fn src(&self) -> String {
        match self {
            StrE::Leaf(p) => p.to_string(),
            StrE::Lit(s) => format!("{s:?}"),
        }
    }

    fn eval(&self, env: &Leaves) -> Option<String> {
        match self {
            StrE::Leaf(p) => match env.get(p).cloned().flatten() {
                Some(LeafValue::Str(s)) => Some(s),
                _ => None,
            },
            StrE::Lit(s) => Some(s.clone()),
        }
    }
}

impl BoolE {
    pub fn src(&self) -> String {
        match self {
            BoolE::Lit(b) => b.to_string(),
            BoolE::Cmp(op, a, b) => format!("({} {op} {})", a.src(), b.src()),
            BoolE::StrEq(true, a, b) => format!("equals({}, {})", a.src(), b.src()),
            BoolE::StrEq(false, a, b) => format!("({} = {})", a.src(), b.src()),
            BoolE::StartsWith(a, b) => format!("starts_with({}, {})", a.src(), b.src()),
            BoolE::Not(x) => format!("not ({})", x.src()),
            BoolE::And(a, b) => format!("({} and {})", a.src(), b.src()),
            BoolE::Or(a, b) => format!("({} or {})", a.src(), b.src()),
        }
    }

    /// Kleene strong three-valued logic; `None` is unknown.
    pub fn eval(&self, env: &Leaves) -> Option<bool> {
        match self {
            BoolE::Lit(b) => Some(*b),
            BoolE::Cmp(op, a, b) => {
                let (x, y) = (a.eval(env)?, b.eval(env)?);
                Some(match *op {
                    "<" => x < y,
                    "<=" => x <= y,
                    ">" => x > y,
                    ">=" => x >= y,
                    "=" => x == y,
                    _ => x != y,
                })
            }
            BoolE::StrEq(_, a, b) => Some(a.eval(env)? == b.eval(env)?),
            BoolE::StartsWith(a, b) => Some(a.eval(env)?.starts_with(&b.eval(env)?)),
            BoolE::Not(x) => x.eval(env).map(|b| !b),
            BoolE::And(a, b) => match (a.eval(env), b.eval(env)) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            },
            BoolE::Or(a, b) => match (a.eval(env), b.eval(env)) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Coverage oracles

/// Greedy max-coverage: largest marginal gain, ties to the smaller id, stop
/// below `min_gain`. Returns `(id, gain)` per round.
pub fn greedy_oracle(cands: &[(String, BTreeSet<usize>)], k: usize, min_gain: usize) -> Vec<(String, usize)> {
    let mut covered: BTreeSet<usize> = BTreeSet::new();
    let mut used: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<(usize, usize)> = None;
        for (i, (id, cover)) in cands.iter().enumerate() {
            if used.contains(&i) {
                continue;
            }
            let gain = cover.difference(&covered).count();
            let better = match best {
                None => true,
                Some((bi, bg)) => gain > bg || (gain == bg && *id < cands[bi].0),
            };
            if better {
                best = Some((i, gain));
            }
        }
        match best {
            Some((i, g)) if g >= min_gain && g > 0 => {
                used.insert(i);
                covered.extend(cands[i].1.iter().copied());
                out.push((cands[i].0.clone(), g));
            }
            _ => break,
        }
    }
    out
}

/// Largest union over all subsets of at most `k` candidates.
pub fn brute_force_cover(cands: &[(String, BTreeSet<usize>)], k: usize) -> usize {
    let n = cands.len();
    let mut best = 0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let mut u = BTreeSet::new();
        for (i, (_, c)) in cands.iter().enumerate() {
            if mask & (1 << i) != 0 {
                u.extend(c.iter().copied());
            }
        }
        best = best.max(u.len());
    }
    best
}

// ---------------------------------------------------------------------------
// Topological crafter

/// Depth-first crafting plan for `goal`; gets leaves in exact amounts.
pub fn topological_plan(recipes: &[Recipe], goal: &ItemCount) -> Option<Vec<String>> {
    fn need(
        recipes: &[Recipe],
        item: &str,
        n: u32,
        inv: &mut BTreeMap<String, u32>,
        out: &mut Vec<String>,
        depth: u32,
    ) -> Option<()> {
        if depth > 32 {
            return None;
        }
        let have = inv.get(item).copied().unwrap_or(0);
        if have >= n {
            return Some(());
        }
        let missing = n - have;
        match recipes.iter().find(|r| r.output.item == item) {
            None => {
                out.push(format!("get {missing} {item}"));
                *inv.entry(item.to_string()).or_default() += missing;
            }
            Some(r) => {
                let batches = missing.div_ceil(r.output.count);
                for _ in 0..batches {
                    // Gathering one input can consume another shared intermediate.
                    let mut rounds = 0;
                    while r.inputs.iter().any(|i| inv.get(&i.item).copied().unwrap_or(0) < i.count) {
                        rounds += 1;
                        if rounds > 8 {
                            return None;
                        }
                        for i in &r.inputs {
                            need(recipes, &i.item, i.count, inv, out, depth + 1)?;
                        }
                    }
                    for i in &r.inputs {
                        *inv.get_mut(&i.item)? -= i.count;
                    }
                    out.push(r.line());
                    *inv.entry(item.to_string()).or_default() += r.output.count;
                }
            }
        }
        Some(())
    }
    let mut inv = BTreeMap::new();
    let mut out = Vec::new();
    need(recipes, &goal.item, goal.count, &mut inv, &mut out, 0)?;
    Some(out)
}

pub fn task_recipes(task: &Task) -> (ItemCount, Vec<Recipe>) {
    let env = EnvState::from_task(task, 40).expect("textcraft task");
    (env.goal, env.recipes)
}
