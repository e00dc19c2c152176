//! Net-requirement planning over a recipe DAG.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{ItemCount, Recipe};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no plan reaches {item}")]
pub struct NoPlan {
    pub item: String,
}

const MAX_ACTIONS: usize = 10_000;
const MAX_QTY: u64 = 1 << 31;

/// One stage of a crafting plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    pub text: String,
    pub target: ItemCount,
}

struct Book<'r> {
    by_output: BTreeMap<&'r str, &'r Recipe>,
    heights: BTreeMap<String, u32>,
}

impl<'r> Book<'r> {
    fn new(recipes: &'r [Recipe]) -> Result<Self, NoPlan> {
        let by_output = recipes.iter().map(|r| (r.output.item.as_str(), r)).collect();
        let mut book = Book { by_output, heights: BTreeMap::new() };
        let items: Vec<&str> = book.by_output.keys().copied().collect();
        for item in items {
            book.height(item, &mut BTreeSet::new())?;
        }
        Ok(book)
    }

    fn height(&mut self, item: &str, visiting: &mut BTreeSet<String>) -> Result<u32, NoPlan> {
        if let Some(h) = self.heights.get(item) {
            return Ok(*h);
        }
        let Some(recipe) = self.by_output.get(item).copied() else { return Ok(0) };
        if !visiting.insert(item.to_string()) {
            return Err(NoPlan { item: item.to_string() });
        }
        let mut h = 0;
        for i in &recipe.inputs {
            h = h.max(self.height(&i.item, visiting)?);
        }
        visiting.remove(item);
        self.heights.insert(item.to_string(), h + 1);
        Ok(h + 1)
    }

    fn h(&self, item: &str) -> u32 {
        self.heights.get(item).copied().unwrap_or(0)
    }

    fn closure(&self, item: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![item.to_string()];
        while let Some(x) = stack.pop() {
            if let Some(r) = self.by_output.get(x.as_str()) {
                if seen.insert(x.clone()) {
                    stack.extend(r.inputs.iter().map(|i| i.item.clone()));
                }
            }
        }
        seen
    }

    /// Inputs merged by item, highest first so later acquisitions never
    /// consume earlier ones.
    fn ordered_inputs(&self, r: &Recipe) -> Vec<ItemCount> {
        let mut inputs = Recipe::sorted_inputs(&r.inputs);
        inputs.sort_by(|a, b| self.h(&b.item).cmp(&self.h(&a.item)).then_with(|| a.item.cmp(&b.item)));
        inputs
    }
}

/// Craftable items needed to make `item`, including itself.
pub fn closure_recipes(recipes: &[Recipe], item: &str) -> Result<BTreeSet<String>, NoPlan> {
    Ok(Book::new(recipes)?.closure(item))
}

/// Total quantity of every item consumed or produced when making `goal` from
/// nothing, with batch rounding: `(required, batches)` per item.
pub fn gross_requirements(recipes: &[Recipe], goal: &ItemCount) -> Result<BTreeMap<String, (u64, u64)>, NoPlan> {
    let book = Book::new(recipes)?;
    let mut order: Vec<String> = book.closure(&goal.item).into_iter().collect();
    order.sort_by(|a, b| book.h(b).cmp(&book.h(a)).then_with(|| a.cmp(b)));
    let mut req: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    req.insert(goal.item.clone(), (goal.count as u64, 0));
    for item in order {
        let r = book.by_output[item.as_str()];
        let need = req.get(&item).map_or(0, |x| x.0);
        let batches = need.div_ceil(r.output.count.max(1) as u64);
        req.entry(item.clone()).or_default().1 = batches;
        for i in &r.inputs {
            let e = req.entry(i.item.clone()).or_default();
            e.0 = e.0.saturating_add(batches.saturating_mul(i.count as u64));
            if e.0 > MAX_QTY {
                return Err(NoPlan { item: i.item.clone() });
            }
        }
    }
    Ok(req)
}

fn to_u32(n: u64, item: &str) -> Result<u32, NoPlan> {
    u32::try_from(n).map_err(|_| NoPlan { item: item.to_string() })
}

/// Ordered stages for `goal`: one per intermediate crafted item (lowest
/// first), then the goal itself.
pub fn plan_anchors(recipes: &[Recipe], goal: &ItemCount) -> Result<Vec<Anchor>, NoPlan> {
    let book = Book::new(recipes)?;
    let req = gross_requirements(recipes, goal)?;
    let mut items: Vec<String> = book.closure(&goal.item).into_iter().filter(|i| *i != goal.item).collect();
    items.sort_by(|a, b| book.h(a).cmp(&book.h(b)).then_with(|| a.cmp(b)));

    let mut anchors = Vec::with_capacity(items.len() + 1);
    for item in items {
        let r = book.by_output[item.as_str()];
        let batches = req[&item].1;
        let produced = to_u32(batches * r.output.count as u64, &item)?;
        let leaves: Vec<String> = Recipe::sorted_inputs(&r.inputs)
            .iter()
            .filter(|i| !book.by_output.contains_key(i.item.as_str()))
            .map(|i| Ok(format!("{} {}", to_u32(batches * i.count as u64, &i.item)?, i.item)))
            .collect::<Result<_, NoPlan>>()?;
        let text = if leaves.is_empty() {
            format!("Craft {produced} {item}")
        } else {
            format!("Gather {} and craft {produced} {item}", leaves.join(", "))
        };
        anchors.push(Anchor { text, target: ItemCount::new(item, produced) });
    }
    anchors.push(Anchor { text: format!("Craft the {}", goal.item), target: goal.clone() });
    Ok(anchors)
}

/// Target of an anchor written in the canonical styles; `None` when the text
/// names no craft.
pub fn anchor_target(text: &str, goal: &ItemCount) -> Option<ItemCount> {
    let lower = text.to_ascii_lowercase();
    let at = lower.rfind("craft ")?;
    let rest = text[at + "craft ".len()..].trim().trim_end_matches('.').trim();
    let (count, item) = if let Some(item) = rest.strip_prefix("the ") {
        (None, item.trim())
    } else {
        match rest.split_once(' ') {
            Some((n, item)) if n.chars().all(|c| c.is_ascii_digit()) => (n.parse().ok(), item.trim()),
            _ => (None, rest),
        }
    };
    if item.is_empty() {
        return None;
    }
    let count = count.unwrap_or(if item == goal.item { goal.count } else { 1 });
    Some(ItemCount::new(item, count))
}

struct Planner<'r> {
    book: Book<'r>,
    inv: BTreeMap<String, u64>,
    out: Vec<String>,
}

impl Planner<'_> {
    fn acquire(&mut self, item: &str, qty: u64, depth: usize) -> Result<(), NoPlan> {
        let fail = || NoPlan { item: item.to_string() };
        if depth > 64 || qty > MAX_QTY || self.out.len() > MAX_ACTIONS {
            return Err(fail());
        }
        let have = self.inv.get(item).copied().unwrap_or(0);
        if have >= qty {
            return Ok(());
        }
        let deficit = qty - have;
        let Some(recipe) = self.book.by_output.get(item).copied() else {
            self.out.push(format!("get {deficit} {item}"));
            *self.inv.entry(item.to_string()).or_default() += deficit;
            return Ok(());
        };
        let batches = deficit.div_ceil(recipe.output.count.max(1) as u64);
        let inputs = self.book.ordered_inputs(recipe);
        for i in &inputs {
            self.acquire(&i.item, batches.saturating_mul(i.count as u64), depth + 1)?;
        }
        for _ in 0..batches {
            if self.out.len() > MAX_ACTIONS {
                return Err(fail());
            }
            self.out.push(recipe.line());
            for i in &inputs {
                let held = self.inv.get_mut(&i.item).ok_or_else(fail)?;
                *held = held.checked_sub(i.count as u64).ok_or_else(fail)?;
            }
            *self.inv.entry(item.to_string()).or_default() += recipe.output.count as u64;
        }
        Ok(())
    }
}

/// Actions that bring `target` into the inventory, starting from `inventory`.
pub fn plan_to(
    recipes: &[Recipe],
    inventory: &BTreeMap<String, u32>,
    target: &ItemCount,
) -> Result<Vec<String>, NoPlan> {
    let mut p = Planner {
        book: Book::new(recipes)?,
        inv: inventory.iter().map(|(k, v)| (k.clone(), *v as u64)).collect(),
        out: Vec::new(),
    };
    p.acquire(&target.item, target.count as u64, 0)?;
    Ok(p.out)
}

/// Topological crafter: works through [`plan_anchors`] stage by stage from an
/// empty inventory.
pub fn solve(recipes: &[Recipe], goal: &ItemCount) -> Result<Vec<String>, NoPlan> {
    let anchors = plan_anchors(recipes, goal)?;
    let mut p = Planner { book: Book::new(recipes)?, inv: BTreeMap::new(), out: Vec::new() };
    for a in &anchors {
        p.acquire(&a.target.item, a.target.count as u64, 0)?;
    }
    Ok(p.out)
}
