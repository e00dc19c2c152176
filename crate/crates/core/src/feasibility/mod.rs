//! Feasibility memory: verified, greedily selected rule banks.
//!
//! Candidates are checked against every transition of a pool. Any candidate
//! that blocks a positive transition is dropped; the rest compete on how many
//! still-uncovered negatives they intercept.

mod bank;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{Env, Transition, TransitionPool};
use crate::par::Exec;
use crate::rules::{parse_action, parse_rule, rule_id, RuleError, RuleInput, RuleProgram, RuleVerdict, Tri};
use crate::scene::SceneState;

pub use bank::{
    bank_from_str, bank_to_string, load_bank, save_bank, BankError, BankFile, RuleRecord, BANK_FILE_NAME, BANK_VERSION,
};

pub const DEFAULT_BUDGET: usize = 10;
pub const DEFAULT_MIN_GAIN: usize = 1;

/// A rule proposed for the bank. Sources that fail to parse are kept so they
/// show up in reports.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub description: String,
    pub source: String,
    pub parsed: Result<RuleProgram, RuleError>,
}

impl Candidate {
    pub fn new(env: Env, description: impl Into<String>, source: impl Into<String>) -> Self {
        let description = description.into();
        let source = source.into();
        let parsed = parse_rule(env, &source).map(|r| r.with_description(description.clone()));
        Candidate { description, source, parsed }
    }

    pub fn from_program(rule: RuleProgram) -> Self {
        Candidate { description: rule.description.clone(), source: rule.canonical_source(), parsed: Ok(rule) }
    }

    /// Parsed rules use their content id; unparsed ones hash the raw source.
    pub fn id(&self, env: Env) -> String {
        match &self.parsed {
            Ok(r) => r.id.clone(),
            Err(_) => rule_id(env, &self.source),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub rule_id: String,
    /// Positive transitions the rule blocks.
    pub false_rejections: usize,
    /// Indices into the pool's negatives that the rule blocks.
    pub cover: BTreeSet<usize>,
    pub parse_ok: bool,
}

impl VerificationReport {
    pub fn eligible(&self) -> bool {
        self.parse_ok && self.false_rejections == 0
    }
}

fn rule_input(t: &Transition) -> Option<RuleInput> {
    let action = parse_action(t.scene.env(), &t.action).ok()?;
    Some(RuleInput::new(&t.pre_observation, &t.scene, &action))
}

pub fn verify_rules(candidates: &[Candidate], pool: &TransitionPool) -> Vec<VerificationReport> {
    verify_rules_with(Exec::default(), candidates, pool)
}

/// Evaluates each candidate on every pool member. Transitions whose action
/// does not parse cannot be matched by any rule and count as permitted.
pub fn verify_rules_with(exec: Exec, candidates: &[Candidate], pool: &TransitionPool) -> Vec<VerificationReport> {
    let positives = exec.map(&pool.positives, rule_input);
    let negatives = exec.map(&pool.negatives, rule_input);
    let blocks =
        |rule: &RuleProgram, input: &Option<RuleInput>| input.as_ref().is_some_and(|i| rule.check(i) == Tri::True);
    exec.map(candidates, |c| match &c.parsed {
        Err(_) => {
            VerificationReport { rule_id: c.id(pool.env), false_rejections: 0, cover: BTreeSet::new(), parse_ok: false }
        }
        Ok(rule) => VerificationReport {
            rule_id: rule.id.clone(),
            false_rejections: positives.iter().filter(|i| blocks(rule, i)).count(),
            cover: negatives.iter().enumerate().filter(|(_, i)| blocks(rule, i)).map(|(k, _)| k).collect(),
            parse_ok: true,
        },
    })
}

/// One round of greedy selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub rule_id: String,
    /// Newly covered negatives in this round.
    pub gain: usize,
    /// Total cover of the rule on the build pool.
    pub cover_size: usize,
    /// 1-based.
    pub round: usize,
}

/// Greedy max-coverage over the zero-false-rejection candidates. Ties go to
/// the smaller rule id. Stops at `budget` rules, when the best gain drops
/// below `min_gain`, or when every negative is covered.
pub fn greedy_select(
    reports: &[VerificationReport],
    negatives_count: usize,
    budget: usize,
    min_gain: usize,
) -> Vec<Selection> {
    let min_gain = min_gain.max(1);
    let mut eligible: Vec<(&str, BTreeSet<usize>)> = reports
        .iter()
        .filter(|r| r.eligible())
        .map(|r| (r.rule_id.as_str(), r.cover.iter().copied().filter(|&i| i < negatives_count).collect()))
        .collect();
    eligible.sort_by(|a, b| a.0.cmp(b.0));
    eligible.dedup_by(|a, b| a.0 == b.0);

    let mut uncovered: BTreeSet<usize> = (0..negatives_count).collect();
    let mut chosen: Vec<Selection> = Vec::new();
    let mut used = vec![false; eligible.len()];
    while chosen.len() < budget && !uncovered.is_empty() {
        let mut best: Option<(usize, usize)> = None;
        for (k, (_, cover)) in eligible.iter().enumerate() {
            if used[k] {
                continue;
            }
            let gain = cover.intersection(&uncovered).count();
            // Strictly greater keeps the earliest, i.e. smallest, id on ties.
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((k, gain));
            }
        }
        let Some((k, gain)) = best.filter(|&(_, g)| g >= min_gain) else { break };
        used[k] = true;
        for i in &eligible[k].1 {
            uncovered.remove(i);
        }
        chosen.push(Selection {
            rule_id: eligible[k].0.to_string(),
            gain,
            cover_size: eligible[k].1.len(),
            round: chosen.len() + 1,
        });
    }
    chosen
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cover_size: usize,
    pub gain: usize,
    pub round: usize,
}

/// Ordered rules for one environment; order is selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleBank {
    pub env: Env,
    pub rules: Vec<RuleProgram>,
    pub provenance: Vec<Provenance>,
}

impl RuleBank {
    pub fn empty(env: Env) -> Self {
        RuleBank { env, rules: Vec::new(), provenance: Vec::new() }
    }

    /// A bank taken as-is, without verification.
    pub fn from_rules(env: Env, rules: Vec<RuleProgram>) -> Self {
        let provenance = (1..=rules.len()).map(|round| Provenance { cover_size: 0, gain: 0, round }).collect();
        RuleBank { env, rules, provenance }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub bank: RuleBank,
    pub reports: Vec<VerificationReport>,
    pub selections: Vec<Selection>,
}

impl BuildOutcome {
    pub fn candidates(&self) -> usize {
        self.reports.len()
    }

    pub fn zero_fp(&self) -> usize {
        self.reports.iter().filter(|r| r.eligible()).count()
    }
}

/// Verify, filter and select.
pub fn build_bank(
    exec: Exec,
    candidates: &[Candidate],
    pool: &TransitionPool,
    budget: usize,
    min_gain: usize,
) -> BuildOutcome {
    let reports = verify_rules_with(exec, candidates, pool);
    let selections = greedy_select(&reports, pool.negatives.len(), budget, min_gain);
    let mut bank = RuleBank::empty(pool.env);
    for s in &selections {
        let rule = candidates
            .iter()
            .filter_map(|c| c.parsed.as_ref().ok())
            .find(|r| r.id == s.rule_id)
            .expect("selected ids come from parsed candidates");
        bank.rules.push(rule.clone());
        bank.provenance.push(Provenance { cover_size: s.cover_size, gain: s.gain, round: s.round });
    }
    for s in &selections {
        let r = reports.iter().find(|r| r.rule_id == s.rule_id).expect("report exists");
        assert_eq!(r.false_rejections, 0, "selected rule {} blocks a positive transition", s.rule_id);
    }
    BuildOutcome { bank, reports, selections }
}

/// Result of checking one proposed action against a bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionVerdict {
    pub permit: bool,
    /// Blocking verdicts in bank order.
    pub blocking: Vec<RuleVerdict>,
}

pub const FORMAT_RULE_ID: &str = "format";

impl ActionVerdict {
    /// One line per blocking rule, as fed back to the actor.
    pub fn feedback(&self) -> String {
        self.blocking
            .iter()
            .map(|v| {
                format!(
                    "[Rule_{}] {} Suggestion: {}",
                    v.rule_id,
                    v.message.as_deref().unwrap_or(""),
                    v.suggestion.as_deref().unwrap_or("")
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn format_hint(env: Env) -> &'static str {
    match env {
        Env::Textcraft => {
            "Use one of: get <count> <item>; craft <count> <item> using <count> <item>, ...; inventory; think: <text>."
        }
        Env::Webshop => "Use one of: search[query]; click[target]; think[text].",
        Env::Alfworld => {
            "Use one of the listed admissible commands, e.g. go to <receptacle> or take <object> from <receptacle>."
        }
    }
}

pub fn verify_action(bank: &RuleBank, observation: &str, scene: &SceneState, action_raw: &str) -> ActionVerdict {
    let action = match parse_action(bank.env, action_raw) {
        Ok(a) => a,
        Err(_) => {
            return ActionVerdict {
                permit: false,
                blocking: vec![RuleVerdict {
                    permit: false,
                    rule_id: FORMAT_RULE_ID.into(),
                    message: Some(format!(
                        "Invalid action format: `{}` is not a valid {} action.",
                        action_raw.trim(),
                        bank.env
                    )),
                    suggestion: Some(format_hint(bank.env).into()),
                }],
            }
        }
    };
    let input = RuleInput::new(observation, scene, &action);
    let blocking: Vec<RuleVerdict> = bank.rules.iter().map(|r| r.evaluate(&input)).filter(|v| !v.permit).collect();
    ActionVerdict { permit: blocking.is_empty(), blocking }
}

/// Hand-written TextCraft rules: recipe/count match, ingredient availability,
/// and recipe input match.
pub fn textcraft_reference_rules() -> Vec<Candidate> {
    const RULES: [(&str, &str); 3] = [
        (
            "The requested crafting count must match a valid recipe for the item.",
            r#"when craft:
  if not exists(recipe_for(action.item)) or recipe_for(action.item).output.count != action.count
  then block "No recipe crafts exactly {action.count} {action.item}."
  suggest "Use a listed crafting command for {action.item} with its exact output count.""#,
        ),
        (
            "Every input of a craft must already be in the inventory in the required amount.",
            r#"when craft:
  if any i in action.inputs: get(scene.inventory, i.item, 0) < i.count
  then block "Not enough {i.item}: need {i.count}, have {get(scene.inventory, i.item, 0)}."
  suggest "Get or craft {i.count} {i.item} before crafting {action.item}.""#,
        ),
        (
            "The inputs of a craft must be exactly the inputs of the item's recipe.",
            r#"when craft:
  if exists(recipe_for(action.item))
     and (len(action.inputs) != len(recipe_for(action.item).inputs)
          or any i in action.inputs: not contains(recipe_for(action.item).inputs, i))
  then block "The inputs do not match the recipe for {action.item}."
  suggest "Use the listed crafting command for {action.item} verbatim.""#,
        ),
    ];
    RULES.iter().map(|(d, s)| Candidate::new(Env::Textcraft, *d, *s)).collect()
}

/// The three reference rules as a bank, in declaration order.
pub fn textcraft_reference_bank() -> RuleBank {
    let rules = textcraft_reference_rules().into_iter().map(|c| c.parsed.expect("reference rules parse")).collect();
    RuleBank::from_rules(Env::Textcraft, rules)
}
