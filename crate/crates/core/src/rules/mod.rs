//! Executable feasibility rules.
//!
//! A rule is a small program in a restricted expression language:
//!
//! ```text
//! when craft: if any i in action.inputs: get(scene.inventory, i.item, 0) < i.count
//!   then block "Not enough {i.item}." suggest "Get {i.count} {i.item} first."
//! ```
//!
//! Evaluation is three-valued: missing fields are unknown, and a rule blocks
//! an action only when its condition is definitely true.

mod action;
pub mod ast;
mod eval;
mod lexer;
mod parser;

use std::collections::BTreeSet;
use std::fmt;

use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::Env;
use crate::scene::SceneState;

pub use action::{
    action_kinds, parse_action, ActionTerm, AlfworldAction, AlfworldVerb, MalformedAction, TextcraftAction,
    WebshopAction, WebshopVerb,
};
pub use eval::Tri;

use ast::{Expr, Func, Quantifier, RuleAst, RESERVED};

pub const ROOTS: [&str; 3] = ["action", "scene", "obs"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("parse error at {line}:{col}: expected {expected}, found {found}")]
    Parse { line: usize, col: usize, expected: String, found: String },
    #[error("unbound name `{name}`")]
    Binding { name: String },
    #[error("`{function}` is not available for {env}")]
    Scope { function: String, env: Env },
    #[error("`{kind}` is not a {env} action kind")]
    UnknownActionKind { kind: String, env: Env },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleVerdict {
    pub permit: bool,
    pub rule_id: String,
    pub message: Option<String>,
    pub suggestion: Option<String>,
}

/// A parsed, validated rule.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleProgram {
    pub id: String,
    pub env: Env,
    pub description: String,
    pub ast: RuleAst,
}

/// Everything a rule can observe, pre-serialized once per candidate action.
#[derive(Debug, Clone)]
pub struct RuleInput {
    pub env: Env,
    pub kind: &'static str,
    pub action: Value,
    pub scene: Value,
    pub observation: Value,
}

impl RuleInput {
    pub fn new(observation: &str, scene: &SceneState, action: &ActionTerm) -> Self {
        RuleInput {
            env: action.env(),
            kind: action.kind(),
            action: action.to_json(),
            scene: scene.rule_view(),
            observation: Value::String(observation.to_string()),
        }
    }
}

/// Stable content hash of a rule's canonical form.
pub fn rule_id(env: Env, canonical: &str) -> String {
    let digest = Sha256::digest(format!("{env}\n{canonical}").as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn check_bindings(e: &Expr, bound: &mut Vec<String>) -> Result<(), RuleError> {
    match e {
        Expr::Var(v) => {
            if ROOTS.contains(&v.as_str()) || bound.iter().any(|b| b == v) {
                Ok(())
            } else {
                Err(RuleError::Binding { name: v.clone() })
            }
        }
        Expr::Quant(_, var, list, body) => {
            check_bindings(list, bound)?;
            if ROOTS.contains(&var.as_str()) || RESERVED.contains(&var.as_str()) || bound.contains(var) {
                return Err(RuleError::Binding { name: var.clone() });
            }
            bound.push(var.clone());
            let r = check_bindings(body, bound);
            bound.pop();
            r
        }
        Expr::Field(b, _) | Expr::Not(b) | Expr::Neg(b) => check_bindings(b, bound),
        Expr::Index(a, b) | Expr::Bin(_, a, b) => {
            check_bindings(a, bound)?;
            check_bindings(b, bound)
        }
        Expr::Call(_, args) => args.iter().try_for_each(|a| check_bindings(a, bound)),
        Expr::Null | Expr::Bool(_) | Expr::Num(_) | Expr::Str(_) => Ok(()),
    }
}

fn validate(env: Env, ast: &RuleAst) -> Result<(), RuleError> {
    if let Some(kinds) = &ast.matcher.0 {
        if let Some(k) = kinds.iter().find(|k| !action_kinds(env).contains(&k.as_str())) {
            return Err(RuleError::UnknownActionKind { kind: k.clone(), env });
        }
    }
    check_bindings(&ast.condition, &mut Vec::new())?;

    let mut witnesses: Vec<String> = Vec::new();
    let mut scoped = Ok(());
    let mut visit = |e: &Expr| match e {
        Expr::Quant(Quantifier::Any, v, ..) => witnesses.push(v.clone()),
        Expr::Call(Func::RecipeFor, _) if env != Env::Textcraft => {
            scoped = Err(RuleError::Scope { function: Func::RecipeFor.name().into(), env })
        }
        _ => {}
    };
    ast.condition.walk(&mut visit);
    for t in [&ast.block, &ast.suggest] {
        for e in t.placeholders() {
            e.walk(&mut visit);
        }
    }
    scoped?;
    for t in [&ast.block, &ast.suggest] {
        for e in t.placeholders() {
            check_bindings(e, &mut witnesses.clone())?;
        }
    }
    Ok(())
}

/// Parses and validates one rule for `env`.
pub fn parse_rule(env: Env, source: &str) -> Result<RuleProgram, RuleError> {
    let ast = parser::parse_rule_ast(source)?;
    validate(env, &ast)?;
    let id = rule_id(env, &ast.to_string());
    Ok(RuleProgram { id, env, description: String::new(), ast })
}

impl RuleProgram {
    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    /// Canonical source; parsing it yields the same rule and id.
    pub fn canonical_source(&self) -> String {
        self.ast.to_string()
    }

    pub fn applies_to(&self, kind: &str) -> bool {
        self.ast.matcher.matches(kind)
    }

    /// Condition truth value, without rendering messages.
    pub fn check(&self, input: &RuleInput) -> Tri {
        if input.env != self.env || !self.applies_to(input.kind) {
            return Tri::False;
        }
        let ctx = eval::Ctx { action: &input.action, scene: &input.scene, obs: &input.observation };
        eval::eval_condition(&self.ast.condition, &ctx).0
    }

    /// Blocks only when the condition is definitely true.
    pub fn evaluate(&self, input: &RuleInput) -> RuleVerdict {
        let permit = RuleVerdict { permit: true, rule_id: self.id.clone(), message: None, suggestion: None };
        if input.env != self.env || !self.applies_to(input.kind) {
            return permit;
        }
        let ctx = eval::Ctx { action: &input.action, scene: &input.scene, obs: &input.observation };
        match eval::eval_condition(&self.ast.condition, &ctx) {
            (Tri::True, wit) => RuleVerdict {
                permit: false,
                rule_id: self.id.clone(),
                message: Some(eval::render(&self.ast.block, &ctx, &wit)),
                suggestion: Some(eval::render(&self.ast.suggest, &ctx, &wit)),
            },
            _ => permit,
        }
    }

    /// Names of the scene fields the condition reads directly (`scene.<f>`).
    pub fn scene_fields(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.ast.condition.walk(&mut |e| {
            if let Expr::Field(base, name) = e {
                if matches!(&**base, Expr::Var(v) if v == "scene") {
                    out.insert(name.clone());
                }
            }
        });
        out
    }
}

impl fmt::Display for RuleProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[Rule_{}] {}", self.id, self.ast)
    }
}

pub fn evaluate_rule(rule: &RuleProgram, observation: &str, scene: &SceneState, action: &ActionTerm) -> RuleVerdict {
    rule.evaluate(&RuleInput::new(observation, scene, action))
}
