//! Role prompt templates, bundled verbatim, and their rendering.
//!
//! Templates use `{NAME}` placeholders. Only names passed to [`render`] are
//! substituted; `{{` and `}}` collapse to single braces; any other brace text
//! is kept as is.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::Env;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Inductor,
    Distiller,
    Planner,
    Actor,
    Monitor,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Inductor, Role::Distiller, Role::Planner, Role::Actor, Role::Monitor];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Inductor => "inductor",
            Role::Distiller => "distiller",
            Role::Planner => "planner",
            Role::Actor => "actor",
            Role::Monitor => "monitor",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! per_env {
    ($env:expr, $prefix:literal) => {
        match $env {
            Env::Alfworld => include_str!(concat!("../assets/prompts/", $prefix, "_alfworld.txt")),
            Env::Webshop => include_str!(concat!("../assets/prompts/", $prefix, "_webshop.txt")),
            Env::Textcraft => include_str!(concat!("../assets/prompts/", $prefix, "_textcraft.txt")),
        }
    };
}

pub const DSL_EMISSION: &str = include_str!("../assets/prompts/dsl_emission.txt");

/// The main template for a role. For the inductor this is the query part;
/// see [`inductor_system`].
pub fn template(role: Role, env: Env) -> &'static str {
    match role {
        Role::Inductor => per_env!(env, "inductor_query"),
        Role::Distiller => per_env!(env, "distiller"),
        Role::Planner => per_env!(env, "planner"),
        Role::Actor => per_env!(env, "actor"),
        Role::Monitor => per_env!(env, "monitor"),
    }
}

/// Inductor system prompt with the rule-language instructions appended.
pub fn inductor_system(env: Env) -> String {
    format!("{}\n{}", per_env!(env, "inductor_system").trim_end(), DSL_EMISSION)
}

/// Substitutes `{KEY}` for each `(KEY, value)` pair in one left-to-right
/// pass, so substituted text is never rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('{') {
            if let Some(end) = tail.find('}') {
                let key = &tail[1..end];
                if let Some((_, v)) = vars.iter().find(|(k, _)| *k == key) {
                    out.push_str(v);
                    rest = &tail[end + 1..];
                    continue;
                }
            }
        }
        out.push_str(&tail[..1]);
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Placeholder names that appear in a template.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            rest = after;
            continue;
        }
        match tail.find('}') {
            Some(end) if tail[1..end].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && end > 1 => {
                let k = tail[1..end].to_string();
                if !out.contains(&k) {
                    out.push(k);
                }
                rest = &tail[end + 1..];
            }
            _ => rest = &tail[1..],
        }
    }
    out
}
