use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::patterns;
use crate::model::{Step, Validity};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlfworldSceneGraph {
    pub locations: BTreeSet<String>,
    /// Unordered pairs, stored with the smaller id first.
    pub edges: BTreeSet<(String, String)>,
    pub objects: BTreeMap<String, ObjectPlacement>,
    pub agent_at: Option<String>,
    pub holding: Option<String>,
    pub unexplored: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    /// `None` while held.
    pub location: Option<String>,
    /// First observed placement; never overwritten.
    pub initial_location: Option<String>,
}

#[derive(Deserialize)]
struct Table {
    see_list: String,
    list_separator: String,
    entity: String,
    go_action: String,
    open_action: String,
    arrive: String,
    on_location: String,
    in_it: String,
    closed: String,
    opened: String,
    pickup: String,
    place: String,
}

struct Patterns {
    see_list: Regex,
    list_separator: Regex,
    entity: Regex,
    go_action: Regex,
    open_action: Regex,
    arrive: Regex,
    on_location: Regex,
    in_it: Regex,
    closed: Regex,
    opened: Regex,
    pickup: Regex,
    place: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let t: Table = patterns::load("alfworld", include_str!("../../assets/patterns/alfworld.toml"));
        Patterns {
            see_list: patterns::re(&t.see_list),
            list_separator: patterns::re(&t.list_separator),
            entity: patterns::re(&t.entity),
            go_action: patterns::re(&t.go_action),
            open_action: patterns::re(&t.open_action),
            arrive: patterns::re(&t.arrive),
            on_location: patterns::re(&t.on_location),
            in_it: patterns::re(&t.in_it),
            closed: patterns::re(&t.closed),
            opened: patterns::re(&t.opened),
            pickup: patterns::re(&t.pickup),
            place: patterns::re(&t.place),
        }
    })
}

/// Splits a "you see" list into entity ids, skipping anything unrecognized.
fn entities(list: &str) -> Vec<String> {
    let p = patterns();
    p.list_separator
        .split(list.trim())
        .filter_map(|phrase| p.entity.captures(phrase.trim()).map(|c| c["name"].to_string()))
        .collect()
}

impl AlfworldSceneGraph {
    fn discover(&mut self, loc: &str) {
        if self.locations.insert(loc.to_string()) {
            self.unexplored.insert(loc.to_string());
        }
    }

    fn explored(&mut self, loc: &str) {
        self.discover(loc);
        self.unexplored.remove(loc);
    }

    fn place(&mut self, obj: &str, loc: &str) {
        let entry = self.objects.entry(obj.to_string()).or_default();
        entry.location = Some(loc.to_string());
        entry.initial_location.get_or_insert_with(|| loc.to_string());
        if self.holding.as_deref() == Some(obj) {
            self.holding = None;
        }
    }

    fn see_at(&mut self, loc: &str, list: &str) {
        self.explored(loc);
        for obj in entities(list) {
            if self.holding.as_deref() != Some(obj.as_str()) {
                self.place(&obj, loc);
            }
        }
    }
}

pub fn reconstruct_alfworld(initial_observation: &str, history: &[Step]) -> AlfworldSceneGraph {
    let p = patterns();
    let mut g = AlfworldSceneGraph::default();

    if let Some(c) = p.see_list.captures(initial_observation) {
        for loc in entities(&c["list"]) {
            g.discover(&loc);
        }
    }

    for step in history {
        // failed actions carry no evidence
        if step.valid == Validity::Invalid {
            continue;
        }
        let obs = step.observation.as_str();
        let action = step.action.trim();

        if p.arrive.is_match(obs) {
            if let Some(c) = p.go_action.captures(action) {
                let loc = c["loc"].to_string();
                g.discover(&loc);
                if let Some(prev) = g.agent_at.take() {
                    if prev != loc {
                        let edge = if prev < loc { (prev, loc.clone()) } else { (loc.clone(), prev) };
                        g.edges.insert(edge);
                    }
                }
                g.agent_at = Some(loc);
            }
        }
        for c in p.on_location.captures_iter(obs) {
            g.see_at(&c["loc"], &c["list"]);
        }
        for c in p.closed.captures_iter(obs) {
            g.discover(&c["loc"]);
        }
        let opened = p
            .opened
            .captures(obs)
            .map(|c| c["loc"].to_string())
            .or_else(|| p.open_action.captures(action).map(|c| c["loc"].to_string()));
        if let Some(c) = p.in_it.captures(obs) {
            if let Some(loc) = &opened {
                g.see_at(loc, &c["list"]);
            }
        } else if let (Some(loc), true) = (&opened, p.opened.is_match(obs)) {
            g.explored(loc);
        }
        if let Some(c) = p.pickup.captures(obs) {
            let obj = c["obj"].to_string();
            let entry = g.objects.entry(obj.clone()).or_default();
            if let Some(loc) = c.name("loc") {
                entry.initial_location.get_or_insert_with(|| loc.as_str().to_string());
            }
            entry.location = None;
            g.holding = Some(obj);
        }
        if let Some(c) = p.place.captures(obs) {
            let loc = c["loc"].to_string();
            g.discover(&loc);
            g.place(&c["obj"], &loc);
        }
    }
    g
}
