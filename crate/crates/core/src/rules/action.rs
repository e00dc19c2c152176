//! Structured actions per environment.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::Env;
use crate::textcraft::ItemCount;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionTerm {
    Alfworld(AlfworldAction),
    Webshop(WebshopAction),
    Textcraft(TextcraftAction),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TextcraftAction {
    Get { count: u32, item: String },
    Craft { count: u32, item: String, inputs: Vec<ItemCount> },
    Inventory,
    Think { text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WebshopVerb {
    Search,
    Click,
    Think,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WebshopAction {
    pub verb: WebshopVerb,
    pub arg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlfworldVerb {
    GoTo,
    Open,
    Close,
    Take,
    Put,
    Clean,
    Heat,
    Cool,
    Use,
    Examine,
    Inventory,
    Look,
    Think,
}

impl AlfworldVerb {
    pub fn kind(self) -> &'static str {
        match self {
            AlfworldVerb::GoTo => "go_to",
            AlfworldVerb::Open => "open",
            AlfworldVerb::Close => "close",
            AlfworldVerb::Take => "take",
            AlfworldVerb::Put => "put",
            AlfworldVerb::Clean => "clean",
            AlfworldVerb::Heat => "heat",
            AlfworldVerb::Cool => "cool",
            AlfworldVerb::Use => "use",
            AlfworldVerb::Examine => "examine",
            AlfworldVerb::Inventory => "inventory",
            AlfworldVerb::Look => "look",
            AlfworldVerb::Think => "think",
        }
    }
}

/// `object` holds the free text for `think`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlfworldAction {
    pub verb: AlfworldVerb,
    pub object: Option<String>,
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed {env} action `{raw}`")]
pub struct MalformedAction {
    pub env: Env,
    pub raw: String,
}

/// Action kinds a rule matcher may name, per environment.
pub fn action_kinds(env: Env) -> &'static [&'static str] {
    match env {
        Env::Textcraft => &["get", "craft", "inventory", "think"],
        Env::Webshop => &["search", "click", "think"],
        Env::Alfworld => &[
            "go_to",
            "open",
            "close",
            "take",
            "put",
            "clean",
            "heat",
            "cool",
            "use",
            "examine",
            "inventory",
            "look",
            "think",
        ],
    }
}

impl ActionTerm {
    pub fn env(&self) -> Env {
        match self {
            ActionTerm::Alfworld(_) => Env::Alfworld,
            ActionTerm::Webshop(_) => Env::Webshop,
            ActionTerm::Textcraft(_) => Env::Textcraft,
        }
    }

    /// The name a rule's `when` clause matches against.
    pub fn kind(&self) -> &'static str {
        match self {
            ActionTerm::Textcraft(a) => match a {
                TextcraftAction::Get { .. } => "get",
                TextcraftAction::Craft { .. } => "craft",
                TextcraftAction::Inventory => "inventory",
                TextcraftAction::Think { .. } => "think",
            },
            ActionTerm::Webshop(a) => match a.verb {
                WebshopVerb::Search => "search",
                WebshopVerb::Click => "click",
                WebshopVerb::Think => "think",
            },
            ActionTerm::Alfworld(a) => a.verb.kind(),
        }
    }

    /// JSON model seen by rules as `action`.
    pub fn to_json(&self) -> Value {
        let raw = self.to_string();
        let mut v = match self {
            ActionTerm::Textcraft(a) => match a {
                TextcraftAction::Get { count, item } => json!({ "count": count, "item": item }),
                TextcraftAction::Craft { count, item, inputs } => json!({
                    "count": count,
                    "item": item,
                    "inputs": inputs.iter().map(|i| json!({ "count": i.count, "item": i.item })).collect::<Vec<_>>(),
                }),
                TextcraftAction::Inventory => json!({}),
                TextcraftAction::Think { text } => json!({ "text": text }),
            },
            ActionTerm::Webshop(a) => {
                let key = match a.verb {
                    WebshopVerb::Search => "query",
                    WebshopVerb::Click => "target",
                    WebshopVerb::Think => "text",
                };
                json!({ "args": { key: a.arg } })
            }
            ActionTerm::Alfworld(a) => {
                let mut m = serde_json::Map::new();
                if let Some(o) = &a.object {
                    let key = if a.verb == AlfworldVerb::Think { "text" } else { "object" };
                    m.insert(key.into(), Value::String(o.clone()));
                }
                if let Some(t) = &a.target {
                    m.insert("target".into(), Value::String(t.clone()));
                }
                Value::Object(m)
            }
        };
        if let Value::Object(m) = &mut v {
            m.insert("name".into(), Value::String(self.kind().into()));
            m.insert("raw".into(), Value::String(raw));
        }
        v
    }
}

impl fmt::Display for ActionTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionTerm::Textcraft(a) => match a {
                TextcraftAction::Get { count, item } => write!(f, "get {count} {item}"),
                TextcraftAction::Craft { count, item, inputs } => {
                    write!(f, "craft {count} {item} using ")?;
                    for (i, input) in inputs.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write!(f, "{} {}", input.count, input.item)?;
                    }
                    Ok(())
                }
                TextcraftAction::Inventory => f.write_str("inventory"),
                TextcraftAction::Think { text } => write!(f, "think: {text}"),
            },
            ActionTerm::Webshop(a) => {
                let verb = match a.verb {
                    WebshopVerb::Search => "search",
                    WebshopVerb::Click => "click",
                    WebshopVerb::Think => "think",
                };
                write!(f, "{verb}[{}]", a.arg)
            }
            ActionTerm::Alfworld(a) => {
                let o = a.object.as_deref().unwrap_or_default();
                let t = a.target.as_deref().unwrap_or_default();
                match a.verb {
                    AlfworldVerb::GoTo => write!(f, "go to {t}"),
                    AlfworldVerb::Take => write!(f, "take {o} from {t}"),
                    AlfworldVerb::Put => write!(f, "put {o} in/on {t}"),
                    AlfworldVerb::Clean => write!(f, "clean {o} with {t}"),
                    AlfworldVerb::Heat => write!(f, "heat {o} with {t}"),
                    AlfworldVerb::Cool => write!(f, "cool {o} with {t}"),
                    AlfworldVerb::Inventory => f.write_str("inventory"),
                    AlfworldVerb::Look => f.write_str("look"),
                    AlfworldVerb::Think => write!(f, "think: {o}"),
                    v => write!(f, "{} {o}", v.kind()),
                }
            }
        }
    }
}

struct Grammar {
    tc_get: Regex,
    tc_craft: Regex,
    tc_ingredient: Regex,
    ws: Regex,
    alf_two: Regex,
    alf_put: Regex,
    alf_one: Regex,
}

fn grammar() -> &'static Grammar {
    static G: OnceLock<Grammar> = OnceLock::new();
    G.get_or_init(|| Grammar {
        tc_get: Regex::new(r"^get\s+(\d+)\s+(\S.*)$").unwrap(),
        tc_craft: Regex::new(r"^craft\s+(\d+)\s+(\S.*?)\s+using\s+(\S.*)$").unwrap(),
        tc_ingredient: Regex::new(r"^(\d+)\s+([^,]*\S)$").unwrap(),
        ws: Regex::new(r"^(search|click|think)\[(.*)\]$").unwrap(),
        alf_two: Regex::new(r"^(take|clean|heat|cool)\s+(\S.*?)\s+(from|with)\s+(\S.*)$").unwrap(),
        alf_put: Regex::new(r"^put\s+(\S.*?)\s+(?:in/on|in|on)\s+(\S.*)$").unwrap(),
        alf_one: Regex::new(r"^(go to|open|close|use|examine)\s+(\S.*)$").unwrap(),
    })
}

fn think_text(raw: &str) -> Option<String> {
    let rest = raw.strip_prefix("think")?;
    let rest = rest.strip_prefix(':').unwrap_or(rest);
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) && !raw.starts_with("think:") {
        return None;
    }
    Some(rest.trim().to_string())
}

pub fn parse_action(env: Env, raw: &str) -> Result<ActionTerm, MalformedAction> {
    let raw_trim = raw.trim();
    let malformed = || MalformedAction { env, raw: raw.to_string() };
    let g = grammar();
    match env {
        Env::Textcraft => {
            if raw_trim == "inventory" {
                return Ok(ActionTerm::Textcraft(TextcraftAction::Inventory));
            }
            if let Some(text) = think_text(raw_trim) {
                return Ok(ActionTerm::Textcraft(TextcraftAction::Think { text }));
            }
            if let Some(c) = g.tc_get.captures(raw_trim) {
                let count = c[1].parse().map_err(|_| malformed())?;
                return Ok(ActionTerm::Textcraft(TextcraftAction::Get { count, item: c[2].trim().to_string() }));
            }
            if let Some(c) = g.tc_craft.captures(raw_trim) {
                let count = c[1].parse().map_err(|_| malformed())?;
                let inputs = c[3]
                    .split(',')
                    .map(|part| {
                        let ic = g.tc_ingredient.captures(part.trim())?;
                        Some(ItemCount { count: ic[1].parse().ok()?, item: ic[2].trim().to_string() })
                    })
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(malformed)?;
                return Ok(ActionTerm::Textcraft(TextcraftAction::Craft {
                    count,
                    item: c[2].trim().to_string(),
                    inputs,
                }));
            }
            Err(malformed())
        }
        Env::Webshop => {
            let c = g.ws.captures(raw_trim).ok_or_else(malformed)?;
            let verb = match &c[1] {
                "search" => WebshopVerb::Search,
                "click" => WebshopVerb::Click,
                _ => WebshopVerb::Think,
            };
            Ok(ActionTerm::Webshop(WebshopAction { verb, arg: c[2].to_string() }))
        }
        Env::Alfworld => {
            let act = |verb, object: Option<&str>, target: Option<&str>| {
                Ok(ActionTerm::Alfworld(AlfworldAction {
                    verb,
                    object: object.map(|s| s.trim().to_string()),
                    target: target.map(|s| s.trim().to_string()),
                }))
            };
            match raw_trim {
                "inventory" => return act(AlfworldVerb::Inventory, None, None),
                "look" => return act(AlfworldVerb::Look, None, None),
                _ => {}
            }
            if raw_trim.starts_with("think:") {
                let text = raw_trim.trim_start_matches("think:").trim().to_string();
                return act(AlfworldVerb::Think, Some(&text), None);
            }
            if let Some(c) = g.alf_put.captures(raw_trim) {
                return act(AlfworldVerb::Put, Some(&c[1]), Some(&c[2]));
            }
            if let Some(c) = g.alf_two.captures(raw_trim) {
                let verb = match (&c[1], &c[3]) {
                    ("take", "from") => AlfworldVerb::Take,
                    ("clean", "with") => AlfworldVerb::Clean,
                    ("heat", "with") => AlfworldVerb::Heat,
                    ("cool", "with") => AlfworldVerb::Cool,
                    _ => return Err(malformed()),
                };
                return act(verb, Some(&c[2]), Some(&c[4]));
            }
            if let Some(c) = g.alf_one.captures(raw_trim) {
                return match &c[1] {
                    "go to" => act(AlfworldVerb::GoTo, None, Some(&c[2])),
                    "open" => act(AlfworldVerb::Open, Some(&c[2]), None),
                    "close" => act(AlfworldVerb::Close, Some(&c[2]), None),
                    "use" => act(AlfworldVerb::Use, Some(&c[2]), None),
                    _ => act(AlfworldVerb::Examine, Some(&c[2]), None),
                };
            }
            Err(malformed())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn textcraft_craft() {
        let a = parse_action(Env::Textcraft, "craft 4 stick using 2 planks").unwrap();
        assert_eq!(
            a,
            ActionTerm::Textcraft(TextcraftAction::Craft {
                count: 4,
                item: "stick".into(),
                inputs: vec![ItemCount { count: 2, item: "planks".into() }],
            })
        );
        assert_eq!(a.kind(), "craft");
        assert_eq!(a.to_json()["inputs"][0]["item"], "planks");
        assert_eq!(a.to_json()["count"], 4);
    }

    #[test]
    fn webshop_click() {
        let a = parse_action(Env::Webshop, "click[Buy Now]").unwrap();
        assert_eq!(a, ActionTerm::Webshop(WebshopAction { verb: WebshopVerb::Click, arg: "Buy Now".into() }));
        assert_eq!(a.to_json()["args"]["target"], "Buy Now");
        assert_eq!(a.to_json()["name"], "click");
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_action(Env::Textcraft, "craft stick using planks").is_err());
        assert!(parse_action(Env::Textcraft, "hello world").is_err());
        assert!(parse_action(Env::Webshop, "buy it").is_err());
        assert!(parse_action(Env::Alfworld, "dance with mug 1").is_err());
        assert!(parse_action(Env::Textcraft, "thinking hard").is_err());
    }

    #[test]
    fn alfworld_forms() {
        let a = parse_action(Env::Alfworld, "take mug 1 from cabinet 1").unwrap();
        assert_eq!(a.kind(), "take");
        assert_eq!(a.to_json()["object"], "mug 1");
        assert_eq!(a.to_json()["target"], "cabinet 1");
        let a = parse_action(Env::Alfworld, "put mug 1 in/on coffeemachine 1").unwrap();
        assert_eq!(a.to_json()["target"], "coffeemachine 1");
        assert_eq!(parse_action(Env::Alfworld, "go to desk 1").unwrap().kind(), "go_to");
        assert_eq!(parse_action(Env::Textcraft, "think: need planks").unwrap().kind(), "think");
    }

    fn item() -> impl Strategy<Value = String> {
        "[a-z]{1,6}( [a-z]{1,6}){0,2}"
    }

    fn textcraft_action() -> impl Strategy<Value = ActionTerm> {
        prop_oneof![
            (0u32..100, item()).prop_map(|(count, item)| TextcraftAction::Get { count, item }),
            (0u32..100, item(), prop::collection::vec((0u32..9, item()), 1..4)).prop_map(|(count, item, ins)| {
                TextcraftAction::Craft {
                    count,
                    item,
                    inputs: ins.into_iter().map(|(count, item)| ItemCount { count, item }).collect(),
                }
            }),
            Just(TextcraftAction::Inventory),
            "[a-z ]{0,20}".prop_map(|t| TextcraftAction::Think { text: t.trim().to_string() }),
        ]
        .prop_map(ActionTerm::Textcraft)
    }

    fn alfworld_action() -> impl Strategy<Value = ActionTerm> {
        let obj = "[a-z]{2,8} [1-9]";
        (0usize..11, obj, obj).prop_map(|(v, o, t)| {
            let verbs = [
                (AlfworldVerb::GoTo, false, true),
                (AlfworldVerb::Open, true, false),
                (AlfworldVerb::Close, true, false),
                (AlfworldVerb::Take, true, true),
                (AlfworldVerb::Put, true, true),
                (AlfworldVerb::Clean, true, true),
                (AlfworldVerb::Heat, true, true),
                (AlfworldVerb::Cool, true, true),
                (AlfworldVerb::Use, true, false),
                (AlfworldVerb::Examine, true, false),
                (AlfworldVerb::Inventory, false, false),
            ];
            let (verb, has_o, has_t) = verbs[v];
            ActionTerm::Alfworld(AlfworldAction { verb, object: has_o.then_some(o), target: has_t.then_some(t) })
        })
    }

    proptest! {
        #[test]
        fn textcraft_round_trip(a in textcraft_action()) {
            prop_assert_eq!(parse_action(Env::Textcraft, &a.to_string()).unwrap(), a);
        }

        #[test]
        fn alfworld_round_trip(a in alfworld_action()) {
            prop_assert_eq!(parse_action(Env::Alfworld, &a.to_string()).unwrap(), a);
        }

        #[test]
        fn webshop_round_trip(v in 0usize..3, arg in "[a-zA-Z0-9 <>]{0,20}") {
            let verb = [WebshopVerb::Search, WebshopVerb::Click, WebshopVerb::Think][v];
            let a = ActionTerm::Webshop(WebshopAction { verb, arg });
            prop_assert_eq!(parse_action(Env::Webshop, &a.to_string()).unwrap(), a);
        }

        #[test]
        fn parse_action_is_total(env in 0usize..3, s in ".{0,40}") {
            let _ = parse_action(Env::ALL[env], &s);
        }
    }
}
