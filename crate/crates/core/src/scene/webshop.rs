use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::patterns;
use crate::model::{Step, Validity};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageType {
    #[default]
    Init,
    Search,
    Item,
    ItemSub,
    End,
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageBlock {
    pub page_type: PageType,
    pub query_string: String,
    pub page_num: u32,
    pub asin: String,
    pub subpage: String,
    pub selected_options: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiBlock {
    /// Deduplicated, in order of appearance.
    pub clickables: Vec<String>,
    pub asins: Vec<String>,
    /// option value → option type
    pub option_types: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebshopHistory {
    pub visited_asins: Vec<String>,
    pub clicked_targets: Vec<String>,
    pub invalid_actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebshopUiState {
    pub page: PageBlock,
    pub ui: UiBlock,
    pub history: WebshopHistory,
}

impl Default for WebshopUiState {
    /// The landing page.
    fn default() -> Self {
        WebshopUiState {
            page: PageBlock::default(),
            ui: UiBlock { clickables: vec!["Search".to_string()], ..UiBlock::default() },
            history: WebshopHistory::default(),
        }
    }
}

#[derive(Deserialize)]
struct Table {
    end_marker: String,
    results_markers: Vec<String>,
    item_marker: String,
    init_marker: String,
    subpage_targets: Vec<String>,
    prev_target: String,
    back_target: String,
    page_num: String,
    asin: String,
    bracket: String,
    option_line: String,
    search_action: String,
    click_action: String,
}

struct Patterns {
    t: Table,
    page_num: Regex,
    asin: Regex,
    bracket: Regex,
    option_line: Regex,
    search_action: Regex,
    click_action: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let t: Table = patterns::load("webshop", include_str!("../../assets/patterns/webshop.toml"));
        Patterns {
            page_num: patterns::re(&t.page_num),
            asin: patterns::re(&t.asin),
            bracket: patterns::re(&t.bracket),
            option_line: patterns::re(&t.option_line),
            search_action: patterns::re(&t.search_action),
            click_action: patterns::re(&t.click_action),
            t,
        }
    })
}

fn push_unique(list: &mut Vec<String>, item: &str) {
    if !list.iter().any(|x| x == item) {
        list.push(item.to_string());
    }
}

/// Bracketed tokens; `[[X]]` yields `(X, true)`.
fn bracket_tokens(text: &str) -> Vec<(String, bool)> {
    patterns()
        .bracket
        .captures_iter(text)
        .filter_map(|c| match (c.name("sel"), c.name("tok")) {
            (Some(s), _) => Some((s.as_str().trim().to_string(), true)),
            (_, Some(t)) => Some((t.as_str().trim().to_string(), false)),
            _ => None,
        })
        .collect()
}

fn classify(obs: &str, clicked_subpage: bool) -> PageType {
    let t = &patterns().t;
    if obs.contains(&t.end_marker) {
        PageType::End
    } else if t.results_markers.iter().all(|m| obs.contains(m.as_str())) {
        PageType::Search
    } else if obs.contains(&t.item_marker) {
        PageType::Item
    } else if clicked_subpage {
        PageType::ItemSub
    } else if obs.contains(&t.init_marker) {
        PageType::Init
    } else {
        PageType::Unknown
    }
}

pub fn reconstruct_webshop(history: &[Step]) -> WebshopUiState {
    let p = patterns();
    let mut s = WebshopUiState::default();

    for step in history {
        let action = step.action.trim();
        if step.valid == Validity::Invalid {
            s.history.invalid_actions.push(action.to_string());
            continue;
        }
        let obs = step.observation.as_str();
        let mut clicked_subpage = false;

        if let Some(c) = p.search_action.captures(action) {
            s.page.query_string = c["q"].trim().to_string();
            s.page.asin.clear();
            s.page.subpage.clear();
            s.page.selected_options.clear();
        } else if let Some(c) = p.click_action.captures(action) {
            let target = c["t"].trim().to_string();
            s.history.clicked_targets.push(target.clone());
            if s.ui.asins.iter().any(|a| a == &target) || p.asin.is_match(&target) {
                s.page.asin = target.clone();
                s.page.subpage.clear();
                s.page.selected_options.clear();
                push_unique(&mut s.history.visited_asins, &target);
            } else if p.t.subpage_targets.iter().any(|x| x == &target) {
                s.page.subpage = target.clone();
                clicked_subpage = true;
            } else if target == p.t.prev_target {
                s.page.subpage.clear();
            } else if target == p.t.back_target {
                s.page.asin.clear();
                s.page.subpage.clear();
                s.page.selected_options.clear();
            } else if let Some(kind) = s.ui.option_types.get(&target) {
                s.page.selected_options.insert(kind.clone(), target.clone());
            }
        }

        s.page.page_type = classify(obs, clicked_subpage);
        if let Some(c) = p.page_num.captures(obs) {
            s.page.page_num = c["n"].parse().unwrap_or(0);
        }

        let mut ui = UiBlock::default();
        for (token, _) in bracket_tokens(obs) {
            if p.asin.is_match(&token) {
                push_unique(&mut ui.asins, &token);
            }
            push_unique(&mut ui.clickables, &token);
        }
        if s.page.page_type == PageType::Item {
            for line in obs.lines() {
                if let Some(c) = p.option_line.captures(line) {
                    let kind = c["kind"].trim().to_string();
                    for (value, selected) in bracket_tokens(&c["rest"]) {
                        if selected {
                            s.page.selected_options.insert(kind.clone(), value.clone());
                        }
                        ui.option_types.insert(value, kind.clone());
                    }
                }
            }
        }
        s.ui = ui;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Env;

    fn step(a: &str, o: &str) -> Step {
        Step::new(Env::Webshop, a, o)
    }

    const RESULTS: &str = "[Back to Search] \nPage 1 (Total results: 50) \n[Next >] \n[B078GWRC1J] \nBright Citrus Deodorant by Earth Mama \n$10.99 \n[B078GTKVXY] \nGinger Fresh Deodorant \n$10.99";
    const ITEM: &str = "[Back to Search] \n[< Prev] \nscent [assorted scents][[bright citrus]][calming lavender]\nsize [travel set (4-pack)][3 ounce (pack of 1)]\nBright Citrus Deodorant by Earth Mama \nPrice: $10.99 \nRating: N.A. \n[Description] \n[Features] \n[Reviews] \n[Buy Now]";

    #[test]
    fn landing_page() {
        let s = reconstruct_webshop(&[]);
        assert_eq!(s.page.page_type, PageType::Init);
        assert_eq!(s.ui.clickables, vec!["Search"]);
    }

    #[test]
    fn search_item_end_sequence() {
        let mut h = vec![step("search[3 ounce bright citrus deodorant]", RESULTS)];
        let s = reconstruct_webshop(&h);
        assert_eq!(s.page.page_type, PageType::Search);
        assert_eq!(s.page.page_num, 1);
        assert_eq!(s.page.query_string, "3 ounce bright citrus deodorant");
        assert_eq!(s.ui.asins, vec!["B078GWRC1J", "B078GTKVXY"]);
        assert_eq!(s.ui.clickables[0], "Back to Search");

        h.push(step("click[B078GWRC1J]", ITEM));
        let s = reconstruct_webshop(&h);
        assert_eq!(s.page.page_type, PageType::Item);
        assert_eq!(s.page.asin, "B078GWRC1J");
        assert_eq!(s.page.selected_options.get("scent").map(String::as_str), Some("bright citrus"));
        assert_eq!(s.ui.option_types.get("3 ounce (pack of 1)").map(String::as_str), Some("size"));

        h.push(step("click[3 ounce (pack of 1)]", ITEM));
        let s = reconstruct_webshop(&h);
        assert_eq!(s.page.selected_options.get("size").map(String::as_str), Some("3 ounce (pack of 1)"));

        h.push(step("click[Description]", "[Back to Search] \n[< Prev] \nA gentle deodorant."));
        assert_eq!(reconstruct_webshop(&h).page.page_type, PageType::ItemSub);

        h.push(step(
            "click[Buy Now]",
            "Thank you for shopping with us! Your code: \nYour score (min 0.0, max 1.0): 1.0",
        ));
        let s = reconstruct_webshop(&h);
        assert_eq!(s.page.page_type, PageType::End);
        assert_eq!(s.history.visited_asins, vec!["B078GWRC1J"]);
    }

    #[test]
    fn invalid_actions_are_recorded_without_moving() {
        let h = vec![step("click[Buy Now]", "Invalid action!")];
        let s = reconstruct_webshop(&h);
        assert_eq!(s.page.page_type, PageType::Init);
        assert_eq!(s.history.invalid_actions, vec!["click[Buy Now]"]);
    }

    #[test]
    fn clickables_are_deduplicated() {
        let h =
            vec![step("search[x]", "[Back to Search] Page 1 (Total results: 2) [B000000001] [B000000001] [Next >]")];
        let s = reconstruct_webshop(&h);
        assert_eq!(s.ui.clickables, vec!["Back to Search", "B000000001", "Next >"]);
    }
}
