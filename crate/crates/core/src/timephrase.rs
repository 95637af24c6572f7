//! Closed-world extraction of time ranges and ticket-type cues from a
//! question. Unrecognized phrasing yields no filter.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::text::terms;
use crate::types::{DateKind, TicketFilter};

const NUMBER_WORDS: [(&str, u32); 13] = [
    ("a", 1),
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
    ("ten", 10),
    ("eleven", 11),
    ("twelve", 12),
];

fn unit_days(word: &str) -> Option<u32> {
    match word {
        "day" | "days" => Some(1),
        "week" | "weeks" => Some(7),
        "month" | "months" => Some(30),
        _ => None,
    }
}

fn number(word: &str) -> Option<u32> {
    word.parse::<u32>()
        .ok()
        .or_else(|| NUMBER_WORDS.iter().find(|(w, _)| *w == word).map(|&(_, n)| n))
}

/// Days covered by the first "last/past [N] day(s)/week(s)/month(s)" phrase.
pub fn parse_time_span(question: &str) -> Option<u32> {
    let toks = terms(question);
    for (i, t) in toks.iter().enumerate() {
        if t != "last" && t != "past" {
            continue;
        }
        let next = toks.get(i + 1).map(String::as_str);
        let after = toks.get(i + 2).map(String::as_str);
        if let Some(unit) = next.and_then(unit_days) {
            return Some(unit);
        }
        if let (Some(n), Some(unit)) = (next.and_then(number), after.and_then(unit_days)) {
            return n.checked_mul(unit);
        }
    }
    None
}

/// Which date a time phrase constrains, judged from the verbs used.
pub fn date_kind_for(question: &str) -> DateKind {
    let toks = terms(question);
    let has = |words: &[&str]| toks.iter().any(|t| words.contains(&t.as_str()));
    if has(&["resolved", "mitigated", "fixed", "closed", "resolve", "mitigate"]) {
        DateKind::ResolveDate
    } else if has(&["modified", "updated", "changed", "edited"]) {
        DateKind::ModifiedDate
    } else {
        DateKind::CreateDate
    }
}

pub fn time_filters(question: &str) -> BTreeMap<DateKind, u32> {
    let mut out = BTreeMap::new();
    if let Some(days) = parse_time_span(question) {
        out.insert(date_kind_for(question), days);
    }
    out
}

/// "customer" means CRI, "live site" means LSI; neither or both means ALL.
pub fn ticket_filter(question: &str) -> TicketFilter {
    let toks: Vec<String> = terms(question);
    let customer = toks.iter().any(|t| t == "customer" || t == "customers");
    let live_site = toks.windows(2).any(|w| w[0] == "live" && w[1] == "site")
        || toks.iter().any(|t| t == "livesite" || t == "lsi");
    let customer = customer || toks.iter().any(|t| t == "cri");
    match (customer, live_site) {
        (true, false) => TicketFilter::Cri,
        (false, true) => TicketFilter::Lsi,
        _ => TicketFilter::All,
    }
}
