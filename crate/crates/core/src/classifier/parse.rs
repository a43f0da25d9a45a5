//! Model response parsing.
//!
//! The primary path expects the documented wire format: one JSON object
//! with a boolean for each of the sixteen identifiers. Anything else goes
//! through a conservative repair path; when nothing trustworthy is found
//! the status is `Failed` and the vector is empty.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::{Map, Value};

use crate::taxonomy::{Category, LabelVector, NUM_CATEGORIES};

use super::ParseStatus;

// "Labels: a, b", "- Categories = ...", "Few-shot classification: ..."
static AFFIRMATIVE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(?:[-*•]\s*)?(?:\*\*)?(?:final\s+|predicted\s+|applicable\s+|assigned\s+)?(?:labels?|categories|category|classifications?|answer|(?:zero|few)[- ]shot classification)(?:\*\*)?\s*[:=]\s*(.*)$",
    )
    .unwrap()
});

static BULLET_ITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]|\d+[.)])\s+(.+?)\s*$").unwrap());

static KEY_BOOL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""([A-Za-z_ /'\-]+)"\s*:\s*(true|false)"#).unwrap());

static LIST_SPLIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s*(?:,|;|\band\b|\+)\s*").unwrap());

pub fn parse_response(raw: &str) -> (LabelVector, ParseStatus) {
    if raw.trim().is_empty() {
        return (LabelVector::EMPTY, ParseStatus::Failed);
    }
    let trimmed = raw.trim();
    for (span, obj) in json_objects(raw) {
        if let Some((v, status)) = from_object(&obj) {
            // anything around the object is outside the wire format
            let bare = raw[span.0..span.1].trim() == trimmed;
            let status = if bare { status } else { ParseStatus::Repaired };
            return (v, status);
        }
    }
    if let Some(v) = from_key_bool_pairs(raw) {
        return (v, ParseStatus::Repaired);
    }
    if let Some(v) = from_affirmative_list(raw) {
        return (v, ParseStatus::Repaired);
    }
    (LabelVector::EMPTY, ParseStatus::Failed)
}

/// Every top-level JSON object that parses, with its byte span, in order
/// of appearance.
fn json_objects(raw: &str) -> Vec<((usize, usize), Map<String, Value>)> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = raw[i..].find('{') {
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => {
                i = start + stream.byte_offset();
                out.push(((start, i), map));
            }
            _ => i = start + 1,
        }
    }
    out
}

fn from_object(obj: &Map<String, Value>) -> Option<(LabelVector, ParseStatus)> {
    let mut v = LabelVector::EMPTY;
    let mut seen = [false; NUM_CATEGORIES];
    let mut exact = true;
    let mut any = false;
    for (key, value) in obj {
        let Ok(cat) = Category::parse(key) else {
            exact = false;
            continue;
        };
        if key != cat.id() {
            exact = false;
        }
        let b = match value {
            Value::Bool(b) => *b,
            Value::Number(n) if n.as_i64() == Some(0) || n.as_i64() == Some(1) => {
                exact = false;
                n.as_i64() == Some(1)
            }
            Value::String(s) if matches!(s.to_ascii_lowercase().as_str(), "true" | "yes") => {
                exact = false;
                true
            }
            Value::String(s) if matches!(s.to_ascii_lowercase().as_str(), "false" | "no") => {
                exact = false;
                false
            }
            _ => {
                exact = false;
                continue;
            }
        };
        any = true;
        seen[cat.index()] = true;
        v.set(cat, b);
    }
    if any {
        let complete = seen.iter().all(|s| *s);
        let status = if complete && exact {
            ParseStatus::Ok
        } else {
            ParseStatus::Repaired
        };
        return Some((v, status));
    }
    // {"labels": {...}} or {"labels": ["racist", ...]}
    for key in ["labels", "categories", "classification", "answer"] {
        match obj.get(key) {
            Some(Value::Object(inner)) => {
                if let Some((v, _)) = from_object(inner) {
                    return Some((v, ParseStatus::Repaired));
                }
            }
            Some(Value::Array(items)) => {
                let names: Vec<&str> = items.iter().filter_map(Value::as_str).collect();
                if names.len() == items.len() {
                    if let Ok(v) = LabelVector::from_names(&names) {
                        return Some((v, ParseStatus::Repaired));
                    }
                }
            }
            _ => {}
        }
    }
    None
}

/// Truncated or malformed JSON: salvage `"key": bool` pairs.
fn from_key_bool_pairs(raw: &str) -> Option<LabelVector> {
    let mut v = LabelVector::EMPTY;
    let mut any = false;
    for c in KEY_BOOL.captures_iter(raw) {
        if let Ok(cat) = Category::parse(&c[1]) {
            any = true;
            v.set(cat, &c[2] == "true");
        }
    }
    any.then_some(v)
}

fn clean_item(item: &str) -> &str {
    item.trim()
        .trim_matches(|c: char| matches!(c, '`' | '\'' | '"' | '.' | '*' | '[' | ']' | '‘' | '’' | '“' | '”'))
        .trim()
}

/// Items must each resolve to a category on their own; a line such as
/// `- racist: expresses racism` is a definition, not an assignment.
fn parse_items<'a>(items: impl Iterator<Item = &'a str>) -> Option<LabelVector> {
    let mut v = LabelVector::EMPTY;
    let mut any = false;
    for item in items {
        let item = clean_item(item);
        if item.is_empty() {
            continue;
        }
        if let Ok(cat) = Category::parse(item) {
            v.set(cat, true);
            any = true;
        }
    }
    any.then_some(v)
}

fn is_none_answer(rest: &str) -> bool {
    matches!(
        clean_item(rest).to_ascii_lowercase().as_str(),
        "none" | "no categories" | "no labels" | "n/a"
    )
}

fn from_affirmative_list(raw: &str) -> Option<LabelVector> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        if let Some(c) = AFFIRMATIVE_LINE.captures(lines[i]) {
            let rest = c.get(1).map_or("", |m| m.as_str()).trim();
            if !rest.is_empty() {
                if is_none_answer(rest) {
                    return Some(LabelVector::EMPTY);
                }
                if let Some(v) = parse_items(LIST_SPLIT.split(rest)) {
                    return Some(v);
                }
            } else {
                let bullets: Vec<&str> = lines[i + 1..]
                    .iter()
                    .take_while(|l| !l.trim().is_empty())
                    .filter_map(|l| BULLET_ITEM.captures(l).map(|c| c.get(1).unwrap().as_str()))
                    .collect();
                if let Some(v) = parse_items(bullets.into_iter()) {
                    return Some(v);
                }
            }
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn well_formed_object_is_ok() {
        let v = LabelVector::EMPTY.with(Category::Racist);
        assert_eq!(parse_response(&v.to_json_object()), (v, ParseStatus::Ok));
    }

    #[test]
    fn prose_list_is_repaired() {
        let (v, s) = parse_response("Labels: ask a rhetorical question, racist");
        assert_eq!(s, ParseStatus::Repaired);
        assert_eq!(
            v,
            LabelVector::EMPTY
                .with(Category::AskRhetoricalQuestion)
                .with(Category::Racist)
        );
    }

    #[test]
    fn empty_fails() {
        assert_eq!(parse_response(""), (LabelVector::EMPTY, ParseStatus::Failed));
        assert_eq!(parse_response("  \n"), (LabelVector::EMPTY, ParseStatus::Failed));
    }

    #[test]
    fn fenced_json_with_prose_is_repaired() {
        let v = LabelVector::from_bits(0b1010_0000_0000_0101);
        let raw = format!("Sure! Here you go:\n```json\n{}\n```\nHope this helps.", v.to_json_object());
        assert_eq!(parse_response(&raw), (v, ParseStatus::Repaired));
        let padded = format!("\n  {}\n", v.to_json_object());
        assert_eq!(parse_response(&padded), (v, ParseStatus::Ok));
    }

    #[test]
    fn missing_keys_are_repaired() {
        let (v, s) = parse_response(r#"{"racist": true, "government_critique": false}"#);
        assert_eq!(s, ParseStatus::Repaired);
        assert_eq!(v, LabelVector::EMPTY.with(Category::Racist));
    }

    #[test]
    fn truncated_json_is_repaired() {
        let raw = r#"{"money_aid_allocation": true, "government_critique": false, "societal_cri"#;
        let (v, s) = parse_response(raw);
        assert_eq!(s, ParseStatus::Repaired);
        assert_eq!(v, LabelVector::EMPTY.with(Category::MoneyAidAllocation));
    }

    #[test]
    fn echoed_definitions_do_not_count() {
        let mut echo = String::from("Category definitions:\n");
        for c in Category::ALL {
            echo.push_str(&format!("- {}: {}\n", c.id(), c.guideline()));
        }
        assert_eq!(parse_response(&echo).1, ParseStatus::Failed);
        let bare = "I considered racist and government critique but am unsure.";
        assert_eq!(parse_response(bare).1, ParseStatus::Failed);
    }

    #[test]
    fn bullet_list_after_header() {
        let raw = "Categories:\n- provide a fact or claim\n- Solutions/Interventions\n\nDone.";
        let (v, s) = parse_response(raw);
        assert_eq!(s, ParseStatus::Repaired);
        assert_eq!(
            v,
            LabelVector::EMPTY
                .with(Category::ProvideFactOrClaim)
                .with(Category::SolutionsInterventions)
        );
    }

    #[test]
    fn explicit_none() {
        assert_eq!(
            parse_response("Labels: none"),
            (LabelVector::EMPTY, ParseStatus::Repaired)
        );
    }

    /// (raw response, expected category ids, expected status)
    const MALFORMED: &[(&str, &[&str], ParseStatus)] = &[
        ("", &[], ParseStatus::Failed),
        ("I cannot help with that.", &[], ParseStatus::Failed),
        ("{}", &[], ParseStatus::Failed),
        ("[]", &[], ParseStatus::Failed),
        ("null", &[], ParseStatus::Failed),
        ("{\"foo\": true}", &[], ParseStatus::Failed),
        ("The text mentions racist remarks.", &[], ParseStatus::Failed),
        ("Labels: something unrelated", &[], ParseStatus::Failed),
        ("- racist: expresses racism toward a group", &[], ParseStatus::Failed),
        ("{\"racist\": \"maybe\"}", &[], ParseStatus::Failed),
        ("{\"racist\": 1, \"harmful_generalization\": 0}", &["racist"], ParseStatus::Repaired),
        ("{\"racist\": \"yes\"}", &["racist"], ParseStatus::Repaired),
        ("{\"Racist\": true}", &["racist"], ParseStatus::Repaired),
        ("{\"labels\": [\"racist\", \"government_critique\"]}", &["racist", "government_critique"], ParseStatus::Repaired),
        ("{\"labels\": {\"deserving_undeserving\": true}}", &["deserving_undeserving"], ParseStatus::Repaired),
        ("{\"categories\": [\"not a category\"]}", &[], ParseStatus::Failed),
        ("{'racist': true}", &[], ParseStatus::Failed),
        ("{\"racist\": true,", &["racist"], ParseStatus::Repaired),
        ("```json\n{\"racist\": true, \"not_in_my_backyard\": tru", &["racist"], ParseStatus::Repaired),
        ("\"societal_critique\": true, \"racist\": false", &["societal_critique"], ParseStatus::Repaired),
        ("Labels: racist", &["racist"], ParseStatus::Repaired),
        ("labels = Racist; Government Critique", &["racist", "government_critique"], ParseStatus::Repaired),
        ("**Categories:** Express Opinion and Provide Fact/Claim", &["express_their_opinion", "provide_fact_or_claim"], ParseStatus::Repaired),
        ("Answer: NIMBY", &["not_in_my_backyard"], ParseStatus::Repaired),
        ("Few-shot classification: racist.", &["racist"], ParseStatus::Repaired),
        ("Labels: none", &[], ParseStatus::Repaired),
        ("Answer: N/A", &[], ParseStatus::Repaired),
        ("Labels:\n1. racist\n2) harmful generalization", &["racist", "harmful_generalization"], ParseStatus::Repaired),
        ("Reasoning first.\nFinal labels: `racist`, `deserving_undeserving`", &["racist", "deserving_undeserving"], ParseStatus::Repaired),
        ("Categories: racist, unknown thing, societal critique", &["racist", "societal_critique"], ParseStatus::Repaired),
    ];

    #[test]
    fn malformed_corpus() {
        assert_eq!(MALFORMED.len(), 30);
        for (raw, ids, status) in MALFORMED {
            let expected = LabelVector::from_names(ids).unwrap();
            assert_eq!(parse_response(raw), (expected, *status), "{raw:?}");
        }
    }

    #[test]
    fn extremes_round_trip() {
        for v in [LabelVector::EMPTY, LabelVector::FULL] {
            assert_eq!(parse_response(&v.to_json_object()), (v, ParseStatus::Ok));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn serialized_vectors_round_trip(bits in any::<u16>()) {
            let v = LabelVector::from_bits(bits);
            prop_assert_eq!(parse_response(&v.to_json_object()), (v, ParseStatus::Ok));
        }

        #[test]
        fn never_panics(s in "\\PC{0,200}") {
            let (v, status) = parse_response(&s);
            if status == ParseStatus::Failed {
                prop_assert_eq!(v, LabelVector::EMPTY);
            }
        }
    }
}
