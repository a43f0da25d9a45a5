//! PII detection and masking.
//!
//! Person, location, and organization spans come from a pluggable
//! named-entity backend; emails, phone numbers, URLs, street addresses and
//! embedded images come from deterministic pattern detectors. Overlapping
//! candidates are resolved longest-first, then earliest-start.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::LazyLock;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Error)]
pub enum AnonymizeError {
    #[error("named-entity backend {backend} unavailable: {reason}")]
    BackendUnavailable { backend: String, reason: String },
    #[error("named-entity backend returned an invalid span {start}..{end} for text of length {len}")]
    InvalidSpan { start: usize, end: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Person,
    Location,
    Organization,
    Address,
    Phone,
    Email,
    Url,
    Image,
}

impl EntityKind {
    /// Replacement token for every kind except persons, which are numbered.
    pub fn token(self) -> &'static str {
        match self {
            EntityKind::Person => "PERSON",
            EntityKind::Location => "[LOCATION]",
            EntityKind::Organization => "[ORGANIZATION]",
            EntityKind::Address => "[ADDRESS]",
            EntityKind::Phone => "[PHONE]",
            EntityKind::Email => "[EMAIL]",
            EntityKind::Url => "[URL]",
            EntityKind::Image => "[image]",
        }
    }

    /// Tie-break order when two candidates cover the same range.
    fn priority(self) -> u8 {
        match self {
            EntityKind::Image => 0,
            EntityKind::Email => 1,
            EntityKind::Url => 2,
            EntityKind::Address => 3,
            EntityKind::Phone => 4,
            EntityKind::Person => 5,
            EntityKind::Organization => 6,
            EntityKind::Location => 7,
        }
    }

    /// Kinds found by pattern detectors rather than the NER backend.
    pub fn is_pattern(self) -> bool {
        matches!(
            self,
            EntityKind::Address
                | EntityKind::Phone
                | EntityKind::Email
                | EntityKind::Url
                | EntityKind::Image
        )
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap_or_default())
    }
}

/// A detected entity; offsets are in Unicode scalar values (codepoints).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub kind: EntityKind,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedEntity {
    pub span: EntitySpan,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymizedDocument {
    pub doc_id: String,
    pub masked_text: String,
    /// Ordered by span start.
    pub entity_map: Vec<MaskedEntity>,
}

impl AnonymizedDocument {
    /// Inverts the masking using the entity map.
    pub fn restore(&self) -> String {
        let masked: Vec<char> = self.masked_text.chars().collect();
        let mut out = String::new();
        let mut pos = 0; // in masked
        let mut orig = 0; // in original
        for e in &self.entity_map {
            let keep = e.span.start - orig;
            out.extend(&masked[pos..pos + keep]);
            pos += keep + e.replacement.chars().count();
            out.push_str(&e.span.surface);
            orig = e.span.end;
        }
        out.extend(&masked[pos..]);
        out
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.entity_map.iter().map(|e| e.span.surface.as_str())
    }
}

/// Text in, typed person/location/organization spans out.
pub trait NerBackend: Send + Sync {
    fn name(&self) -> &str;
    fn recognize(&self, text: &str) -> Result<Vec<EntitySpan>, AnonymizeError>;
}

// ---------------------------------------------------------------------------
// Pattern detectors
// ---------------------------------------------------------------------------

static EMAIL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}").unwrap());

static PHONE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?:^|[^\w])((?:\+?1[-.\s]?)?(?:\(\d{3}\)\s?|\d{3}[-.\s]?)\d{3}[-.\s]?\d{4}|\d{3}-\d{4})(?:$|[^\w])",
    )
    .unwrap()
});

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)\b(?:https?://|www\.)[^\s<>"'\]\[]+"#).unwrap());

static IMAGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?i)!\[[^\]]*\]\([^)\s]*\)|<img\b[^>]*>|\b(?:https?://|www\.)[^\s<>"'\]\[]+\.(?:jpe?g|png|gif|webp|bmp)(?:\?[^\s<>"'\]\[]*)?"#,
    )
    .unwrap()
});

static ADDRESS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\b\d{1,6}\s+(?:[NSEW]\.?\s+)?(?:[A-Z0-9][A-Za-z0-9']*\.?\s+){1,4}(?:Street|St|Avenue|Ave|Road|Rd|Boulevard|Blvd|Drive|Dr|Lane|Ln|Way|Court|Ct|Place|Pl|Parkway|Pkwy|Highway|Hwy|Terrace|Ter|Circle|Cir)\b\.?(?:,?\s+(?:Apt|Suite|Unit|#)\.?\s*[A-Za-z0-9\-]+)?",
    )
    .unwrap()
});

/// Pattern-detected spans as (byte start, byte end, kind).
fn pattern_candidates(text: &str) -> Vec<(usize, usize, EntityKind)> {
    let mut out = Vec::new();
    for m in EMAIL.find_iter(text) {
        out.push((m.start(), m.end(), EntityKind::Email));
    }
    for m in IMAGE.find_iter(text) {
        out.push((m.start(), m.end(), EntityKind::Image));
    }
    for m in URL.find_iter(text) {
        let trimmed = m.as_str().trim_end_matches(['.', ',', ';', ':', '!', '?', ')']);
        out.push((m.start(), m.start() + trimmed.len(), EntityKind::Url));
    }
    for m in ADDRESS.find_iter(text) {
        out.push((m.start(), m.end(), EntityKind::Address));
    }
    let mut at = 0;
    while let Some(c) = PHONE.captures_at(text, at) {
        let g = c.get(1).unwrap();
        out.push((g.start(), g.end(), EntityKind::Phone));
        at = g.end();
    }
    out
}

// ---------------------------------------------------------------------------
// Rule-based NER backend
// ---------------------------------------------------------------------------

const FIRST_NAMES: &[&str] = &[
    "Aaron", "Adam", "Alan", "Albert", "Alex", "Alice", "Amanda", "Amy", "Andrea", "Andrew",
    "Angela", "Ann", "Anna", "Anthony", "Ashley", "Barbara", "Benjamin", "Betty", "Bob",
    "Brandon", "Brenda", "Brian", "Carl", "Carlos", "Carol", "Catherine", "Charles", "Cheryl",
    "Chris", "Christina", "Christine", "Christopher", "Cynthia", "Daniel", "David", "Deborah",
    "Debra", "Dennis", "Diana", "Diane", "Donald", "Donna", "Dorothy", "Douglas", "Edward",
    "Elizabeth", "Emily", "Emma", "Eric", "Eugene", "Frances", "Frank", "Gary", "George",
    "Gerald", "Gloria", "Gregory", "Harold", "Heather", "Helen", "Henry", "Jack", "Jacob",
    "James", "Jane", "Janet", "Jason", "Jeffrey", "Jennifer", "Jeremy", "Jerry", "Jessica",
    "Joan", "Joe", "John", "Jonathan", "Jorge", "Jose", "Joseph", "Joshua", "Joyce", "Juan",
    "Judith", "Judy", "Julie", "Justin", "Karen", "Kathleen", "Kathy", "Keith", "Kelly",
    "Kenneth", "Kevin", "Kimberly", "Larry", "Laura", "Lauren", "Linda", "Lisa", "Lori",
    "Louis", "Luis", "Margaret", "Maria", "Marie", "Marilyn", "Martha", "Mary", "Matthew",
    "Megan", "Melissa", "Michael", "Michelle", "Nancy", "Nathan", "Nicholas", "Nicole",
    "Olivia", "Pamela", "Patricia", "Patrick", "Paul", "Peter", "Philip", "Rachel", "Ralph",
    "Raymond", "Rebecca", "Richard", "Robert", "Roger", "Ronald", "Russell", "Ruth", "Ryan",
    "Samantha", "Samuel", "Sandra", "Sarah", "Scott", "Sean", "Sharon", "Shirley", "Sophia",
    "Stephanie", "Stephen", "Steven", "Susan", "Teresa", "Thomas", "Timothy", "Tyler",
    "Victoria", "Virginia", "Walter", "William", "Zachary",
];

const TITLES: &str = r"Mr|Mrs|Ms|Miss|Mx|Dr|Prof|Rev|Sgt|Lt|Capt|Officer|Detective|Deputy|Mayor|Councilman|Councilwoman|Councilor|Councillor|Councilmember|Council\s+Member|Council\s+President|Alderman|Alderwoman|Commissioner|Senator|Sen|Rep|Representative|Congressman|Congresswoman|Governor|Gov|Judge|Justice|Chief|Pastor|Father|Sister|Director|Supervisor|Sheriff|Chair|Chairman|Chairwoman|Vice\s+Chair";

static TITLED_PERSON: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"\b(?i:{TITLES})\.?\s+([A-Z][A-Za-z'’\-]*[A-Za-z]\b(?:\s+[A-Z][A-Za-z'’\-]*[A-Za-z]\b)?)"
    ))
    .unwrap()
});

static CAP_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[A-Z][A-Za-z'’\-]*\b").unwrap());

static HANDLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:^|[\s(\[,;:])((?:@[A-Za-z0-9_]{2,15})|(?:/?u/[A-Za-z0-9_\-]{3,20}))\b").unwrap()
});

static ORG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\b(?:[A-Z][A-Za-z&'.\-]*\s+(?:of\s+|for\s+|and\s+|&\s+)?){1,5}(?:Inc|LLC|Corp|Corporation|Company|Co|Department|Dept|Council|Church|University|College|Hospital|Foundation|Association|Mission|Ministries|Alliance|Coalition|Agency|Authority|Bank|Times|Tribune|Herald|Journal|Gazette|Police|Bureau|Commission|Committee|Board|Services|Center|Centre|Society|Institute|Network|Project|Partners|Group|Party|Administration|Office)\b",
    )
    .unwrap()
});

const ORG_ACRONYMS: &[&str] = &[
    "HUD", "FEMA", "ACLU", "NAACP", "YMCA", "YWCA", "HHS", "DHS", "ICE", "FBI", "CDC", "SFPD",
    "PPB", "BPD", "LAPD", "NYPD", "DNC", "RNC", "GOP", "VA", "UN",
];

const PLACES: &[&str] = &[
    "South Bend", "Rockford", "Kalamazoo", "Scranton", "Fayetteville", "San Francisco",
    "Portland", "Buffalo", "Baltimore", "El Paso", "Mishawaka", "Oakland", "Seattle",
    "Chicago", "New York", "Los Angeles", "Philadelphia", "Detroit", "Houston", "Boston",
    "Indianapolis", "Washington", "Tenderloin", "Mission District", "Downtown Portland",
    "Alabama", "Alaska", "Arizona", "Arkansas", "California", "Colorado", "Connecticut",
    "Delaware", "Florida", "Georgia", "Hawaii", "Idaho", "Illinois", "Indiana", "Iowa",
    "Kansas", "Kentucky", "Louisiana", "Maine", "Maryland", "Massachusetts", "Michigan",
    "Minnesota", "Mississippi", "Missouri", "Montana", "Nebraska", "Nevada", "New Hampshire",
    "New Jersey", "New Mexico", "North Carolina", "North Dakota", "Ohio", "Oklahoma", "Oregon",
    "Pennsylvania", "Rhode Island", "South Carolina", "South Dakota", "Tennessee", "Texas",
    "Utah", "Vermont", "Virginia", "West Virginia", "Wisconsin", "Wyoming", "Mexico", "Canada",
];

static PLACE_PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    let names: Vec<String> = PLACES.iter().map(|p| regex::escape(p).replace(' ', r"\s+")).collect();
    Regex::new(&format!(
        r"\b(?:{})\b|\b(?:St\.\s+)?[A-Z][a-z]+(?:\s+[A-Z][a-z]+)?\s+(?:County|Park|Square|Plaza|Township|Neighborhood|Valley|Heights)\b",
        names.join("|")
    ))
    .unwrap()
});

const STOPWORDS: &[&str] = &[
    "The", "A", "An", "And", "Or", "But", "Of", "In", "On", "At", "To", "For", "With", "This",
    "That", "These", "Those", "It", "He", "She", "They", "We", "I", "You", "His", "Her",
    "Their", "Our", "My", "Your", "City", "County", "State", "Said", "Says", "Is", "Was", "If",
    "When", "Then", "So", "As", "By", "From", "Not", "No", "Yes", "Thank", "Thanks", "Well",
    "Okay", "Ok", "All", "Any", "Some", "Who", "What", "Why", "How", "Where",
];

static REPLACEMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^PERSON\d+$").unwrap());

/// Dictionary and pattern-based recognizer for persons, locations and
/// organizations. Works offline; trades recall for predictability.
#[derive(Debug, Clone)]
pub struct RuleNer {
    first_names: HashSet<String>,
    acronyms: HashSet<&'static str>,
}

impl Default for RuleNer {
    fn default() -> Self {
        RuleNer {
            first_names: FIRST_NAMES.iter().map(|s| s.to_string()).collect(),
            acronyms: ORG_ACRONYMS.iter().copied().collect(),
        }
    }
}

impl RuleNer {
    /// Extends the first-name gazetteer.
    pub fn with_names<I: IntoIterator<Item = String>>(mut self, names: I) -> Self {
        self.first_names.extend(names);
        self
    }

    fn is_first_name(&self, word: &str) -> bool {
        if self.first_names.contains(word) {
            return true;
        }
        // ALL-CAPS transcripts: "JANE DOE"
        if word.len() > 1 && word.chars().all(|c| c.is_ascii_uppercase()) {
            let mut cased = word[..1].to_string();
            cased.push_str(&word[1..].to_ascii_lowercase());
            return self.first_names.contains(&cased);
        }
        false
    }
}

fn is_stopword(word: &str) -> bool {
    STOPWORDS.iter().any(|s| s.eq_ignore_ascii_case(word))
}

fn byte_to_char_spans(text: &str, raw: Vec<(usize, usize, EntityKind)>) -> Vec<EntitySpan> {
    let mut offsets: HashMap<usize, usize> = HashMap::new();
    for (ci, (bi, _)) in text.char_indices().enumerate() {
        offsets.insert(bi, ci);
    }
    let total = text.chars().count();
    offsets.insert(text.len(), total);
    raw.into_iter()
        .filter(|(s, e, _)| s < e)
        .map(|(s, e, kind)| EntitySpan {
            start: offsets[&s],
            end: offsets[&e],
            kind,
            surface: text[s..e].to_string(),
        })
        .collect()
}

impl NerBackend for RuleNer {
    fn name(&self) -> &str {
        "rule"
    }

    fn recognize(&self, text: &str) -> Result<Vec<EntitySpan>, AnonymizeError> {
        let mut raw = Vec::new();

        for c in TITLED_PERSON.captures_iter(text) {
            let g = c.get(1).unwrap();
            let mut end = g.end();
            let words: Vec<&str> = g.as_str().split_whitespace().collect();
            if is_stopword(words[0]) || REPLACEMENT.is_match(words[0]) {
                continue;
            }
            if words.len() > 1 && (is_stopword(words[1]) || REPLACEMENT.is_match(words[1])) {
                end = g.start() + words[0].len();
            }
            raw.push((g.start(), end, EntityKind::Person));
        }

        let caps: Vec<regex::Match> = CAP_WORD.find_iter(text).collect();
        for (i, m) in caps.iter().enumerate() {
            if !self.is_first_name(m.as_str()) {
                continue;
            }
            let mut end = m.end();
            if let Some(next) = caps.get(i + 1) {
                let gap = &text[m.end()..next.start()];
                let word = next.as_str();
                if gap.chars().all(|c| c == ' ')
                    && !gap.is_empty()
                    && gap.len() <= 2
                    && !is_stopword(word)
                    && !REPLACEMENT.is_match(word)
                {
                    end = next.end();
                }
            }
            raw.push((m.start(), end, EntityKind::Person));
        }

        for c in HANDLE.captures_iter(text) {
            let g = c.get(1).unwrap();
            raw.push((g.start(), g.end(), EntityKind::Person));
        }

        for m in ORG.find_iter(text) {
            // drop leading stopwords such as "The"
            let mut start = m.start();
            for w in m.as_str().split_whitespace() {
                if is_stopword(w) {
                    start = text[start..].find(w).map(|p| start + p + w.len()).unwrap_or(start);
                    start += text[start..].len() - text[start..].trim_start().len();
                } else {
                    break;
                }
            }
            if start < m.end() && text[start..m.end()].contains(' ') {
                raw.push((start, m.end(), EntityKind::Organization));
            }
        }
        for m in CAP_WORD.find_iter(text) {
            if self.acronyms.contains(m.as_str()) {
                raw.push((m.start(), m.end(), EntityKind::Organization));
            }
        }

        for m in PLACE_PATTERN.find_iter(text) {
            let first = m.as_str().split_whitespace().next().unwrap_or_default();
            if is_stopword(first) {
                continue;
            }
            // "Susan Park" is a person, "Lincoln Park" a place
            let words: Vec<&str> = m.as_str().split_whitespace().collect();
            if words.len() > 1 && words[..words.len() - 1].iter().any(|w| self.is_first_name(w)) {
                continue;
            }
            raw.push((m.start(), m.end(), EntityKind::Location));
        }

        Ok(byte_to_char_spans(text, raw))
    }
}

// ---------------------------------------------------------------------------
// HTTP NER adapter
// ---------------------------------------------------------------------------

/// Calls an external recognizer (e.g. a spaCy service).
///
/// Request: `POST {endpoint}` with `{"text": "..."}`. Response:
/// `{"entities": [{"start": 0, "end": 4, "label": "PERSON"}]}` with codepoint
/// offsets. Labels PERSON, ORG, GPE, LOC, FAC and NORP are understood;
/// others are ignored.
pub struct HttpNer {
    endpoint: String,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct HttpNerResponse {
    entities: Vec<HttpNerEntity>,
}

#[derive(Deserialize)]
struct HttpNerEntity {
    start: usize,
    end: usize,
    label: String,
}

impl HttpNer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, AnonymizeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| AnonymizeError::BackendUnavailable {
                backend: "http".into(),
                reason: e.to_string(),
            })?;
        Ok(HttpNer {
            endpoint: endpoint.into(),
            client,
        })
    }

    fn map_label(label: &str) -> Option<EntityKind> {
        match label.to_ascii_uppercase().as_str() {
            "PERSON" | "PER" => Some(EntityKind::Person),
            "ORG" | "NORP" => Some(EntityKind::Organization),
            "GPE" | "LOC" | "FAC" => Some(EntityKind::Location),
            _ => None,
        }
    }
}

impl NerBackend for HttpNer {
    fn name(&self) -> &str {
        "http"
    }

    fn recognize(&self, text: &str) -> Result<Vec<EntitySpan>, AnonymizeError> {
        let unavailable = |reason: String| AnonymizeError::BackendUnavailable {
            backend: format!("http:{}", self.endpoint),
            reason,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "text": text }))
            .send()
            .map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("status {}", resp.status())));
        }
        let body: HttpNerResponse = resp.json().map_err(|e| unavailable(e.to_string()))?;
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        for e in body.entities {
            if e.start >= e.end || e.end > chars.len() {
                return Err(AnonymizeError::InvalidSpan {
                    start: e.start,
                    end: e.end,
                    len: chars.len(),
                });
            }
            if let Some(kind) = Self::map_label(&e.label) {
                out.push(EntitySpan {
                    start: e.start,
                    end: e.end,
                    kind,
                    surface: chars[e.start..e.end].iter().collect(),
                });
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Anonymizer
// ---------------------------------------------------------------------------

pub struct Anonymizer {
    backend: Box<dyn NerBackend>,
}

impl Default for Anonymizer {
    fn default() -> Self {
        Anonymizer::new(Box::new(RuleNer::default()))
    }
}

/// Greedy non-overlapping selection: longest span first, then earliest
/// start, then kind priority. Result is ordered by start.
pub fn resolve_overlaps(mut spans: Vec<EntitySpan>) -> Vec<EntitySpan> {
    spans.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.kind.priority().cmp(&b.kind.priority()))
    });
    let mut chosen: Vec<EntitySpan> = Vec::new();
    for s in spans {
        if chosen.iter().all(|c| s.end <= c.start || s.start >= c.end) {
            chosen.push(s);
        }
    }
    chosen.sort_by_key(|s| s.start);
    chosen
}

impl Anonymizer {
    pub fn new(backend: Box<dyn NerBackend>) -> Self {
        Anonymizer { backend }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn detect_entities(&self, text: &str) -> Result<Vec<EntitySpan>, AnonymizeError> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        let len = text.chars().count();
        let mut spans = self.backend.recognize(text)?;
        for s in &spans {
            if s.start >= s.end || s.end > len {
                return Err(AnonymizeError::InvalidSpan {
                    start: s.start,
                    end: s.end,
                    len,
                });
            }
        }
        spans.retain(|s| !s.kind.is_pattern());
        spans.extend(byte_to_char_spans(text, pattern_candidates(text)));
        Ok(resolve_overlaps(spans))
    }

    pub fn mask_text(&self, doc_id: &str, text: &str) -> Result<AnonymizedDocument, AnonymizeError> {
        let spans = self.detect_entities(text)?;
        let chars: Vec<char> = text.chars().collect();
        let mut persons: HashMap<String, usize> = HashMap::new();
        let mut masked = String::with_capacity(text.len());
        let mut entity_map = Vec::with_capacity(spans.len());
        let mut pos = 0;
        for span in spans {
            masked.extend(&chars[pos..span.start]);
            let replacement = match span.kind {
                EntityKind::Person => {
                    let next = persons.len();
                    let idx = *persons.entry(span.surface.clone()).or_insert(next);
                    format!("PERSON{idx}")
                }
                kind => kind.token().to_string(),
            };
            masked.push_str(&replacement);
            pos = span.end;
            entity_map.push(MaskedEntity { span, replacement });
        }
        masked.extend(&chars[pos..]);
        Ok(AnonymizedDocument {
            doc_id: doc_id.to_string(),
            masked_text: masked,
            entity_map,
        })
    }

    pub fn mask(&self, doc: &Document) -> Result<AnonymizedDocument, AnonymizeError> {
        self.mask_text(&doc.id, &doc.text)
    }

    /// Spans found in the masked text that count as leaks: any
    /// pattern-detectable PII, or a person whose surface was masked before.
    pub fn leak_check(&self, anon: &AnonymizedDocument) -> Result<Vec<EntitySpan>, AnonymizeError> {
        let masked_surfaces: HashSet<&str> = anon
            .entity_map
            .iter()
            .filter(|e| e.span.kind == EntityKind::Person)
            .map(|e| e.span.surface.as_str())
            .collect();
        Ok(self
            .detect_entities(&anon.masked_text)?
            .into_iter()
            .filter(|s| {
                s.kind.is_pattern()
                    || (s.kind == EntityKind::Person && masked_surfaces.contains(s.surface.as_str()))
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Seeded-injection recall audit
// ---------------------------------------------------------------------------

const AUDIT_SURNAMES: &[&str] = &[
    "Okafor", "Lindqvist", "Marchetti", "Haldane", "Nakamura", "Petrov", "Quinlan", "Abernathy",
    "Delacroix", "Whitfield", "Castellano", "Brennan", "Oyelaran", "Szabo", "Fairbanks",
];

const AUDIT_STREETS: &[&str] = &["Main", "Oak", "Michigan", "Lincoln", "Maple", "Jefferson", "Market"];
const AUDIT_SUFFIXES: &[&str] = &["Street", "Ave", "Road", "Blvd", "Drive"];
const AUDIT_FILLER: &[&str] = &[
    "The shelter on the east side is full again and people are sleeping outside.",
    "I think the city should fund more affordable housing instead of sweeps.",
    "Volunteers served two hundred meals at the soup kitchen this weekend.",
    "Why does nobody talk about the housing crisis until it is an election year?",
];

/// One injected PII item and where it went.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InjectedPii {
    pub kind: EntityKind,
    pub surface: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SyntheticPiiDoc {
    pub id: String,
    pub text: String,
    pub injected: Vec<InjectedPii>,
}

/// Builds documents with known PII placed in ordinary sentences.
pub fn synthetic_pii_docs(n: usize, seed: u64) -> Vec<SyntheticPiiDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let first = *FIRST_NAMES.choose(&mut rng).unwrap();
            let last = *AUDIT_SURNAMES.choose(&mut rng).unwrap();
            let other = *FIRST_NAMES.choose(&mut rng).unwrap();
            let officer = *AUDIT_SURNAMES.choose(&mut rng).unwrap();
            let user = format!("{}{}", first.to_lowercase(), rng.gen_range(10..99));
            let email = format!("{}.{}@example.org", first.to_lowercase(), last.to_lowercase());
            let phone = format!(
                "({}) {}-{:04}",
                rng.gen_range(201..989),
                rng.gen_range(200..999),
                rng.gen_range(0..10_000)
            );
            let url = format!("https://news.example.com/story/{}", rng.gen_range(1000..9999));
            let address = format!(
                "{} {} {}",
                rng.gen_range(1..9999),
                AUDIT_STREETS.choose(&mut rng).unwrap(),
                AUDIT_SUFFIXES.choose(&mut rng).unwrap()
            );
            let full = format!("{first} {last}");
            let filler = AUDIT_FILLER.choose(&mut rng).unwrap();
            let text = format!(
                "{full} said the camp near {address} was cleared. {filler} \
                 Officer {officer} told {other} to move along. \
                 Email {email} or call {phone}. More at {url} via u/{user}. \
                 Later {full} came back."
            );
            let injected = vec![
                InjectedPii { kind: EntityKind::Person, surface: full },
                InjectedPii { kind: EntityKind::Person, surface: officer.to_string() },
                InjectedPii { kind: EntityKind::Person, surface: other.to_string() },
                InjectedPii { kind: EntityKind::Person, surface: format!("u/{user}") },
                InjectedPii { kind: EntityKind::Email, surface: email },
                InjectedPii { kind: EntityKind::Phone, surface: phone },
                InjectedPii { kind: EntityKind::Url, surface: url },
                InjectedPii { kind: EntityKind::Address, surface: address },
            ];
            SyntheticPiiDoc {
                id: format!("pii-{i}"),
                text,
                injected,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RecallAudit {
    /// kind → (injected, caught)
    pub by_kind: std::collections::BTreeMap<EntityKind, (usize, usize)>,
    pub missed: Vec<(String, InjectedPii)>,
}

impl RecallAudit {
    pub fn recall(&self, kind: EntityKind) -> Option<f64> {
        self.by_kind
            .get(&kind)
            .filter(|(n, _)| *n > 0)
            .map(|(n, c)| *c as f64 / *n as f64)
    }

    pub fn total_missed(&self) -> usize {
        self.missed.len()
    }
}

/// Masks synthetic documents and reports which injected items survive.
pub fn audit_recall(
    anonymizer: &Anonymizer,
    docs: &[SyntheticPiiDoc],
) -> Result<RecallAudit, AnonymizeError> {
    let mut audit = RecallAudit::default();
    for doc in docs {
        let anon = anonymizer.mask_text(&doc.id, &doc.text)?;
        for item in &doc.injected {
            let entry = audit.by_kind.entry(item.kind).or_default();
            entry.0 += 1;
            if anon.masked_text.contains(&item.surface) {
                audit.missed.push((doc.id.clone(), item.clone()));
            } else {
                entry.1 += 1;
            }
        }
    }
    Ok(audit)
}
