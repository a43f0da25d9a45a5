//! Corpus ingestion, lexicon filtering, windowing, segmentation, county
//! similarity, and corpus statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid county table: {0}")]
    CountyTable(String),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("duplicate lexicon phrase {0:?}")]
    DuplicatePhrase(String),
    #[error("k = {k} exceeds pool size {pool}")]
    KTooLarge { k: usize, pool: usize },
    #[error("non-finite feature value for county {0:?}")]
    NonFinite(String),
    #[error("window start {start} is not before end {end}")]
    BadWindow { start: NaiveDate, end: NaiveDate },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Reddit,
    X,
    News,
    Council,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::Reddit,
        SourceKind::X,
        SourceKind::News,
        SourceKind::Council,
    ];

    pub fn id(self) -> &'static str {
        match self {
            SourceKind::Reddit => "reddit",
            SourceKind::X => "x",
            SourceKind::News => "news",
            SourceKind::Council => "council",
        }
    }

    /// Row label used in score tables.
    pub fn label(self) -> &'static str {
        match self {
            SourceKind::Reddit => "Reddit",
            SourceKind::X => "X (Twitter)",
            SourceKind::News => "News",
            SourceKind::Council => "Meeting Minutes",
        }
    }

    pub fn parse(s: &str) -> Option<SourceKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reddit" => Some(SourceKind::Reddit),
            "x" | "twitter" | "x (twitter)" => Some(SourceKind::X),
            "news" => Some(SourceKind::News),
            "council" | "meeting minutes" | "minutes" => Some(SourceKind::Council),
            _ => None,
        }
    }

    /// Social media sources as opposed to news and council minutes.
    pub fn is_social(self) -> bool {
        matches!(self, SourceKind::Reddit | SourceKind::X)
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Post,
    Comment,
    Article,
    Paragraph,
    Meeting,
    CouncilComment,
}

impl Unit {
    pub fn id(self) -> &'static str {
        match self {
            Unit::Post => "post",
            Unit::Comment => "comment",
            Unit::Article => "article",
            Unit::Paragraph => "paragraph",
            Unit::Meeting => "meeting",
            Unit::CouncilComment => "council_comment",
        }
    }
}

/// One dated, geolocated unit of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: SourceKind,
    pub city: String,
    pub county: String,
    /// `None` when the upstream record carried no date.
    pub timestamp: Option<NaiveDate>,
    pub text: String,
    pub unit: Unit,
    #[serde(default)]
    pub geolocated: bool,
    #[serde(default)]
    pub is_repost: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

impl Document {
    /// Reposts on X never enter classification sets.
    pub fn is_classifiable(&self) -> bool {
        !(self.source == SourceKind::X && self.is_repost)
    }

    /// The unit counted per source in corpus summaries and drawn into the
    /// gold sample: Reddit comments, news paragraphs, X non-reposts and
    /// council comments.
    pub fn is_analysis_unit(&self) -> bool {
        match self.source {
            SourceKind::Reddit => self.unit == Unit::Comment,
            SourceKind::News => self.unit == Unit::Paragraph,
            SourceKind::X => self.unit == Unit::Post && !self.is_repost,
            SourceKind::Council => self.unit == Unit::CouncilComment,
        }
    }
}

/// One city of the study roster and the county it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityEntry {
    pub city: String,
    pub county: String,
    pub group: CityGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CityGroup {
    /// Comparable to South Bend, IN.
    Small,
    /// Comparable to San Francisco, CA.
    Large,
}

/// The ten study cities.
pub fn default_roster() -> Vec<CityEntry> {
    let rows = [
        ("South Bend", "St. Joseph County, IN", CityGroup::Small),
        ("Rockford", "Winnebago County, IL", CityGroup::Small),
        ("Kalamazoo", "Kalamazoo County, MI", CityGroup::Small),
        ("Scranton", "Lackawanna County, PA", CityGroup::Small),
        ("Fayetteville", "Washington County, AR", CityGroup::Small),
        ("San Francisco", "San Francisco, CA", CityGroup::Large),
        ("Portland", "Multnomah County, OR", CityGroup::Large),
        ("Buffalo", "Erie County, NY", CityGroup::Large),
        ("Baltimore", "Baltimore County, MD", CityGroup::Large),
        ("El Paso", "El Paso County, TX", CityGroup::Large),
    ];
    rows.into_iter()
        .map(|(city, county, group)| CityEntry {
            city: city.to_string(),
            county: county.to_string(),
            group,
        })
        .collect()
}

/// Lowercase slug used in synthesized ids and CLI flags, e.g. `south-bend`.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for word in name
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push('-');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Raw line record. Everything except `text` is optional on disk.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: Option<String>,
    source: Option<String>,
    city: Option<String>,
    county: Option<String>,
    timestamp: Option<String>,
    text: String,
    unit: Option<Unit>,
    #[serde(default)]
    geolocated: bool,
    #[serde(default)]
    is_repost: bool,
    parent_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub documents: Vec<Document>,
    pub errors: Vec<LineError>,
}

fn default_unit(source: SourceKind) -> Unit {
    match source {
        SourceKind::Reddit | SourceKind::X => Unit::Post,
        SourceKind::News => Unit::Article,
        SourceKind::Council => Unit::Meeting,
    }
}

/// Reads a line-delimited record file for one (source, city).
///
/// Missing ids are synthesized as `{source}-{city-slug}-{line}`. County
/// defaults to the roster entry for the city. Bad lines are reported, not
/// dropped silently.
pub fn ingest(path: &Path, source: SourceKind, city: &str) -> Result<IngestReport, CorpusError> {
    let content = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(ingest_str(&content, source, city))
}

pub fn ingest_str(content: &str, source: SourceKind, city: &str) -> IngestReport {
    let roster = default_roster();
    let default_county = roster
        .iter()
        .find(|e| e.city.eq_ignore_ascii_case(city))
        .map(|e| e.county.clone())
        .unwrap_or_default();
    let city_slug = slug(city);

    let mut report = IngestReport::default();
    let mut seen = HashMap::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fail = |message: String| {
            report.errors.push(LineError {
                line: line_no,
                message,
            })
        };
        let raw: RawRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                fail(e.to_string());
                continue;
            }
        };
        if let Some(s) = &raw.source {
            if SourceKind::parse(s) != Some(source) {
                fail(format!("record source {s:?} does not match {source}"));
                continue;
            }
        }
        if let Some(c) = &raw.city {
            if !c.eq_ignore_ascii_case(city) {
                fail(format!("record city {c:?} does not match {city:?}"));
                continue;
            }
        }
        if raw.text.trim().is_empty() {
            fail("text is empty".into());
            continue;
        }
        let timestamp = match raw.timestamp.as_deref().map(parse_date) {
            None => None,
            Some(Ok(d)) => Some(d),
            Some(Err(e)) => {
                fail(e);
                continue;
            }
        };
        let id = raw
            .id
            .unwrap_or_else(|| format!("{}-{}-{}", source.id(), city_slug, line_no));
        if let Some(prev) = seen.insert(id.clone(), line_no) {
            fail(format!("duplicate id {id:?} (first seen on line {prev})"));
            continue;
        }
        report.documents.push(Document {
            id,
            source,
            city: city.to_string(),
            county: raw.county.unwrap_or_else(|| default_county.clone()),
            timestamp,
            text: raw.text,
            unit: raw.unit.unwrap_or(default_unit(source)),
            geolocated: raw.geolocated,
            is_repost: raw.is_repost,
            parent_id: raw.parent_id,
        });
    }
    report
}

/// Accepts `YYYY-MM-DD` or a full RFC 3339 timestamp (date part kept, UTC).
fn parse_date(s: &str) -> Result<NaiveDate, String> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.with_timezone(&chrono::Utc).date_naive())
        .map_err(|_| format!("invalid timestamp {s:?}"))
}

// ---------------------------------------------------------------------------
// Lexicon
// ---------------------------------------------------------------------------

pub const DEFAULT_LEXICON: [&str; 11] = [
    "homeless",
    "homelessness",
    "housing crisis",
    "affordable housing",
    "unhoused",
    "houseless",
    "housing insecurity",
    "beggar",
    "squatter",
    "panhandler",
    "soup kitchen",
];

/// Ordered list of lowercase phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    terms: Vec<String>,
    // phrase tokens, grouped by first token
    index: HashMap<String, Vec<Vec<String>>>,
}

impl Lexicon {
    pub fn new<S: AsRef<str>>(terms: &[S]) -> Result<Self, CorpusError> {
        let mut out = Vec::new();
        let mut index: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for term in terms {
            let tokens = tokenize(term.as_ref());
            if tokens.is_empty() {
                continue;
            }
            let canonical = tokens.join(" ");
            if out.contains(&canonical) {
                return Err(CorpusError::DuplicatePhrase(canonical));
            }
            index.entry(tokens[0].clone()).or_default().push(tokens);
            out.push(canonical);
        }
        if out.is_empty() {
            return Err(CorpusError::EmptyLexicon);
        }
        Ok(Lexicon { terms: out, index })
    }

    /// Plain-text file, one phrase per line; blank lines and `#` comments skipped.
    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let content = fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let terms: Vec<&str> = content
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Lexicon::new(&terms)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// True when some phrase occurs in `text` as a whole-token sequence.
    pub fn matches(&self, text: &str) -> bool {
        let tokens = tokenize(text);
        (0..tokens.len()).any(|i| {
            self.index.get(&tokens[i]).is_some_and(|phrases| {
                phrases
                    .iter()
                    .any(|p| tokens[i..].len() >= p.len() && tokens[i..i + p.len()] == p[..])
            })
        })
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::new(&DEFAULT_LEXICON).expect("default lexicon is valid")
    }
}

/// Lowercased maximal alphanumeric runs.
fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

/// Keeps documents whose text contains a lexicon phrase; order preserved.
pub fn filter_lexicon(docs: Vec<Document>, lexicon: &Lexicon) -> Vec<Document> {
    docs.into_iter().filter(|d| lexicon.matches(&d.text)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct WindowOutcome {
    pub kept: Vec<Document>,
    /// Ids of documents dropped because they carried no timestamp.
    pub missing_timestamp: Vec<String>,
}

/// Keeps documents dated in `[start, end)` and drops X reposts.
pub fn apply_window_and_repost_filter(
    docs: Vec<Document>,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<WindowOutcome, CorpusError> {
    if start >= end {
        return Err(CorpusError::BadWindow { start, end });
    }
    let mut out = WindowOutcome::default();
    for doc in docs {
        match doc.timestamp {
            None => out.missing_timestamp.push(doc.id),
            Some(t) if t >= start && t < end && doc.is_classifiable() => out.kept.push(doc),
            Some(_) => {}
        }
    }
    Ok(out)
}

pub fn default_window() -> (NaiveDate, NaiveDate) {
    (
        NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
        NaiveDate::from_ymd_opt(2025, 1, 1).unwrap(),
    )
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

static BLANK_LINES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n[ \t\r]*\n").unwrap());

// "MAYOR SMITH:", "Council Member Jones:", "Speaker 2:", "PUBLIC COMMENT -"
static SPEAKER_PREFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^[ \t]*[A-Z][A-Za-z0-9.'\- ]{0,48}?(?::|\s-)[ \t]").unwrap()
});

/// Splits articles into paragraphs and meeting transcripts into speaker turns.
///
/// Other units are returned as-is (single element). Children inherit
/// city, county, timestamp and flags, and carry `parent_id`.
pub fn segment(doc: &Document) -> Vec<Document> {
    let (pieces, unit, tag) = match doc.unit {
        Unit::Article => (split_blocks(&doc.text), Unit::Paragraph, 'p'),
        Unit::Meeting => (split_turns(&doc.text), Unit::CouncilComment, 'c'),
        _ => return vec![doc.clone()],
    };
    pieces
        .into_iter()
        .enumerate()
        .map(|(i, text)| Document {
            id: format!("{}-{}{}", doc.id, tag, i),
            source: doc.source,
            city: doc.city.clone(),
            county: doc.county.clone(),
            timestamp: doc.timestamp,
            text,
            unit,
            geolocated: doc.geolocated,
            is_repost: doc.is_repost,
            parent_id: Some(doc.id.clone()),
        })
        .collect()
}

fn split_blocks(text: &str) -> Vec<String> {
    BLANK_LINES
        .split(text)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn split_turns(text: &str) -> Vec<String> {
    let starts: Vec<usize> = SPEAKER_PREFIX.find_iter(text).map(|m| m.start()).collect();
    if starts.is_empty() {
        return split_blocks(text);
    }
    let mut turns = Vec::new();
    let head = text[..starts[0]].trim();
    if !head.is_empty() {
        turns.push(head.to_string());
    }
    for (i, &s) in starts.iter().enumerate() {
        let e = starts.get(i + 1).copied().unwrap_or(text.len());
        let turn = text[s..e].trim();
        if !turn.is_empty() {
            turns.push(turn.to_string());
        }
    }
    turns
}

/// Segments every article/meeting and keeps only lexicon-matching children;
/// other documents pass through the lexicon filter unchanged.
pub fn segment_and_filter(docs: Vec<Document>, lexicon: &Lexicon) -> Vec<Document> {
    docs.iter()
        .flat_map(segment)
        .filter(|d| lexicon.matches(&d.text))
        .collect()
}

/// Rebuilds parent texts from their children, in child order.
pub fn reassemble(children: &[Document]) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    for child in children {
        if let Some(parent) = &child.parent_id {
            let entry = out.entry(parent.clone()).or_default();
            if !entry.is_empty() {
                entry.push_str("\n\n");
            }
            entry.push_str(&child.text);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// County similarity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyFeatures {
    pub county: String,
    /// Racial fractionalization index.
    pub rfi: f64,
    pub population: f64,
    /// People below the poverty line, per 10k.
    pub rpp: f64,
    /// People with public assistance, per 10k.
    pub rpa: f64,
    /// Homelessness rate per 10k.
    pub homelessness: f64,
    pub gini: f64,
}

impl CountyFeatures {
    fn vector(&self) -> [f64; 6] {
        [
            self.rfi,
            self.population,
            self.rpp,
            self.rpa,
            self.homelessness,
            self.gini,
        ]
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.vector().iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite(self.county.clone()));
        }
        let rates_ok = [self.population, self.rpp, self.rpa, self.homelessness]
            .iter()
            .all(|v| *v >= 0.0);
        let fractions_ok = (0.0..=1.0).contains(&self.rfi) && (0.0..=1.0).contains(&self.gini);
        if !rates_ok || !fractions_ok {
            return Err(CorpusError::CountyTable(format!(
                "out-of-range feature for {:?}",
                self.county
            )));
        }
        Ok(())
    }
}

/// Reads a county CSV whose header matches the [`CountyFeatures`] fields.
pub fn load_county_features(path: &Path) -> Result<Vec<CountyFeatures>, CorpusError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CorpusError::CountyTable(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: CountyFeatures = row.map_err(|e| CorpusError::CountyTable(e.to_string()))?;
        row.validate()?;
        out.push(row);
    }
    Ok(out)
}

/// The ten study counties and their features.
pub fn appendix_counties() -> Vec<CountyFeatures> {
    let rows: [(&str, f64, f64, f64, f64, f64, f64); 10] = [
        ("San Francisco County, CA", 0.75, 851_036.0, 1032.0, 131.0, 98.0, 0.52),
        ("Multnomah County, OR", 0.56, 808_098.0, 1198.0, 237.0, 91.0, 0.47),
        ("Erie County, NY", 0.47, 951_232.0, 1342.0, 134.0, 60.0, 0.46),
        ("Baltimore County, MD", 0.63, 850_737.0, 997.0, 99.0, 7.0, 0.46),
        ("El Paso County, TX", 0.69, 863_832.0, 1919.0, 99.0, 11.0, 0.47),
        ("St. Joseph County, IN", 0.52, 272_388.0, 1378.0, 97.0, 8.0, 0.47),
        ("Winnebago County, IL", 0.57, 284_591.0, 1583.0, 134.0, 29.0, 0.45),
        ("Kalamazoo County, MI", 0.43, 261_426.0, 1297.0, 83.0, 25.0, 0.46),
        ("Lackawanna County, PA", 0.38, 215_672.0, 1252.0, 238.0, 8.0, 0.46),
        ("Washington County, AR", 0.60, 247_331.0, 1466.0, 80.0, 32.14, 0.48),
    ];
    rows.into_iter()
        .map(|(county, rfi, population, rpp, rpa, homelessness, gini)| CountyFeatures {
            county: county.to_string(),
            rfi,
            population,
            rpp,
            rpa,
            homelessness,
            gini,
        })
        .collect()
}

/// Finds the county whose name matches `key` by slug prefix, e.g.
/// `st-joseph` → "St. Joseph County, IN".
pub fn find_county<'a>(pool: &'a [CountyFeatures], key: &str) -> Option<&'a CountyFeatures> {
    let key = slug(key);
    pool.iter()
        .find(|c| slug(&c.county) == key)
        .or_else(|| pool.iter().find(|c| slug(&c.county).starts_with(&key)))
}

/// The `k` pool counties nearest to `target` by Euclidean distance over
/// z-scored features.
///
/// Means and standard deviations come from the pool. A feature with zero
/// variance in the pool contributes nothing. Ties break on county name.
pub fn select_similar_counties(
    target: &CountyFeatures,
    pool: &[CountyFeatures],
    k: usize,
) -> Result<Vec<String>, CorpusError> {
    if k > pool.len() {
        return Err(CorpusError::KTooLarge { k, pool: pool.len() });
    }
    for c in pool.iter().chain(std::iter::once(target)) {
        if c.vector().iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite(c.county.clone()));
        }
    }
    let n = pool.len() as f64;
    let mut mean = [0.0; 6];
    let mut sd = [0.0; 6];
    if !pool.is_empty() {
        for c in pool {
            for (m, v) in mean.iter_mut().zip(c.vector()) {
                *m += v / n;
            }
        }
        for c in pool {
            for ((s, m), v) in sd.iter_mut().zip(mean).zip(c.vector()) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in sd.iter_mut() {
            *s = s.sqrt();
        }
    }
    let z = |v: [f64; 6]| -> [f64; 6] {
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = if sd[i] > 0.0 { (v[i] - mean[i]) / sd[i] } else { 0.0 };
        }
        out
    };
    let t = z(target.vector());
    let mut scored: Vec<(f64, &str)> = pool
        .iter()
        .map(|c| {
            let p = z(c.vector());
            let d2: f64 = t.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
            (d2.sqrt(), c.county.as_str())
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, name)| name.to_string()).collect())
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct StatsKey {
    pub city: String,
    pub source: SourceKind,
    pub unit: Unit,
}

/// Document counts by (city, source, unit).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub cells: BTreeMap<StatsKey, usize>,
}

impl CorpusStats {
    pub fn get(&self, city: &str, source: SourceKind, unit: Unit) -> usize {
        self.cells
            .get(&StatsKey {
                city: city.to_string(),
                source,
                unit,
            })
            .copied()
            .unwrap_or(0)
    }

    /// Total over all cities for one (source, unit).
    pub fn total(&self, source: SourceKind, unit: Unit) -> usize {
        self.cells
            .iter()
            .filter(|(k, _)| k.source == source && k.unit == unit)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn grand_total(&self) -> usize {
        self.cells.values().sum()
    }

    pub fn cities(&self) -> Vec<String> {
        let mut cities: Vec<String> = self.cells.keys().map(|k| k.city.clone()).collect();
        cities.dedup();
        cities
    }

    /// Per-city total (all sources and units).
    pub fn city_total(&self, city: &str) -> usize {
        self.cells
            .iter()
            .filter(|(k, _)| k.city == city)
            .map(|(_, v)| v)
            .sum()
    }

    /// CSV with columns city, source, unit, count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("city,source,unit,count\n");
        for (k, v) in &self.cells {
            out.push_str(&format!("{},{},{},{}\n", csv_field(&k.city), k.source, k.unit.id(), v));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn corpus_stats(docs: &[Document]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for d in docs {
        *stats
            .cells
            .entry(StatsKey {
                city: d.city.clone(),
                source: d.source,
                unit: d.unit,
            })
            .or_default() += 1;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, source: SourceKind, text: &str) -> Document {
        Document {
            id: id.into(),
            source,
            city: "South Bend".into(),
            county: "St. Joseph County, IN".into(),
            timestamp: NaiveDate::from_ymd_opt(2020, 5, 1),
            text: text.into(),
            unit: default_unit(source),
            geolocated: false,
            is_repost: false,
            parent_id: None,
        }
    }

    #[test]
    fn ingest_empty() {
        let r = ingest_str("", SourceKind::Reddit, "South Bend");
        assert!(r.documents.is_empty());
        assert!(r.errors.is_empty());
    }

    #[test]
    fn ingest_synthesizes_distinct_ids_and_reports_bad_lines() {
        let content = [
            r#"{"text":"homeless shelter opens","timestamp":"2020-01-02"}"#,
            r#"{"text":"another post","timestamp":"2020-01-03","unit":"comment"}"#,
            r#"{"text":"third","timestamp":"2020-01-04T10:00:00Z"}"#,
            r#"not json"#,
            r#"{"text":"   "}"#,
            r#"{"text":"wrong","city":"Portland"}"#,
        ]
        .join("\n");
        let r = ingest_str(&content, SourceKind::Reddit, "South Bend");
        assert_eq!(r.documents.len(), 3);
        let ids: std::collections::BTreeSet<_> = r.documents.iter().map(|d| &d.id).collect();
        assert_eq!(ids.len(), 3);
        assert_eq!(r.documents[0].id, "reddit-south-bend-1");
        assert_eq!(r.documents[0].county, "St. Joseph County, IN");
        assert_eq!(r.documents[1].unit, Unit::Comment);
        assert_eq!(r.documents[2].timestamp, NaiveDate::from_ymd_opt(2020, 1, 4));
        let bad: Vec<_> = r.errors.iter().map(|e| e.line).collect();
        assert_eq!(bad, vec![4, 5, 6]);
    }

    #[test]
    fn ingest_rejects_duplicate_ids() {
        let content = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}";
        let r = ingest_str(content, SourceKind::News, "Buffalo");
        assert_eq!(r.documents.len(), 1);
        assert_eq!(r.errors.len(), 1);
    }

    #[test]
    fn ingest_missing_file_is_fatal() {
        assert!(matches!(
            ingest(Path::new("/nonexistent/file.jsonl"), SourceKind::X, "Buffalo"),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn lexicon_examples() {
        let lex = Lexicon::default();
        assert_eq!(lex.terms().len(), 11);
        assert!(lex.matches("The soup kitchen downtown is full"));
        assert!(!lex.matches("I did my homework at home"));
        assert!(lex.matches("HOMELESSNESS rose last year"));
        assert!(lex.matches("the housing\n  crisis deepens"));
        assert!(!lex.matches("soup-kitchens everywhere"));
        assert!(!lex.matches("homelessnesses"));
    }

    #[test]
    fn lexicon_rejects_duplicates_and_empty() {
        assert!(matches!(
            Lexicon::new(&["homeless", "Homeless"]),
            Err(CorpusError::DuplicatePhrase(_))
        ));
        assert!(matches!(Lexicon::new::<&str>(&[]), Err(CorpusError::EmptyLexicon)));
    }

    #[test]
    fn window_and_repost_rules() {
        let (start, end) = default_window();
        let mut old = doc("old", SourceKind::X, "homeless");
        old.timestamp = NaiveDate::from_ymd_opt(2014, 6, 1);
        let mut repost = doc("rt", SourceKind::X, "homeless");
        repost.is_repost = true;
        let mut reddit_repost = doc("r", SourceKind::Reddit, "homeless");
        reddit_repost.is_repost = true;
        let mut undated = doc("nodate", SourceKind::News, "homeless");
        undated.timestamp = None;
        let mut edge = doc("edge", SourceKind::News, "homeless");
        edge.timestamp = Some(end);
        let keep = doc("keep", SourceKind::X, "homeless");

        let out = apply_window_and_repost_filter(
            vec![old, repost, reddit_repost, undated, edge, keep],
            start,
            end,
        )
        .unwrap();
        let ids: Vec<_> = out.kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["r", "keep"]);
        assert_eq!(out.missing_timestamp, vec!["nodate".to_string()]);
        assert!(apply_window_and_repost_filter(vec![], end, start).is_err());
    }

    #[test]
    fn segment_article_paragraphs() {
        let mut a = doc("a1", SourceKind::News, "");
        a.text = "City budget talks continue.\n\nThe homeless shelter needs funds.\n \n\nWeather was mild.".into();
        let children = segment(&a);
        assert_eq!(children.len(), 3);
        assert!(children.iter().all(|c| c.parent_id.as_deref() == Some("a1")));
        assert!(children.iter().all(|c| c.unit == Unit::Paragraph));
        let kept = segment_and_filter(vec![a], &Lexicon::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "a1-p1");
    }

    #[test]
    fn segment_meeting_turns() {
        let mut m = doc("m1", SourceKind::Council, "");
        m.text = "MAYOR SMITH: Call to order.\nCOUNCIL MEMBER LEE: I move to fund the shelter.\nthat includes outreach.\nSpeaker 3: Second.\nPUBLIC COMMENT - The unhoused need help."
            .into();
        let children = segment(&m);
        assert_eq!(children.len(), 4);
        assert!(children.iter().all(|c| c.unit == Unit::CouncilComment));
        assert!(children[1].text.contains("outreach"));
    }

    #[test]
    fn segment_meeting_falls_back_to_blocks() {
        let mut m = doc("m2", SourceKind::Council, "");
        m.text = "opening remarks\n\nthe homeless count rose\n\nadjourned".into();
        assert_eq!(segment(&m).len(), 3);
    }

    #[test]
    fn segment_reassembles_parent_content() {
        let mut a = doc("a", SourceKind::News, "");
        a.text = "one two\n\n\nthree\n  \nfour five six".into();
        let children = segment(&a);
        let rebuilt = reassemble(&children);
        let squash = |s: &str| s.split_whitespace().collect::<String>();
        assert_eq!(squash(&rebuilt["a"]), squash(&a.text));
    }

    #[test]
    fn knn_self_is_nearest() {
        let pool = appendix_counties();
        for target in &pool {
            let nn = select_similar_counties(target, &pool, 1).unwrap();
            assert_eq!(nn, vec![target.county.clone()]);
        }
    }

    #[test]
    fn knn_errors_and_degenerate_features() {
        let pool = appendix_counties();
        assert!(matches!(
            select_similar_counties(&pool[0], &pool, 11),
            Err(CorpusError::KTooLarge { .. })
        ));
        let mut flat = pool.clone();
        for c in flat.iter_mut() {
            c.gini = 0.5;
        }
        let a = select_similar_counties(&flat[5], &flat, 4).unwrap();
        let mut no_gini = pool.clone();
        for c in no_gini.iter_mut() {
            c.gini = 0.3;
        }
        let b = select_similar_counties(&no_gini[5], &no_gini, 4).unwrap();
        assert_eq!(a, b);
        let mut bad = pool.clone();
        bad[2].rpp = f64::NAN;
        assert!(select_similar_counties(&pool[0], &bad, 3).is_err());
    }

    #[test]
    fn appendix_row_values() {
        let sf = find_county(&appendix_counties(), "san-francisco").cloned().unwrap();
        assert_eq!(sf.homelessness, 98.0);
        assert_eq!(sf.gini, 0.52);
        assert_eq!(
            find_county(&appendix_counties(), "st-joseph").unwrap().county,
            "St. Joseph County, IN"
        );
    }

    #[test]
    fn stats_empty_and_partition() {
        assert_eq!(corpus_stats(&[]).grand_total(), 0);
        let docs = vec![
            doc("1", SourceKind::Reddit, "a"),
            doc("2", SourceKind::Reddit, "b"),
            doc("3", SourceKind::X, "c"),
        ];
        let s = corpus_stats(&docs);
        assert_eq!(s.get("South Bend", SourceKind::Reddit, Unit::Post), 2);
        assert_eq!(s.grand_total(), 3);
        assert_eq!(s.city_total("South Bend"), 3);
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("St. Joseph County, IN"), "st-joseph-county-in");
        assert_eq!(slug("El Paso"), "el-paso");
    }
}
