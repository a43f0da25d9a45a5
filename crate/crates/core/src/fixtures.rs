//! Deterministic synthetic data: a corpus shaped like the published city
//! counts, a gold-standard stand-in, a simulated classifier, and the
//! small end-to-end smoke bundle.
//!
//! The published annotations are not redistributable here, so everything
//! below is generated. Nothing in it says anything about real documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::anonymizer::{AnonymizedDocument, Anonymizer};
use crate::classifier::backend::{ReplayBackend, ReplayRecord};
use crate::classifier::{build_prompt, Exemplar, PromptMode, PromptSpec};
use crate::corpus::{
    apply_window_and_repost_filter, default_roster, default_window, segment_and_filter, slug, Document, Lexicon, SourceKind, Unit,
};
use crate::goldstandard::{soft_label, write_gold, AnnotationRecord, GoldItem};
use crate::io::write_atomic;
use crate::reference::{CityCounts, CITY_COUNTS, GOLD_ITEMS};
use crate::taxonomy::{Category, LabelVector, NUM_CATEGORIES};

pub const INSTRUCTION_VERSION: &str = "pehlens-v1";
pub const ANNOTATORS: [&str; 3] = ["ann1", "ann2", "ann3"];

/// Bundled data shipped with the crate.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn rng_for(parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn county_of(city: &str) -> String {
    default_roster()
        .into_iter()
        .find(|c| c.city == city)
        .map(|c| c.county)
        .unwrap_or_default()
}

fn date(rng: &mut impl Rng) -> NaiveDate {
    NaiveDate::from_ymd_opt(rng.gen_range(2015..=2024), rng.gen_range(1..=12), rng.gen_range(1..=28)).unwrap()
}

const ON_TOPIC: [&str; 8] = [
    "The homeless camp by the bridge grew again.",
    "Rents keep climbing and the housing crisis is not easing.",
    "We need more affordable housing near transit.",
    "Outreach teams met unhoused residents downtown.",
    "The soup kitchen on Main ran out of food by noon.",
    "A panhandler at the off-ramp asked for change.",
    "Homelessness came up again at the budget hearing.",
    "Families facing housing insecurity wait months for help.",
];

// Contains none of the lexicon phrases.
const OFF_TOPIC: [&str; 6] = [
    "The parade route changes this year.",
    "Road repairs on the east side start Monday.",
    "The library extends its weekend hours.",
    "Minutes from the prior session were approved.",
    "A new bakery opened near the stadium.",
    "Council recessed for ten minutes.",
];

fn pick<'a>(rng: &mut impl Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

fn base_doc(id: String, source: SourceKind, city: &str, unit: Unit, text: String, rng: &mut impl Rng) -> Document {
    Document {
        id,
        source,
        city: city.to_string(),
        county: county_of(city),
        timestamp: Some(date(rng)),
        text,
        unit,
        geolocated: false,
        is_repost: false,
        parent_id: None,
    }
}

/// Splits `total` into `parts` near-equal shares.
fn spread(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

/// Raw documents for one city whose processed counts (window, repost and
/// lexicon filters, segmentation) reproduce `counts` exactly.
pub fn city_corpus(counts: &CityCounts, seed: u64) -> Vec<Document> {
    let city = counts.city;
    let cs = slug(city);
    let mut rng = rng_for(&["table2", city, &seed.to_string()]);
    let mut docs = Vec::new();

    let per_post = spread(counts.reddit_comments, counts.reddit_posts);
    for (p, n) in per_post.into_iter().enumerate() {
        let pid = format!("reddit-{cs}-{p:05}");
        let text = pick(&mut rng, &ON_TOPIC).to_string();
        docs.push(base_doc(pid.clone(), SourceKind::Reddit, city, Unit::Post, text, &mut rng));
        for c in 0..n {
            let text = pick(&mut rng, &ON_TOPIC).to_string();
            let mut d = base_doc(format!("{pid}-{c:03}"), SourceKind::Reddit, city, Unit::Comment, text, &mut rng);
            d.parent_id = Some(pid.clone());
            docs.push(d);
        }
    }

    let per_article = spread(counts.news_paragraphs, counts.news_articles);
    for (a, n) in per_article.into_iter().enumerate() {
        let mut paras: Vec<&str> = (0..n).map(|_| pick(&mut rng, &ON_TOPIC)).collect();
        if rng.gen_bool(0.5) {
            let at = rng.gen_range(0..=paras.len());
            paras.insert(at, pick(&mut rng, &OFF_TOPIC));
        }
        let text = paras.join("\n\n");
        docs.push(base_doc(format!("news-{cs}-{a:05}"), SourceKind::News, city, Unit::Article, text, &mut rng));
    }

    for i in 0..counts.x_posts {
        let text = pick(&mut rng, &ON_TOPIC).to_string();
        let mut d = base_doc(format!("x-{cs}-{i:05}"), SourceKind::X, city, Unit::Post, text, &mut rng);
        d.geolocated = i < counts.x_geolocated;
        if i >= counts.x_non_reposts {
            // alternately a repost, or an original dated before the window
            if i % 2 == 0 {
                d.is_repost = true;
            } else {
                d.timestamp = NaiveDate::from_ymd_opt(2014, 6, 1);
            }
        }
        docs.push(d);
    }

    if let (Some(meetings), Some(comments)) = (counts.meetings, counts.council_comments) {
        for (m, n) in spread(comments, meetings).into_iter().enumerate() {
            let mut turns: Vec<String> = (0..n)
                .map(|t| format!("Speaker {}: {}", t + 1, pick(&mut rng, &ON_TOPIC)))
                .collect();
            turns.push(format!("Clerk: {}", pick(&mut rng, &OFF_TOPIC)));
            let text = turns.join("\n");
            docs.push(base_doc(format!("council-{cs}-{m:05}"), SourceKind::Council, city, Unit::Meeting, text, &mut rng));
        }
    }
    docs
}

/// All ten cities.
pub fn table2_corpus(seed: u64) -> Vec<Document> {
    CITY_COUNTS.iter().flat_map(|c| city_corpus(c, seed)).collect()
}

// ---------------------------------------------------------------- gold stand-in

/// Prevalence of each category in the synthetic truth, canonical order.
const PREVALENCE: [f64; NUM_CATEGORIES] = [
    0.14, 0.22, 0.12, 0.30, 0.10, 0.04, 0.05, 0.09, 0.05, 0.06, 0.08, 0.80, 0.16, 0.45, 0.07, 0.004,
];

/// Chance that one annotator flips a truth bit.
fn annotator_noise(c: Category) -> f64 {
    if c == Category::Racist {
        0.002
    } else {
        0.08
    }
}

fn phrase(c: Category) -> &'static str {
    match c {
        Category::MoneyAidAllocation => "All that money goes to programs that never reach anyone.",
        Category::GovernmentCritique => "The council has failed on this for years.",
        Category::SocietalCritique => "We as a society let people fall through the cracks.",
        Category::SolutionsInterventions => "More supportive housing and case workers would help.",
        Category::PersonalInteraction => "I talked with a man outside the library this morning.",
        Category::MediaPortrayal => "The local news only ever shows the worst cases.",
        Category::NotInMyBackyard => "Just do not put the shelter on our block.",
        Category::HarmfulGeneralization => "They are all on drugs anyway.",
        Category::DeservingUndeserving => "Some of them simply do not deserve help.",
        Category::AskGenuineQuestion => "Does anyone know when the warming center opens?",
        Category::AskRhetoricalQuestion => "Who would even want to walk there now?",
        Category::ProvideFactOrClaim => "The count rose by twelve percent last year.",
        Category::ProvideObservation => "There are more tents along the river lately.",
        Category::ExpressTheirOpinion => "I think we can do much better than this.",
        Category::ExpressOthersOpinions => "My neighbor says it is hopeless.",
        Category::Racist => "[slur directed at an ethnic group]",
    }
}

/// A document whose text carries one stock sentence per true category.
fn labelled_text(truth: LabelVector, rng: &mut impl Rng) -> String {
    let mut parts = vec![pick(rng, &ON_TOPIC)];
    parts.extend(truth.categories().map(phrase));
    parts.join(" ")
}

pub struct GoldFixture {
    /// Analysis units, one per gold item, sorted by id.
    pub documents: Vec<Document>,
    pub truth: BTreeMap<String, LabelVector>,
    pub annotations: Vec<AnnotationRecord>,
    pub gold: Vec<GoldItem>,
}

/// Items drawn per (city, source) cell: min(50, available), trimmed one at
/// a time from the fullest cells until the published total is reached.
pub fn gold_cell_sizes() -> Vec<(&'static str, SourceKind, usize)> {
    let mut cells: Vec<(&str, SourceKind, usize)> = CITY_COUNTS
        .iter()
        .flat_map(|c| SourceKind::ALL.map(|s| (c.city, s, c.units(s).min(50))))
        .collect();
    let mut total: usize = cells.iter().map(|c| c.2).sum();
    let mut i = 0;
    while total > GOLD_ITEMS {
        let idx = i % cells.len();
        if cells[idx].2 == 50 {
            cells[idx].2 -= 1;
            total -= 1;
        }
        i += 1;
    }
    cells
}

pub fn gold_fixture(seed: u64) -> GoldFixture {
    let mut documents = Vec::new();
    let mut truth = BTreeMap::new();
    let mut annotations = Vec::new();
    for (city, source, n) in gold_cell_sizes() {
        for i in 0..n {
            let id = format!("gold-{}-{}-{i:02}", slug(city), source.id());
            let mut rng = rng_for(&["gold", &id, &seed.to_string()]);
            let mut t = LabelVector::EMPTY;
            for c in Category::ALL {
                t.set(c, rng.gen_bool(PREVALENCE[c.index()]));
            }
            let unit = match source {
                SourceKind::Reddit => Unit::Comment,
                SourceKind::News => Unit::Paragraph,
                SourceKind::X => Unit::Post,
                SourceKind::Council => Unit::CouncilComment,
            };
            let text = labelled_text(t, &mut rng);
            documents.push(base_doc(id.clone(), source, city, unit, text, &mut rng));
            for a in ANNOTATORS {
                let mut v = t;
                for c in Category::ALL {
                    if rng.gen_bool(annotator_noise(c)) {
                        v.set(c, !v.get(c));
                    }
                }
                annotations.push(AnnotationRecord {
                    annotator_id: a.to_string(),
                    doc_id: id.clone(),
                    labels: v,
                    annotated_at: None,
                });
            }
            truth.insert(id, t);
        }
    }
    documents.sort_by(|a, b| a.id.cmp(&b.id));
    let gold = soft_label(&annotations).expect("synthetic annotations are unique").items;
    GoldFixture {
        documents,
        truth,
        annotations,
        gold,
    }
}

/// Five exemplars spanning all four sources, taken from the gold items.
pub fn exemplars_from(docs: &[Document], gold: &[GoldItem]) -> Vec<Exemplar> {
    let consensus: BTreeMap<&str, LabelVector> = gold.iter().map(|g| (g.doc_id.as_str(), g.consensus)).collect();
    let order = [SourceKind::Reddit, SourceKind::X, SourceKind::News, SourceKind::Council, SourceKind::Reddit];
    let mut used = Vec::new();
    let mut out = Vec::new();
    for s in order {
        if let Some(d) = docs
            .iter()
            .find(|d| d.source == s && !used.contains(&d.id) && consensus.contains_key(d.id.as_str()))
        {
            used.push(d.id.clone());
            out.push(Exemplar {
                doc_id: d.id.clone(),
                source: d.source,
                text: d.text.clone(),
                labels: consensus[d.id.as_str()],
            });
        }
    }
    out
}

// ---------------------------------------------------------------- simulated model

/// A fake model: the truth vector with each bit flipped at `error_rate`,
/// seeded by (model, mode, doc).
pub fn simulated_labels(truth: LabelVector, model_id: &str, mode: PromptMode, doc_id: &str, error_rate: f64) -> LabelVector {
    let mut rng = rng_for(&["labels", model_id, mode.id(), doc_id]);
    let mut v = truth;
    for c in Category::ALL {
        if rng.gen_bool(error_rate) {
            v.set(c, !v.get(c));
        }
    }
    v
}

/// Renders labels the way a chat model might: mostly the requested JSON,
/// sometimes a prose list, occasionally something unusable.
pub fn simulated_response(labels: LabelVector, model_id: &str, mode: PromptMode, doc_id: &str) -> String {
    let mut rng = rng_for(&["format", model_id, mode.id(), doc_id]);
    let roll: f64 = rng.gen();
    if roll < 0.90 {
        labels.to_json_object()
    } else if roll < 0.97 {
        let names: Vec<&str> = labels.categories().map(|c| c.display_name()).collect();
        if names.is_empty() {
            "Labels: none".to_string()
        } else {
            format!("Sure.\nLabels: {}", names.join(", "))
        }
    } else {
        "I'm not able to classify this text.".to_string()
    }
}

/// Replay records for every document under one (model, mode).
pub fn record_replay(
    docs: &[AnonymizedDocument],
    spec: &PromptSpec,
    truth: &BTreeMap<String, LabelVector>,
    model_id: &str,
    error_rate: f64,
) -> Vec<ReplayRecord> {
    docs.iter()
        .map(|d| {
            let t = truth.get(&d.doc_id).copied().unwrap_or_default();
            let labels = simulated_labels(t, model_id, spec.mode, &d.doc_id, error_rate);
            let response = simulated_response(labels, model_id, spec.mode, &d.doc_id);
            ReplayBackend::record(&build_prompt(d, spec), response)
        })
        .collect()
}

/// (model_id, per-bit error rate) for the simulated leaderboard.
pub const SIMULATED_MODELS: [(&str, f64); 3] = [("sim-large", 0.04), ("sim-medium", 0.08), ("sim-small", 0.15)];

pub fn prompt_spec(mode: PromptMode, exemplars: &[Exemplar]) -> PromptSpec {
    match mode {
        PromptMode::ZeroShot => PromptSpec::zero_shot(INSTRUCTION_VERSION),
        PromptMode::FewShot => PromptSpec::few_shot(INSTRUCTION_VERSION, exemplars.to_vec()),
    }
}

// ---------------------------------------------------------------- smoke bundle

pub const SMOKE_CITIES: [&str; 4] = ["South Bend", "Rockford", "Portland", "San Francisco"];

const SMOKE_NAMES: [&str; 6] = ["Maria Lopez", "James Carter", "Linda Nguyen", "Robert Hill", "Susan Park", "David Moore"];

/// One raw record file's worth of smoke documents.
#[derive(Debug, Clone)]
pub struct SmokeFile {
    pub source: SourceKind,
    pub city: &'static str,
    pub documents: Vec<Document>,
}

/// Forty raw documents (ten per source) containing names, emails, phones
/// and URLs, with the truth labels for their analysis units.
pub fn smoke_corpus(seed: u64) -> (Vec<SmokeFile>, BTreeMap<String, LabelVector>) {
    let mut files = Vec::new();
    let mut truth = BTreeMap::new();
    for source in SourceKind::ALL {
        for (ci, city) in SMOKE_CITIES.iter().enumerate() {
            let per_city = if ci < 2 { 3 } else { 2 };
            let mut documents = Vec::new();
            for i in 0..per_city {
                let raw_id = format!("smoke-{}-{}-{i}", source.id(), slug(city));
                let mut rng = rng_for(&["smoke", &raw_id, &seed.to_string()]);
                let mut t = LabelVector::EMPTY;
                for c in Category::ALL {
                    let mut p = PREVALENCE[c.index()];
                    if c == Category::HarmfulGeneralization && source.is_social() {
                        p = 0.5;
                    }
                    t.set(c, rng.gen_bool(p));
                }
                let name = pick(&mut rng, &SMOKE_NAMES);
                let pii = match i % 3 {
                    0 => format!("{name} wrote in from {}@example.org.", name.split(' ').next().unwrap().to_lowercase()),
                    1 => format!("Call {name} at (574) 555-01{:02}.", rng.gen_range(0..100)),
                    _ => format!("{name} posted https://example.com/p/{}.", rng.gen_range(100..999)),
                };
                let body = format!("{} {pii}", labelled_text(t, &mut rng));
                let (unit, text, unit_id) = match source {
                    SourceKind::Reddit => (Unit::Comment, body, raw_id.clone()),
                    SourceKind::X => (Unit::Post, body, raw_id.clone()),
                    SourceKind::News => (Unit::Article, body, format!("{raw_id}-p0")),
                    SourceKind::Council => (Unit::Meeting, format!("Public Comment: {body}"), format!("{raw_id}-c0")),
                };
                let doc = base_doc(raw_id, source, city, unit, text, &mut rng);
                truth.insert(unit_id, t);
                documents.push(doc);
            }
            files.push(SmokeFile { source, city, documents });
        }
    }
    (files, truth)
}

/// Three annotator records per unit; one annotator disagrees on one bit.
pub fn smoke_annotations(truth: &BTreeMap<String, LabelVector>) -> Vec<AnnotationRecord> {
    let mut out = Vec::new();
    for (i, (id, t)) in truth.iter().enumerate() {
        for (a, ann) in ANNOTATORS.iter().enumerate() {
            let mut v = *t;
            if a == 2 {
                let c = Category::ALL[i % NUM_CATEGORIES];
                v.set(c, !v.get(c));
            }
            out.push(AnnotationRecord {
                annotator_id: ann.to_string(),
                doc_id: id.clone(),
                labels: v,
                annotated_at: None,
            });
        }
    }
    out
}

/// Smoke units after window filtering and segmentation, plus everything
/// derived from them.
pub struct SmokeRun {
    pub raw: Vec<SmokeFile>,
    pub units: Vec<Document>,
    pub anonymized: Vec<AnonymizedDocument>,
    pub truth: BTreeMap<String, LabelVector>,
    pub gold: Vec<GoldItem>,
    pub exemplars: Vec<Exemplar>,
}

pub fn smoke_run(seed: u64) -> SmokeRun {
    let (raw, truth) = smoke_corpus(seed);
    let docs: Vec<Document> = raw.iter().flat_map(|f| f.documents.clone()).collect();
    let (start, end) = default_window();
    let kept = apply_window_and_repost_filter(docs, start, end).expect("valid window").kept;
    let mut units = segment_and_filter(kept, &Lexicon::default());
    units.sort_by(|a, b| a.id.cmp(&b.id));
    let anonymizer = Anonymizer::default();
    let anonymized = units.iter().map(|d| anonymizer.mask(d).expect("rule NER is infallible")).collect();
    let gold = soft_label(&smoke_annotations(&truth)).expect("unique records").items;
    let g = gold_fixture(seed);
    SmokeRun {
        raw,
        units,
        anonymized,
        truth,
        gold,
        exemplars: exemplars_from(&g.documents, &g.gold),
    }
}

pub fn replay_file_name(model_id: &str, mode: PromptMode) -> String {
    format!("{model_id}__{}.jsonl", mode.id())
}

fn gold_bytes(items: &[GoldItem]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_gold(&mut buf, items).expect("in-memory write");
    buf
}

fn jsonl_bytes<T: serde::Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for i in items {
        serde_json::to_writer(&mut buf, i).expect("serializable");
        buf.push(b'\n');
    }
    buf
}

/// Every generated data file, keyed by path relative to [`data_dir`].
pub fn bundled_files(seed: u64) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let g = gold_fixture(seed);
    out.insert("gold/documents.jsonl".into(), jsonl_bytes(&g.documents));
    out.insert("gold/gold.csv".into(), gold_bytes(&g.gold));
    let exemplars = exemplars_from(&g.documents, &g.gold);
    let mut ex = serde_json::to_vec_pretty(&exemplars).expect("serializable");
    ex.push(b'\n');
    out.insert("gold/exemplars.json".into(), ex.clone());

    let run = smoke_run(seed);
    for f in &run.raw {
        out.insert(
            format!("smoke/raw/{}/{}.jsonl", f.source.id(), slug(f.city)),
            jsonl_bytes(&f.documents),
        );
    }
    out.insert("smoke/gold.csv".into(), gold_bytes(&run.gold));
    out.insert("smoke/exemplars.json".into(), ex);
    out.insert("smoke/pehlens.toml".into(), SMOKE_CONFIG.as_bytes().to_vec());
    for (model, err) in SIMULATED_MODELS {
        for mode in PromptMode::ALL {
            let spec = prompt_spec(mode, &run.exemplars);
            let recs = record_replay(&run.anonymized, &spec, &run.truth, model, err);
            out.insert(format!("smoke/replay/{}", replay_file_name(model, mode)), jsonl_bytes(&recs));
        }
    }
    out
}

pub const DATA_SEED: u64 = 20250101;

/// Run configuration for the smoke corpus. Paths are relative to the
/// smoke directory; the annotation sample takes every unit.
pub const SMOKE_CONFIG: &str = r#"seed = 20250101
per_cell = 1000
workers = 4

[paths]
corpus_dir = "raw"
work_dir = "work"
out_dir = "report"
exemplars = "exemplars.json"

[[models]]
model_id = "sim-large"
backend = "replay"
endpoint = "replay/sim-large__{mode}.jsonl"

[[models]]
model_id = "sim-medium"
backend = "replay"
endpoint = "replay/sim-medium__{mode}.jsonl"

[[models]]
model_id = "sim-small"
backend = "replay"
endpoint = "replay/sim-small__{mode}.jsonl"
"#;

/// Regenerates the bundled data under `root`.
pub fn write_bundled_data(root: &Path) -> std::io::Result<usize> {
    let files = bundled_files(DATA_SEED);
    for (p, body) in &files {
        write_atomic(&root.join(p), body)?;
    }
    Ok(files.len())
}
