//! Multi-label F1 accounting and cross-source aggregation.
//!
//! Scores are percentages (0 to 100) at full precision; rounding to two
//! decimals happens only at render time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ParseStatus, Prediction, PromptMode};
use crate::corpus::SourceKind;
use crate::goldstandard::GoldItem;
use crate::taxonomy::{Category, LabelVector, NUM_CATEGORIES};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("gold and prediction ids differ; only in gold: {only_gold:?}; only in predictions: {only_pred:?}")]
    IdMismatch {
        only_gold: Vec<String>,
        only_pred: Vec<String>,
    },
    #[error("failed predictions cannot be scored: {0:?}")]
    FailedPredictions(Vec<String>),
    #[error("duplicate doc_id {0}")]
    Duplicate(String),
    #[error("weighted average needs every source; missing {0:?}")]
    MissingSource(Vec<SourceKind>),
    #[error("weight for {0} must be positive")]
    Weight(SourceKind),
    #[error("reports mix models or modes")]
    Mixed,
    #[error("no source known for doc_id {0}")]
    UnknownDoc(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Counts {
    pub fn add(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// F1 as a fraction; 0 when the category never occurs in gold or
    /// predictions.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Per-category counts over a set of items. Usually all sixteen
/// categories; a subset narrows which ones enter the macro average.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub items: u64,
    pub categories: Vec<Category>,
    pub counts: Vec<Counts>,
}

impl ConfusionCounts {
    pub fn new(categories: &[Category]) -> Self {
        ConfusionCounts {
            items: 0,
            categories: categories.to_vec(),
            counts: vec![Counts::default(); categories.len()],
        }
    }

    pub fn from_pairs(categories: &[Category], pairs: &[(LabelVector, LabelVector)]) -> Self {
        let mut cc = Self::new(categories);
        for (g, p) in pairs {
            cc.add(*g, *p);
        }
        cc
    }

    pub fn add(&mut self, gold: LabelVector, pred: LabelVector) {
        self.items += 1;
        for (c, counts) in self.categories.iter().zip(self.counts.iter_mut()) {
            counts.add(gold.get(*c), pred.get(*c));
        }
    }

    pub fn get(&self, c: Category) -> Option<Counts> {
        self.categories.iter().position(|x| *x == c).map(|i| self.counts[i])
    }
}

/// Matches predictions to gold by doc_id and counts per category.
pub fn confusion(gold: &[GoldItem], preds: &[Prediction]) -> Result<ConfusionCounts, MetricsError> {
    let failed: Vec<String> = preds
        .iter()
        .filter(|p| p.parse_status == ParseStatus::Failed)
        .map(|p| p.doc_id.clone())
        .collect();
    if !failed.is_empty() {
        return Err(MetricsError::FailedPredictions(failed));
    }
    let mut by_id: HashMap<&str, LabelVector> = HashMap::new();
    for p in preds {
        if by_id.insert(&p.doc_id, p.labels).is_some() {
            return Err(MetricsError::Duplicate(p.doc_id.clone()));
        }
    }
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.doc_id.as_str()).collect();
    if gold_ids.len() != gold.len() {
        let mut seen = BTreeSet::new();
        let dup = gold.iter().find(|g| !seen.insert(&g.doc_id)).unwrap();
        return Err(MetricsError::Duplicate(dup.doc_id.clone()));
    }
    let pred_ids: BTreeSet<&str> = by_id.keys().copied().collect();
    if gold_ids != pred_ids {
        return Err(MetricsError::IdMismatch {
            only_gold: gold_ids.difference(&pred_ids).map(|s| s.to_string()).collect(),
            only_pred: pred_ids.difference(&gold_ids).map(|s| s.to_string()).collect(),
        });
    }
    let mut cc = ConfusionCounts::new(&Category::ALL);
    for g in gold {
        cc.add(g.consensus, by_id[g.doc_id.as_str()]);
    }
    Ok(cc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_category: Vec<(Category, f64)>,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

pub fn f1_scores(cc: &ConfusionCounts) -> F1Scores {
    let per_category: Vec<(Category, f64)> = cc
        .categories
        .iter()
        .zip(&cc.counts)
        .map(|(c, k)| (*c, 100.0 * k.f1()))
        .collect();
    let macro_f1 = if per_category.is_empty() {
        0.0
    } else {
        per_category.iter().map(|(_, f)| f).sum::<f64>() / per_category.len() as f64
    };
    let mut pooled = Counts::default();
    for k in &cc.counts {
        pooled.tp += k.tp;
        pooled.fp += k.fp;
        pooled.fn_ += k.fn_;
    }
    F1Scores {
        per_category,
        macro_f1,
        micro_f1: 100.0 * pooled.f1(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Source(SourceKind),
    Weighted,
}

impl Scope {
    pub fn id(self) -> &'static str {
        match self {
            Scope::Source(s) => s.id(),
            Scope::Weighted => "weighted",
        }
    }

    pub fn parse(s: &str) -> Option<Scope> {
        if s.eq_ignore_ascii_case("weighted") {
            Some(Scope::Weighted)
        } else {
            SourceKind::parse(s).map(Scope::Source)
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Scope::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown scope {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub mode: PromptMode,
    pub scope: Scope,
    pub items: u64,
    pub per_category_f1: [f64; NUM_CATEGORIES],
    pub macro_f1: f64,
    pub micro_f1: f64,
}

impl EvalReport {
    pub fn from_counts(model_id: &str, mode: PromptMode, scope: Scope, cc: &ConfusionCounts) -> Self {
        let s = f1_scores(cc);
        let mut per = [0.0; NUM_CATEGORIES];
        for (c, f) in &s.per_category {
            per[c.index()] = *f;
        }
        EvalReport {
            model_id: model_id.to_string(),
            mode,
            scope,
            items: cc.items,
            per_category_f1: per,
            macro_f1: s.macro_f1,
            micro_f1: s.micro_f1,
        }
    }
}

/// Why a gold item was left out of scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub doc_id: String,
    pub model_id: String,
    pub mode: PromptMode,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// One report per source present, in source order.
    pub reports: Vec<EvalReport>,
    pub excluded: Vec<ExclusionRecord>,
}

/// Scores one (model, mode) prediction set per source. Failed parses and
/// their gold items are dropped and listed in `excluded`.
pub fn evaluate_by_source(
    gold: &[GoldItem],
    preds: &[Prediction],
    source_of: &HashMap<String, SourceKind>,
) -> Result<Evaluation, MetricsError> {
    let Some(first) = preds.first() else {
        return Ok(Evaluation {
            reports: Vec::new(),
            excluded: Vec::new(),
        });
    };
    if preds
        .iter()
        .any(|p| p.model_id != first.model_id || p.mode != first.mode)
    {
        return Err(MetricsError::Mixed);
    }
    let excluded: Vec<ExclusionRecord> = preds
        .iter()
        .filter(|p| !p.is_scorable())
        .map(|p| ExclusionRecord {
            doc_id: p.doc_id.clone(),
            model_id: p.model_id.clone(),
            mode: p.mode,
            reason: "response could not be parsed".into(),
        })
        .collect();
    let dropped: BTreeSet<&str> = excluded.iter().map(|e| e.doc_id.as_str()).collect();

    let mut gold_by: BTreeMap<SourceKind, Vec<GoldItem>> = BTreeMap::new();
    for g in gold.iter().filter(|g| !dropped.contains(g.doc_id.as_str())) {
        let s = source_of
            .get(&g.doc_id)
            .ok_or_else(|| MetricsError::UnknownDoc(g.doc_id.clone()))?;
        gold_by.entry(*s).or_default().push(g.clone());
    }
    let mut pred_by: BTreeMap<SourceKind, Vec<Prediction>> = BTreeMap::new();
    for p in preds.iter().filter(|p| p.is_scorable()) {
        let s = source_of
            .get(&p.doc_id)
            .ok_or_else(|| MetricsError::UnknownDoc(p.doc_id.clone()))?;
        pred_by.entry(*s).or_default().push(p.clone());
    }
    let sources: BTreeSet<SourceKind> = gold_by.keys().chain(pred_by.keys()).copied().collect();
    let mut reports = Vec::new();
    for s in sources {
        let g = gold_by.remove(&s).unwrap_or_default();
        let p = pred_by.remove(&s).unwrap_or_default();
        let cc = confusion(&g, &p)?;
        reports.push(EvalReport::from_counts(&first.model_id, first.mode, Scope::Source(s), &cc));
    }
    Ok(Evaluation { reports, excluded })
}

/// Per-source weights for the cross-source average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceWeights(pub BTreeMap<SourceKind, f64>);

impl SourceWeights {
    pub fn equal() -> Self {
        SourceWeights(SourceKind::ALL.iter().map(|s| (*s, 1.0)).collect())
    }

    pub fn get(&self, s: SourceKind) -> Option<f64> {
        self.0.get(&s).copied()
    }
}

impl Default for SourceWeights {
    /// Full-corpus unit counts: Reddit comments, X non-reposts, news
    /// paragraphs and council comments.
    fn default() -> Self {
        SourceWeights(
            [
                (SourceKind::Reddit, 34447.0),
                (SourceKind::X, 4242.0),
                (SourceKind::News, 2577.0),
                (SourceKind::Council, 9181.0),
            ]
            .into_iter()
            .collect(),
        )
    }
}

/// Weighted arithmetic mean of per-category, macro and micro scores over
/// the four sources.
pub fn weighted_average(reports: &[EvalReport], weights: &SourceWeights) -> Result<EvalReport, MetricsError> {
    let mut by_source: BTreeMap<SourceKind, &EvalReport> = BTreeMap::new();
    for r in reports {
        if let Scope::Source(s) = r.scope {
            by_source.insert(s, r);
        }
    }
    let missing: Vec<SourceKind> = SourceKind::ALL
        .iter()
        .copied()
        .filter(|s| !by_source.contains_key(s))
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingSource(missing));
    }
    let first = by_source[&SourceKind::ALL[0]];
    if by_source
        .values()
        .any(|r| r.model_id != first.model_id || r.mode != first.mode)
    {
        return Err(MetricsError::Mixed);
    }
    let mut total = 0.0;
    let mut per = [0.0; NUM_CATEGORIES];
    let (mut macro_f1, mut micro_f1) = (0.0, 0.0);
    let mut items = 0;
    for (s, r) in &by_source {
        let w = weights.get(*s).filter(|w| *w > 0.0).ok_or(MetricsError::Weight(*s))?;
        total += w;
        macro_f1 += w * r.macro_f1;
        micro_f1 += w * r.micro_f1;
        for (acc, f) in per.iter_mut().zip(r.per_category_f1) {
            *acc += w * f;
        }
        items += r.items;
    }
    Ok(EvalReport {
        model_id: first.model_id.clone(),
        mode: first.mode,
        scope: Scope::Weighted,
        items,
        per_category_f1: per.map(|x| x / total),
        macro_f1: macro_f1 / total,
        micro_f1: micro_f1 / total,
    })
}

/// Weighted mean of plain numbers, for checking published aggregates.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub model_id: String,
    /// Mode with the better weighted macro-F1.
    pub mode: PromptMode,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// Ranks models by their best weighted macro-F1 across prompt modes. Ties
/// go to the higher micro-F1, then the smaller model_id.
pub fn leaderboard(reports: &[EvalReport]) -> Vec<LeaderboardEntry> {
    let better = |a: &EvalReport, b: &EvalReport| {
        a.macro_f1
            .total_cmp(&b.macro_f1)
            .then(a.micro_f1.total_cmp(&b.micro_f1))
            .then(b.mode.cmp(&a.mode))
    };
    let mut best: BTreeMap<&str, &EvalReport> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.scope == Scope::Weighted) {
        match best.get(r.model_id.as_str()) {
            Some(cur) if better(cur, r).is_ge() => {}
            _ => {
                best.insert(&r.model_id, r);
            }
        }
    }
    let mut rows: Vec<&EvalReport> = best.into_values().collect();
    rows.sort_by(|a, b| {
        b.macro_f1
            .total_cmp(&a.macro_f1)
            .then(b.micro_f1.total_cmp(&a.micro_f1))
            .then(a.model_id.cmp(&b.model_id))
    });
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| LeaderboardEntry {
            rank: i + 1,
            model_id: r.model_id.clone(),
            mode: r.mode,
            macro_f1: r.macro_f1,
            micro_f1: r.micro_f1,
        })
        .collect()
}
