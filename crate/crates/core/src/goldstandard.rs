//! Gold standard construction: stratified sampling, annotation sheets,
//! soft labels and inter-annotator agreement.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, SourceKind};
use crate::taxonomy::{Category, LabelVector, NUM_CATEGORIES};

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("per_cell must be at least 1")]
    PerCell,
    #[error("duplicate annotation by {annotator_id} for {doc_id}")]
    DuplicateRecord { annotator_id: String, doc_id: String },
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("gold file row {row}: {message}")]
    GoldRow { row: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub doc_id: String,
    pub labels: LabelVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldItem {
    pub doc_id: String,
    pub consensus: LabelVector,
    pub support: [u32; NUM_CATEGORIES],
    pub n_annotators: u32,
}

/// Smallest affirmative count that forms a strict majority of `n`.
/// Ties under even `n` fall short and resolve to false.
pub fn majority_threshold(n: u32) -> u32 {
    n / 2 + 1
}

// ---------------------------------------------------------------- sampling

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellReport {
    pub city: String,
    pub source: SourceKind,
    pub available: usize,
    pub drawn: usize,
    /// True when the cell had no documents at all.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub seed: u64,
    pub per_cell: usize,
    /// Grouped by cell in (city, source) order, sorted within a cell.
    pub doc_ids: Vec<String>,
    pub cells: Vec<CellReport>,
}

/// Draws up to `per_cell` analysis units per (city, source) cell, uniformly
/// without replacement. `cities` lists the cells to report even when empty;
/// cities seen in `docs` but not listed are sampled too.
pub fn stratified_sample(
    docs: &[Document],
    cities: &[String],
    per_cell: usize,
    seed: u64,
) -> Result<Sample, GoldError> {
    if per_cell == 0 {
        return Err(GoldError::PerCell);
    }
    let mut cells: BTreeMap<(String, SourceKind), Vec<&str>> = BTreeMap::new();
    for city in cities {
        for source in SourceKind::ALL {
            cells.entry((city.clone(), source)).or_default();
        }
    }
    for d in docs.iter().filter(|d| d.is_analysis_unit()) {
        cells
            .entry((d.city.clone(), d.source))
            .or_default()
            .push(&d.id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut doc_ids = Vec::new();
    let mut reports = Vec::new();
    for ((city, source), mut ids) in cells {
        ids.sort_unstable();
        ids.dedup();
        let mut drawn: Vec<&str> = ids.choose_multiple(&mut rng, per_cell).copied().collect();
        drawn.sort_unstable();
        reports.push(CellReport {
            city,
            source,
            available: ids.len(),
            drawn: drawn.len(),
            empty: ids.is_empty(),
        });
        doc_ids.extend(drawn.into_iter().map(String::from));
    }
    Ok(Sample {
        seed,
        per_cell,
        doc_ids,
        cells: reports,
    })
}

// ---------------------------------------------------------------- soft labels

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftLabelOutcome {
    /// Sorted by doc_id.
    pub items: Vec<GoldItem>,
    pub excluded: Vec<AuditEntry>,
}

fn group_by_doc(
    records: &[AnnotationRecord],
) -> Result<BTreeMap<&str, Vec<&AnnotationRecord>>, GoldError> {
    let mut seen = BTreeSet::new();
    let mut groups: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        if !seen.insert((r.annotator_id.as_str(), r.doc_id.as_str())) {
            return Err(GoldError::DuplicateRecord {
                annotator_id: r.annotator_id.clone(),
                doc_id: r.doc_id.clone(),
            });
        }
        groups.entry(&r.doc_id).or_default().push(r);
    }
    Ok(groups)
}

pub fn soft_label(records: &[AnnotationRecord]) -> Result<SoftLabelOutcome, GoldError> {
    let mut items = Vec::new();
    let mut excluded = Vec::new();
    for (doc_id, group) in group_by_doc(records)? {
        let n = group.len() as u32;
        if n < 2 {
            excluded.push(AuditEntry {
                doc_id: doc_id.to_string(),
                reason: format!("only {n} annotation; at least 2 required"),
            });
            continue;
        }
        let mut support = [0u32; NUM_CATEGORIES];
        for r in &group {
            for c in r.labels.categories() {
                support[c.index()] += 1;
            }
        }
        let threshold = majority_threshold(n);
        let mut consensus = LabelVector::EMPTY;
        for c in Category::ALL {
            consensus.set(c, support[c.index()] >= threshold);
        }
        items.push(GoldItem {
            doc_id: doc_id.to_string(),
            consensus,
            support,
            n_annotators: n,
        });
    }
    Ok(SoftLabelOutcome { items, excluded })
}

// ---------------------------------------------------------------- agreement

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Items with at least two annotations.
    pub items: usize,
    /// Mean pairwise agreement per category, as a fraction.
    pub pairwise: [f64; NUM_CATEGORIES],
    pub pairwise_mean: f64,
    /// Share of items where every annotator gave the same answer.
    pub unanimous: [f64; NUM_CATEGORIES],
    pub unanimous_mean: f64,
}

pub fn agreement(records: &[AnnotationRecord]) -> Result<AgreementReport, GoldError> {
    let mut pair_sum = [0f64; NUM_CATEGORIES];
    let mut unanimous = [0usize; NUM_CATEGORIES];
    let mut items = 0usize;
    for group in group_by_doc(records)?.values() {
        let n = group.len();
        if n < 2 {
            continue;
        }
        items += 1;
        let pairs = (n * (n - 1) / 2) as f64;
        for c in Category::ALL {
            let yes = group.iter().filter(|r| r.labels.get(c)).count();
            let no = n - yes;
            let agree = yes * yes.saturating_sub(1) / 2 + no * no.saturating_sub(1) / 2;
            pair_sum[c.index()] += agree as f64 / pairs;
            if yes == 0 || no == 0 {
                unanimous[c.index()] += 1;
            }
        }
    }
    let denom = items.max(1) as f64;
    let pairwise = pair_sum.map(|s| if items == 0 { 0.0 } else { s / denom });
    let unanimous = unanimous.map(|u| if items == 0 { 0.0 } else { u as f64 / denom });
    Ok(AgreementReport {
        items,
        pairwise_mean: pairwise.iter().sum::<f64>() / NUM_CATEGORIES as f64,
        pairwise,
        unanimous_mean: unanimous.iter().sum::<f64>() / NUM_CATEGORIES as f64,
        unanimous,
    })
}

// ---------------------------------------------------------------- sheets

/// One row of an annotation sheet. Unlabeled rows export with empty
/// category cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SheetRow {
    pub doc_id: String,
    pub text: String,
    pub labels: Option<LabelVector>,
    pub annotated_at: Option<DateTime<Utc>>,
}

pub const SHEET_TIME_COLUMN: &str = "annotated_at";

pub fn sheet_header() -> Vec<String> {
    let mut h = vec!["doc_id".to_string(), "text".to_string()];
    h.extend(Category::ALL.iter().map(|c| c.id().to_string()));
    h.push(SHEET_TIME_COLUMN.to_string());
    h
}

pub fn write_sheet<W: Write>(w: W, rows: &[SheetRow]) -> Result<(), GoldError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(sheet_header())?;
    for r in rows {
        let mut rec = vec![r.doc_id.clone(), r.text.clone()];
        match r.labels {
            Some(v) => rec.extend(v.to_bools().iter().map(|b| if *b { "1" } else { "0" }.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), NUM_CATEGORIES)),
        }
        rec.push(r.annotated_at.map(|t| t.to_rfc3339()).unwrap_or_default());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_sheet(path: &Path, rows: &[SheetRow]) -> Result<(), GoldError> {
    let mut buf = Vec::new();
    write_sheet(&mut buf, rows)?;
    crate::io::write_atomic(path, &buf)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetIssue {
    /// 1-based line in the file; `None` for file-level problems.
    pub line: Option<usize>,
    pub column: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("annotation sheet has {} problem(s)", issues.len())]
pub struct SheetValidation {
    pub issues: Vec<SheetIssue>,
}

fn parse_cell(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "x" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Reads one annotator's sheet. Every problem is collected; records are
/// returned only when there are none.
pub fn read_sheet<R: Read>(
    r: R,
    annotator_id: &str,
    roster: &[String],
) -> Result<Vec<AnnotationRecord>, SheetValidation> {
    let mut issues = Vec::new();
    let file_issue = |m: String| SheetIssue {
        line: None,
        column: None,
        message: m,
    };
    if !roster.iter().any(|a| a == annotator_id) {
        issues.push(file_issue(format!("annotator {annotator_id:?} is not on the roster")));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => {
            issues.push(file_issue(format!("unreadable header: {e}")));
            return Err(SheetValidation { issues });
        }
    };
    let col = |name: &str| header.iter().position(|h| h == name);
    let doc_col = col("doc_id");
    if doc_col.is_none() {
        issues.push(SheetIssue {
            line: Some(1),
            column: Some("doc_id".into()),
            message: "missing column".into(),
        });
    }
    let mut cat_cols = Vec::new();
    for c in Category::ALL {
        match col(c.id()) {
            Some(i) => cat_cols.push((c, i)),
            None => issues.push(SheetIssue {
                line: Some(1),
                column: Some(c.id().into()),
                message: "missing column".into(),
            }),
        }
    }
    let time_col = col(SHEET_TIME_COLUMN);
    if !issues.is_empty() {
        return Err(SheetValidation { issues });
    }
    let doc_col = doc_col.unwrap();

    let mut records = Vec::new();
    let mut seen = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                issues.push(SheetIssue {
                    line: Some(line),
                    column: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let doc_id = row.get(doc_col).unwrap_or("").trim().to_string();
        if doc_id.is_empty() {
            issues.push(SheetIssue {
                line: Some(line),
                column: Some("doc_id".into()),
                message: "empty doc_id".into(),
            });
            continue;
        }
        if let Some(first) = seen.insert(doc_id.clone(), line) {
            issues.push(SheetIssue {
                line: Some(line),
                column: Some("doc_id".into()),
                message: format!("{doc_id} already appears on line {first}"),
            });
            continue;
        }
        let mut labels = LabelVector::EMPTY;
        let mut ok = true;
        for (c, idx) in &cat_cols {
            let cell = row.get(*idx).unwrap_or("");
            match parse_cell(cell) {
                Some(b) => labels.set(*c, b),
                None => {
                    ok = false;
                    issues.push(SheetIssue {
                        line: Some(line),
                        column: Some(c.id().into()),
                        message: if cell.trim().is_empty() {
                            "blank label cell".into()
                        } else {
                            format!("not a boolean: {cell:?}")
                        },
                    });
                }
            }
        }
        let annotated_at = match time_col.and_then(|i| row.get(i)).map(str::trim) {
            None | Some("") => None,
            Some(t) => match DateTime::parse_from_rfc3339(t) {
                Ok(t) => Some(t.with_timezone(&Utc)),
                Err(_) => {
                    ok = false;
                    issues.push(SheetIssue {
                        line: Some(line),
                        column: Some(SHEET_TIME_COLUMN.into()),
                        message: format!("not an RFC 3339 timestamp: {t:?}"),
                    });
                    None
                }
            },
        };
        if ok {
            records.push(AnnotationRecord {
                annotator_id: annotator_id.to_string(),
                doc_id,
                labels,
                annotated_at,
            });
        }
    }
    if issues.is_empty() {
        Ok(records)
    } else {
        Err(SheetValidation { issues })
    }
}

/// Reads `<annotator_id>.csv`; the file stem names the annotator.
pub fn import_sheet(path: &Path, roster: &[String]) -> Result<Vec<AnnotationRecord>, SheetValidation> {
    let annotator = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path).map_err(|e| SheetValidation {
        issues: vec![SheetIssue {
            line: None,
            column: None,
            message: format!("{}: {e}", path.display()),
        }],
    })?;
    read_sheet(file, &annotator, roster)
}

// ---------------------------------------------------------------- gold file

pub fn gold_header() -> Vec<String> {
    let mut h = vec!["doc_id".to_string()];
    h.extend(Category::ALL.iter().map(|c| c.id().to_string()));
    h.extend(Category::ALL.iter().map(|c| format!("{}_support", c.id())));
    h.push("n_annotators".to_string());
    h
}

pub fn write_gold<W: Write>(w: W, items: &[GoldItem]) -> Result<(), GoldError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(gold_header())?;
    for item in items {
        let mut rec = vec![item.doc_id.clone()];
        rec.extend(item.consensus.to_bools().iter().map(|b| (*b as u8).to_string()));
        rec.extend(item.support.iter().map(u32::to_string));
        rec.push(item.n_annotators.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_gold(path: &Path, items: &[GoldItem]) -> Result<(), GoldError> {
    let mut buf = Vec::new();
    write_gold(&mut buf, items)?;
    crate::io::write_atomic(path, &buf)?;
    Ok(())
}

/// Parses a gold CSV and checks every row against the majority rule.
pub fn read_gold<R: Read>(r: R) -> Result<Vec<GoldItem>, GoldError> {
    let mut reader = csv::Reader::from_reader(r);
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let expected = gold_header();
    if header != expected {
        let missing: Vec<_> = expected.iter().filter(|h| !header.contains(h)).cloned().collect();
        return Err(GoldError::GoldRow {
            row: 1,
            message: format!("unexpected header; missing {missing:?}"),
        });
    }
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let err = |message: String| GoldError::GoldRow { row, message };
        let num = |j: usize| -> Result<u32, GoldError> {
            rec[j].trim().parse::<u32>().map_err(|_| err(format!("column {}: not a count", expected[j])))
        };
        let doc_id = rec[0].trim().to_string();
        if doc_id.is_empty() || !ids.insert(doc_id.clone()) {
            return Err(err(format!("empty or duplicate doc_id {doc_id:?}")));
        }
        let mut consensus = LabelVector::EMPTY;
        let mut support = [0u32; NUM_CATEGORIES];
        let n = num(1 + 2 * NUM_CATEGORIES)?;
        for c in Category::ALL {
            let bit = num(1 + c.index())?;
            if bit > 1 {
                return Err(err(format!("{}: consensus must be 0 or 1", c.id())));
            }
            consensus.set(c, bit == 1);
            let s = num(1 + NUM_CATEGORIES + c.index())?;
            if s > n {
                return Err(err(format!("{}_support {s} exceeds n_annotators {n}", c.id())));
            }
            if (s >= majority_threshold(n)) != (bit == 1) {
                return Err(err(format!("{}: consensus disagrees with support {s}/{n}", c.id())));
            }
            support[c.index()] = s;
        }
        items.push(GoldItem {
            doc_id,
            consensus,
            support,
            n_annotators: n,
        });
    }
    Ok(items)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldItem>, GoldError> {
    let file = std::fs::File::open(path).map_err(|e| GoldError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    read_gold(file).map_err(|e| GoldError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Unit;
    use proptest::prelude::*;

    fn rec(annotator: &str, doc: &str, labels: LabelVector) -> AnnotationRecord {
        AnnotationRecord {
            annotator_id: annotator.into(),
            doc_id: doc.into(),
            labels,
            annotated_at: None,
        }
    }

    fn doc(id: &str, city: &str, source: SourceKind) -> Document {
        let unit = match source {
            SourceKind::Reddit => Unit::Comment,
            SourceKind::News => Unit::Paragraph,
            SourceKind::X => Unit::Post,
            SourceKind::Council => Unit::CouncilComment,
        };
        Document {
            id: id.into(),
            source,
            city: city.into(),
            county: String::new(),
            timestamp: None,
            text: "homeless".into(),
            unit,
            geolocated: false,
            is_repost: false,
            parent_id: None,
        }
    }

    #[test]
    fn threshold_is_strict_majority() {
        assert_eq!(majority_threshold(2), 2);
        assert_eq!(majority_threshold(3), 2);
        assert_eq!(majority_threshold(4), 3);
        assert_eq!(majority_threshold(5), 3);
        for n in 1..20u32 {
            assert_eq!(majority_threshold(n), (n + 2) / 2); // ceil((n+1)/2)
        }
    }

    #[test]
    fn three_annotator_votes() {
        let r = Category::Racist;
        let v = |b: bool| if b { LabelVector::EMPTY.with(r) } else { LabelVector::EMPTY };
        for (votes, expected) in [
            ([true, true, false], true),
            ([false, false, false], false),
            ([true, false, false], false),
        ] {
            let recs: Vec<_> = votes
                .iter()
                .enumerate()
                .map(|(i, b)| rec(&format!("a{i}"), "d", v(*b)))
                .collect();
            let out = soft_label(&recs).unwrap();
            assert_eq!(out.items[0].consensus.get(r), expected);
        }
    }

    #[test]
    fn single_record_groups_are_audited() {
        let out = soft_label(&[rec("a", "d1", LabelVector::FULL)]).unwrap();
        assert!(out.items.is_empty());
        assert_eq!(out.excluded.len(), 1);
        assert_eq!(out.excluded[0].doc_id, "d1");
    }

    #[test]
    fn duplicate_records_rejected() {
        let recs = [rec("a", "d", LabelVector::EMPTY), rec("a", "d", LabelVector::FULL)];
        assert!(matches!(soft_label(&recs), Err(GoldError::DuplicateRecord { .. })));
    }

    #[test]
    fn pairwise_agreement_examples() {
        let r = Category::Racist;
        let recs = [
            rec("a", "d", LabelVector::EMPTY.with(r)),
            rec("b", "d", LabelVector::EMPTY.with(r)),
            rec("c", "d", LabelVector::EMPTY),
        ];
        let a = agreement(&recs).unwrap();
        // pairs ab agree, ac and bc disagree
        assert!((a.pairwise[r.index()] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.unanimous[r.index()], 0.0);
        assert_eq!(a.pairwise[Category::MediaPortrayal.index()], 1.0);

        let recs: Vec<_> = (0..5)
            .flat_map(|i| {
                let d = format!("d{i}");
                [rec("a", &d, LabelVector::EMPTY.with(r)), rec("b", &d, LabelVector::EMPTY)]
            })
            .collect();
        let a = agreement(&recs).unwrap();
        assert_eq!(a.pairwise[r.index()], 0.0);
        assert_eq!(a.pairwise_mean, 15.0 / 16.0);
    }

    #[test]
    fn sampler_caps_and_flags() {
        let mut docs: Vec<_> = (0..30)
            .map(|i| doc(&format!("r{i}"), "A", SourceKind::Reddit))
            .collect();
        docs.extend((0..80).map(|i| doc(&format!("x{i:02}"), "A", SourceKind::X)));
        let s = stratified_sample(&docs, &["A".into()], 50, 7).unwrap();
        let cell = |src| s.cells.iter().find(|c| c.source == src).unwrap();
        assert_eq!(cell(SourceKind::Reddit).drawn, 30);
        assert_eq!(cell(SourceKind::X).drawn, 50);
        assert!(cell(SourceKind::News).empty);
        assert_eq!(cell(SourceKind::News).drawn, 0);
        assert_eq!(s.doc_ids.len(), 80);
        assert_eq!(s, stratified_sample(&docs, &["A".into()], 50, 7).unwrap());
        assert_ne!(s.doc_ids, stratified_sample(&docs, &["A".into()], 50, 8).unwrap().doc_ids);
        assert!(matches!(stratified_sample(&docs, &[], 0, 1), Err(GoldError::PerCell)));
    }

    #[test]
    fn sampler_skips_reposts_and_parents() {
        let mut repost = doc("x1", "A", SourceKind::X);
        repost.is_repost = true;
        let mut article = doc("n1", "A", SourceKind::News);
        article.unit = Unit::Article;
        let s = stratified_sample(&[repost, article], &[], 5, 0).unwrap();
        assert!(s.doc_ids.is_empty());
    }

    #[test]
    fn sheet_round_trip() {
        let t = DateTime::parse_from_rfc3339("2024-05-01T12:00:00Z").unwrap().with_timezone(&Utc);
        let rows = vec![
            SheetRow {
                doc_id: "d1".into(),
                text: "PERSON0 said, \"no\"\nsecond line".into(),
                labels: Some(LabelVector::from_bits(0x8001)),
                annotated_at: Some(t),
            },
            SheetRow {
                doc_id: "d2".into(),
                text: "plain".into(),
                labels: Some(LabelVector::EMPTY),
                annotated_at: None,
            },
        ];
        let mut buf = Vec::new();
        write_sheet(&mut buf, &rows).unwrap();
        let recs = read_sheet(buf.as_slice(), "ann1", &["ann1".into()]).unwrap();
        assert_eq!(
            recs,
            vec![
                AnnotationRecord {
                    annotator_id: "ann1".into(),
                    doc_id: "d1".into(),
                    labels: LabelVector::from_bits(0x8001),
                    annotated_at: Some(t),
                },
                rec("ann1", "d2", LabelVector::EMPTY),
            ]
        );
    }

    #[test]
    fn sheet_validation_is_itemized() {
        let rows = vec![SheetRow {
            doc_id: "d1".into(),
            text: "t".into(),
            labels: None,
            annotated_at: None,
        }];
        let mut buf = Vec::new();
        write_sheet(&mut buf, &rows).unwrap();
        let err = read_sheet(buf.as_slice(), "ann1", &["ann1".into()]).unwrap_err();
        assert_eq!(err.issues.len(), 16);
        assert_eq!(err.issues[0].line, Some(2));
        assert_eq!(err.issues[0].column.as_deref(), Some("money_aid_allocation"));
        assert_eq!(err.issues[0].message, "blank label cell");

        let err = read_sheet(buf.as_slice(), "stranger", &["ann1".into()]).unwrap_err();
        assert!(err.issues[0].message.contains("roster"));

        let err = read_sheet("doc_id,text,racist\nd,t,1\n".as_bytes(), "a", &["a".into()]).unwrap_err();
        assert_eq!(err.issues.len(), 15);
        assert!(err.issues.iter().all(|i| i.message == "missing column"));

        let mut bad = String::new();
        bad.push_str(&sheet_header().join(","));
        bad.push_str("\nd1,t");
        for _ in 0..15 {
            bad.push_str(",0");
        }
        bad.push_str(",maybe,\n");
        let err = read_sheet(bad.as_bytes(), "a", &["a".into()]).unwrap_err();
        assert_eq!(err.issues.len(), 1);
        assert_eq!(err.issues[0].column.as_deref(), Some("racist"));
    }

    #[test]
    fn gold_csv_round_trip_and_checks() {
        let recs = [
            rec("a", "d1", LabelVector::from_bits(0b0111)),
            rec("b", "d1", LabelVector::from_bits(0b0011)),
            rec("c", "d1", LabelVector::from_bits(0b0001)),
            rec("a", "d2", LabelVector::EMPTY),
            rec("b", "d2", LabelVector::FULL),
        ];
        let items = soft_label(&recs).unwrap().items;
        let mut buf = Vec::new();
        write_gold(&mut buf, &items).unwrap();
        assert_eq!(read_gold(buf.as_slice()).unwrap(), items);
        assert_eq!(items[0].consensus, LabelVector::from_bits(0b0011));
        assert_eq!(items[1].consensus, LabelVector::EMPTY);

        let text = String::from_utf8(buf).unwrap();
        let tampered = text.replacen("d1,1,1,0", "d1,1,1,1", 1);
        assert!(matches!(read_gold(tampered.as_bytes()), Err(GoldError::GoldRow { row: 2, .. })));
    }

    fn records_strategy() -> impl Strategy<Value = Vec<(u16, u16, u16)>> {
        proptest::collection::vec((any::<u16>(), any::<u16>(), any::<u16>()), 1..20)
    }

    proptest! {
        #[test]
        fn soft_label_permutation_invariant(rows in records_strategy()) {
            let build = |order: [usize; 3]| -> Vec<AnnotationRecord> {
                rows.iter().enumerate().flat_map(|(i, v)| {
                    let votes = [v.0, v.1, v.2];
                    order.iter().map(move |&a| rec(&format!("a{a}"), &format!("d{i:03}"), LabelVector::from_bits(votes[a])))
                }).collect()
            };
            let base = soft_label(&build([0, 1, 2])).unwrap();
            for order in [[2, 1, 0], [1, 2, 0], [0, 2, 1]] {
                prop_assert_eq!(&soft_label(&build(order)).unwrap(), &base);
                prop_assert_eq!(agreement(&build(order)).unwrap(), agreement(&build([0, 1, 2])).unwrap());
            }
            // consensus is the bitwise majority of three
            for (item, v) in base.items.iter().zip(rows.iter()) {
                let maj = (v.0 & v.1) | (v.0 & v.2) | (v.1 & v.2);
                prop_assert_eq!(item.consensus.bits(), maj);
            }
            // relabeling annotators by their consensus is a fixed point
            let again: Vec<_> = base.items.iter().flat_map(|g| {
                (0..3).map(move |a| rec(&format!("a{a}"), &g.doc_id, g.consensus))
            }).collect();
            let twice = soft_label(&again).unwrap();
            for (x, y) in twice.items.iter().zip(base.items.iter()) {
                prop_assert_eq!(x.consensus, y.consensus);
            }
        }
    }
}
