//! Queue and record keeping behind the HTTP layer. No I/O besides the
//! append-only event log.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use aho_corasick::AhoCorasick;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use pehlens::anonymizer::AnonymizedDocument;
use pehlens::corpus::{Document, SourceKind};
use pehlens::goldstandard::{soft_label, write_sheet, AnnotationRecord, GoldItem, SheetRow};
use pehlens::taxonomy::{Category, LabelVector};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("annotator {0:?} is not on the roster")]
    UnknownAnnotator(String),
    #[error("document {0:?} is not in the sample")]
    UnknownDoc(String),
    #[error("document {doc_id:?} is not assigned to {annotator_id:?}")]
    NotAssigned { annotator_id: String, doc_id: String },
    #[error("{0}")]
    Invalid(String),
    #[error("response withheld: it would expose a masked entity")]
    Leak,
    #[error("event log {path}: {source}")]
    Log {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What an annotator sees: masked text and two badges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemView {
    pub doc_id: String,
    pub masked_text: String,
    pub source: SourceKind,
    pub city: String,
}

/// Joins the sample ids to their masked text and metadata, in sample order.
pub fn items_from(sample: &[String], anonymized: &[AnonymizedDocument], docs: &[Document]) -> Result<Vec<ItemView>, StoreError> {
    let anon: HashMap<&str, &AnonymizedDocument> = anonymized.iter().map(|a| (a.doc_id.as_str(), a)).collect();
    let meta: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    sample
        .iter()
        .map(|id| {
            let a = anon.get(id.as_str()).ok_or_else(|| StoreError::Invalid(format!("no masked text for {id:?}")))?;
            let d = meta.get(id.as_str()).ok_or_else(|| StoreError::Invalid(format!("no document for {id:?}")))?;
            Ok(ItemView {
                doc_id: id.clone(),
                masked_text: a.masked_text.clone(),
                source: d.source,
                city: d.city.clone(),
            })
        })
        .collect()
}

/// Scans outgoing bodies for surfaces that masking removed.
pub struct LeakGuard {
    matcher: Option<AhoCorasick>,
    patterns: usize,
}

impl LeakGuard {
    /// City names of the roster are public metadata shown as badges, so
    /// they are not treated as leaks even when masked inside text.
    pub fn new(anonymized: &[AnonymizedDocument], public: &[String]) -> Self {
        let set: BTreeSet<&str> = anonymized
            .iter()
            .flat_map(|a| a.surfaces())
            .filter(|s| !s.trim().is_empty() && !public.iter().any(|p| p == s))
            .collect();
        let patterns = set.len();
        let matcher = (!set.is_empty()).then(|| AhoCorasick::new(set).expect("literal patterns"));
        LeakGuard { matcher, patterns }
    }

    pub fn len(&self) -> usize {
        self.patterns
    }

    pub fn is_empty(&self) -> bool {
        self.patterns == 0
    }

    pub fn check(&self, body: &str) -> Result<(), StoreError> {
        match &self.matcher {
            Some(m) if m.is_match(body) => Err(StoreError::Leak),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// Every annotator labels every item.
    #[default]
    All,
    /// Item i goes to annotator i mod n.
    Partitioned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueState {
    pub annotator_id: String,
    pub remaining: Vec<String>,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub annotator_id: String,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub annotator_id: String,
    pub doc_id: String,
    pub previous: LabelVector,
    pub current: LabelVector,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub doc_id: String,
    /// Categories on which the current annotators differ.
    pub categories: Vec<Category>,
    pub labels: BTreeMap<String, LabelVector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub replaced: bool,
    pub progress: Progress,
}

pub struct AnnotationStore {
    items: Vec<ItemView>,
    index: HashMap<String, usize>,
    roster: Vec<String>,
    assignment: Assignment,
    records: BTreeMap<(String, String), AnnotationRecord>,
    audit: Vec<AuditEntry>,
    log: Option<(PathBuf, File)>,
}

impl AnnotationStore {
    /// Opens a store and replays the event log when one exists.
    pub fn open(
        items: Vec<ItemView>,
        roster: Vec<String>,
        assignment: Assignment,
        log_path: Option<&Path>,
    ) -> Result<Self, StoreError> {
        if roster.is_empty() {
            return Err(StoreError::Invalid("annotator roster is empty".into()));
        }
        let mut index = HashMap::new();
        for (i, it) in items.iter().enumerate() {
            if index.insert(it.doc_id.clone(), i).is_some() {
                return Err(StoreError::Invalid(format!("duplicate item {:?}", it.doc_id)));
            }
        }
        let mut store = AnnotationStore {
            items,
            index,
            roster,
            assignment,
            records: BTreeMap::new(),
            audit: Vec::new(),
            log: None,
        };
        if let Some(p) = log_path {
            let err = |source| StoreError::Log {
                path: p.display().to_string(),
                source,
            };
            if p.exists() {
                let events: Vec<AnnotationRecord> = pehlens::io::read_jsonl(p).map_err(err)?;
                for r in events {
                    store.apply(r)?;
                }
            }
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(err)?;
            }
            let f = OpenOptions::new().create(true).append(true).open(p).map_err(err)?;
            store.log = Some((p.to_path_buf(), f));
        }
        Ok(store)
    }

    pub fn items(&self) -> &[ItemView] {
        &self.items
    }

    pub fn roster(&self) -> &[String] {
        &self.roster
    }

    fn check_annotator(&self, annotator_id: &str) -> Result<(), StoreError> {
        if self.roster.iter().any(|a| a == annotator_id) {
            Ok(())
        } else {
            Err(StoreError::UnknownAnnotator(annotator_id.to_string()))
        }
    }

    fn assigned(&self, annotator_id: &str) -> Vec<&ItemView> {
        match self.assignment {
            Assignment::All => self.items.iter().collect(),
            Assignment::Partitioned => {
                let k = self.roster.iter().position(|a| a == annotator_id).unwrap_or(usize::MAX);
                let n = self.roster.len();
                self.items.iter().enumerate().filter(|(i, _)| i % n == k).map(|(_, it)| it).collect()
            }
        }
    }

    fn is_done(&self, annotator_id: &str, doc_id: &str) -> bool {
        self.records.contains_key(&(annotator_id.to_string(), doc_id.to_string()))
    }

    pub fn queue(&self, annotator_id: &str) -> Result<QueueState, StoreError> {
        self.check_annotator(annotator_id)?;
        let mine = self.assigned(annotator_id);
        let remaining: Vec<String> = mine
            .iter()
            .filter(|it| !self.is_done(annotator_id, &it.doc_id))
            .map(|it| it.doc_id.clone())
            .collect();
        Ok(QueueState {
            annotator_id: annotator_id.to_string(),
            completed: mine.len() - remaining.len(),
            total: mine.len(),
            remaining,
        })
    }

    /// First assigned item the annotator has not labeled yet.
    pub fn next(&self, annotator_id: &str) -> Result<Option<&ItemView>, StoreError> {
        self.check_annotator(annotator_id)?;
        Ok(self
            .assigned(annotator_id)
            .into_iter()
            .find(|it| !self.is_done(annotator_id, &it.doc_id)))
    }

    pub fn progress(&self, annotator_id: &str) -> Result<Progress, StoreError> {
        let q = self.queue(annotator_id)?;
        Ok(Progress {
            annotator_id: q.annotator_id,
            completed: q.completed,
            total: q.total,
        })
    }

    pub fn all_progress(&self) -> Vec<Progress> {
        self.roster.iter().map(|a| self.progress(a).expect("roster member")).collect()
    }

    fn validate(&self, r: &AnnotationRecord) -> Result<(), StoreError> {
        self.check_annotator(&r.annotator_id)?;
        let i = *self.index.get(&r.doc_id).ok_or_else(|| StoreError::UnknownDoc(r.doc_id.clone()))?;
        if self.assignment == Assignment::Partitioned {
            let k = self.roster.iter().position(|a| a == &r.annotator_id).unwrap();
            if i % self.roster.len() != k {
                return Err(StoreError::NotAssigned {
                    annotator_id: r.annotator_id.clone(),
                    doc_id: r.doc_id.clone(),
                });
            }
        }
        Ok(())
    }

    fn apply(&mut self, r: AnnotationRecord) -> Result<bool, StoreError> {
        self.validate(&r)?;
        let key = (r.annotator_id.clone(), r.doc_id.clone());
        let at = r.annotated_at.unwrap_or_else(Utc::now);
        let prev = self.records.insert(key, r.clone());
        if let Some(p) = &prev {
            self.audit.push(AuditEntry {
                annotator_id: r.annotator_id,
                doc_id: r.doc_id,
                previous: p.labels,
                current: r.labels,
                at,
            });
        }
        Ok(prev.is_some())
    }

    /// Validates, appends to the log, then updates memory. A repeat for the
    /// same (annotator, doc) overwrites and leaves an audit entry.
    pub fn submit(&mut self, mut r: AnnotationRecord) -> Result<SubmitOutcome, StoreError> {
        self.validate(&r)?;
        r.annotated_at.get_or_insert_with(Utc::now);
        if let Some((path, f)) = &mut self.log {
            let mut line = serde_json::to_vec(&r).expect("record serializes");
            line.push(b'\n');
            f.write_all(&line)
                .and_then(|_| f.sync_data())
                .map_err(|source| StoreError::Log {
                    path: path.display().to_string(),
                    source,
                })?;
        }
        let annotator = r.annotator_id.clone();
        let replaced = self.apply(r)?;
        Ok(SubmitOutcome {
            replaced,
            progress: self.progress(&annotator)?,
        })
    }

    /// Current records, ordered by (annotator, doc).
    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.records.values().cloned().collect()
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Items where at least two annotators have labeled and differ on at
    /// least one category. Recomputed on every call.
    pub fn disagreements(&self) -> Vec<Disagreement> {
        let mut by_doc: BTreeMap<&str, BTreeMap<String, LabelVector>> = BTreeMap::new();
        for ((a, d), r) in &self.records {
            by_doc.entry(d.as_str()).or_default().insert(a.clone(), r.labels);
        }
        by_doc
            .into_iter()
            .filter_map(|(doc, labels)| {
                let vs: Vec<LabelVector> = labels.values().copied().collect();
                let categories: Vec<Category> = Category::ALL
                    .into_iter()
                    .filter(|c| vs.iter().any(|v| v.get(*c) != vs[0].get(*c)))
                    .collect();
                (vs.len() >= 2 && !categories.is_empty()).then(|| Disagreement {
                    doc_id: doc.to_string(),
                    categories,
                    labels,
                })
            })
            .collect()
    }

    /// One annotator's sheet in the same CSV layout as offline sheets.
    pub fn sheet_csv(&self, annotator_id: &str) -> Result<String, StoreError> {
        self.check_annotator(annotator_id)?;
        let rows: Vec<SheetRow> = self
            .assigned(annotator_id)
            .into_iter()
            .map(|it| {
                let r = self.records.get(&(annotator_id.to_string(), it.doc_id.clone()));
                SheetRow {
                    doc_id: it.doc_id.clone(),
                    text: it.masked_text.clone(),
                    labels: r.map(|r| r.labels),
                    annotated_at: r.and_then(|r| r.annotated_at),
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_sheet(&mut buf, &rows).map_err(|e| StoreError::Invalid(e.to_string()))?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf8"))
    }

    pub fn gold(&self) -> Result<Vec<GoldItem>, StoreError> {
        soft_label(&self.records())
            .map(|o| o.items)
            .map_err(|e| StoreError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<ItemView> {
        (0..n)
            .map(|i| ItemView {
                doc_id: format!("d{i:04}"),
                masked_text: format!("text {i}"),
                source: SourceKind::Reddit,
                city: "Rockford".into(),
            })
            .collect()
    }

    fn roster() -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }

    fn rec(a: &str, d: &str, bits: u16) -> AnnotationRecord {
        AnnotationRecord {
            annotator_id: a.into(),
            doc_id: d.into(),
            labels: LabelVector::from_bits(bits),
            annotated_at: None,
        }
    }

    #[test]
    fn queue_union_is_the_sample() {
        let mut s = AnnotationStore::open(items(5), roster(), Assignment::All, None).unwrap();
        s.submit(rec("a", "d0002", 1)).unwrap();
        let q = s.queue("a").unwrap();
        assert_eq!(q.completed + q.remaining.len(), q.total);
        assert!(!q.remaining.contains(&"d0002".to_string()));
        assert_eq!(s.next("a").unwrap().unwrap().doc_id, "d0000");
    }

    #[test]
    fn partitioned_assignment_splits_items() {
        let s = AnnotationStore::open(items(7), roster(), Assignment::Partitioned, None).unwrap();
        let totals: Vec<usize> = s.all_progress().iter().map(|p| p.total).collect();
        assert_eq!(totals, vec![3, 2, 2]);
        let mut s = s;
        assert!(matches!(s.submit(rec("b", "d0000", 0)), Err(StoreError::NotAssigned { .. })));
    }

    #[test]
    fn resubmit_overwrites_with_audit() {
        let mut s = AnnotationStore::open(items(2), roster(), Assignment::All, None).unwrap();
        assert!(!s.submit(rec("a", "d0000", 1)).unwrap().replaced);
        let out = s.submit(rec("a", "d0000", 2)).unwrap();
        assert!(out.replaced);
        assert_eq!(out.progress.completed, 1);
        assert_eq!(s.records().len(), 1);
        assert_eq!(s.audit().len(), 1);
        assert_eq!(s.audit()[0].previous, LabelVector::from_bits(1));
    }

    #[test]
    fn log_replays_on_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("events.jsonl");
        {
            let mut s = AnnotationStore::open(items(3), roster(), Assignment::All, Some(&log)).unwrap();
            s.submit(rec("a", "d0000", 5)).unwrap();
            s.submit(rec("b", "d0000", 4)).unwrap();
            s.submit(rec("a", "d0000", 4)).unwrap();
        }
        let s = AnnotationStore::open(items(3), roster(), Assignment::All, Some(&log)).unwrap();
        assert_eq!(s.records().len(), 2);
        assert!(s.disagreements().is_empty());
        assert_eq!(s.audit().len(), 1);
    }

    #[test]
    fn guard_ignores_public_city_names() {
        let a = AnonymizedDocument {
            doc_id: "d".into(),
            masked_text: "[LOCATION] and PERSON0".into(),
            entity_map: vec![],
        };
        let g = LeakGuard::new(&[a], &["Rockford".into()]);
        assert!(g.is_empty());
        assert!(g.check("Rockford").is_ok());
    }
}
