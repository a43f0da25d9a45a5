//! One function per subcommand. Stages talk only through files under the
//! work directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use pehlens::analysis::{
    city_group_partition, compare_groups, compare_sources, correlate, correlation_significance, CorrelationMatrix,
    GroupComparison, SourceComparison,
};
use pehlens::anonymizer::{audit_recall, synthetic_pii_docs, AnonymizedDocument};
use pehlens::classifier::{
    classify_batch, BackendKind, BatchError, BatchOptions, Exemplar, ModelConfig, Prediction, PromptMode,
    PromptSpec, ResponseCache,
};
use pehlens::classifier::backend::from_config;
use pehlens::corpus::{apply_window_and_repost_filter, corpus_stats, ingest, segment_and_filter, slug, Document, SourceKind};
use pehlens::goldstandard::{
    agreement, export_sheet, import_sheet, load_gold, save_gold, soft_label, stratified_sample, AnnotationRecord,
    GoldItem, Sample, SheetRow,
};
use pehlens::io::{read_jsonl, sha256_hex, write_atomic, write_json, write_jsonl};
use pehlens::metrics::{evaluate_by_source, leaderboard, weighted_average, EvalReport, LeaderboardEntry};
use pehlens::reference::weighted_check;
use pehlens::reporting::{build_bundle, ReportInputs};

use crate::config::Loaded;

/// Flags shared by several commands.
#[derive(Debug, Clone, Default)]
pub struct Filters {
    pub sources: Vec<SourceKind>,
    pub cities: Vec<String>,
}

impl Filters {
    fn keep(&self, source: SourceKind, city: &str) -> bool {
        (self.sources.is_empty() || self.sources.contains(&source))
            && (self.cities.is_empty() || self.cities.iter().any(|c| slug(c) == slug(city)))
    }
}

/// Fixed file names inside the work directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Self {
        Layout { root }
    }
    pub fn documents(&self) -> PathBuf {
        self.root.join("documents.jsonl")
    }
    pub fn ingest_errors(&self) -> PathBuf {
        self.root.join("ingest_errors.jsonl")
    }
    pub fn corpus_stats(&self) -> PathBuf {
        self.root.join("corpus_stats.csv")
    }
    pub fn anonymized(&self) -> PathBuf {
        self.root.join("anonymized.jsonl")
    }
    pub fn sample(&self) -> PathBuf {
        self.root.join("sample.json")
    }
    pub fn sheets(&self) -> PathBuf {
        self.root.join("sheets")
    }
    pub fn annotations(&self) -> PathBuf {
        self.root.join("annotations.jsonl")
    }
    pub fn events(&self) -> PathBuf {
        self.root.join("annotation_events.jsonl")
    }
    pub fn agreement(&self) -> PathBuf {
        self.root.join("agreement.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }
    pub fn prediction_file(&self, model_id: &str, mode: PromptMode) -> PathBuf {
        self.predictions().join(format!("{}__{}.jsonl", slug(model_id), mode.id()))
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }
    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Written by every command. Holds no wall-clock data, so identical inputs
/// give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub details: Value,
}

pub struct Ctx {
    pub cfg: Loaded,
    pub layout: Layout,
    pub filters: Filters,
}

impl Ctx {
    pub fn new(cfg: Loaded, filters: Filters) -> Self {
        let layout = Layout::new(cfg.work());
        Ctx { cfg, layout, filters }
    }

    fn hash(&self, p: &Path) -> Result<FileHash> {
        let bytes = std::fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
        Ok(FileHash {
            path: self.cfg.display(p),
            sha256: sha256_hex(&bytes),
        })
    }

    fn manifest(&self, name: &str, command: &str, inputs: &[PathBuf], outputs: &[PathBuf], details: Value) -> Result<()> {
        let m = CommandManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.cfg.config.seed,
            config_sha256: self.cfg.sha256.clone(),
            inputs: inputs.iter().map(|p| self.hash(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| self.hash(p)).collect::<Result<_>>()?,
            details,
        };
        write_json(&self.layout.manifests().join(format!("{name}.json")), &m)?;
        Ok(())
    }

    fn need(&self, p: &Path, produced_by: &str) -> Result<PathBuf> {
        if !p.is_file() {
            bail!("{} is missing; run `pehlens {produced_by}` first", p.display());
        }
        Ok(p.to_path_buf())
    }

    fn documents(&self) -> Result<Vec<Document>> {
        let p = self.need(&self.layout.documents(), "ingest")?;
        Ok(read_jsonl(&p)?)
    }

    fn anonymized(&self) -> Result<Vec<AnonymizedDocument>> {
        let p = self.need(&self.layout.anonymized(), "anonymize")?;
        Ok(read_jsonl(&p)?)
    }

    fn sample(&self) -> Result<Sample> {
        let p = self.need(&self.layout.sample(), "sample")?;
        Ok(serde_json::from_slice(&std::fs::read(&p)?)?)
    }

    fn gold_path(&self) -> PathBuf {
        match &self.cfg.config.paths.gold {
            Some(p) => self.cfg.resolve(p),
            None => self.layout.root.join("gold.csv"),
        }
    }

    fn city_names(&self) -> Vec<String> {
        self.cfg.config.roster().into_iter().map(|c| c.city).collect()
    }
}

fn write_text(p: &Path, s: &str) -> Result<()> {
    write_atomic(p, s.as_bytes()).with_context(|| format!("writing {}", p.display()))
}

// ---------------------------------------------------------------- ingest

pub fn ingest_cmd(ctx: &Ctx) -> Result<()> {
    let lexicon = ctx.cfg.lexicon()?;
    let corpus = ctx.cfg.resolve(&ctx.cfg.config.paths.corpus_dir);
    if !corpus.is_dir() {
        bail!("corpus directory not found: {}", corpus.display());
    }
    let mut raw = Vec::new();
    let mut errors = Vec::new();
    let mut files = Vec::new();
    for city in ctx.cfg.config.roster() {
        for source in SourceKind::ALL {
            if !ctx.filters.keep(source, &city.city) {
                continue;
            }
            let p = corpus.join(source.id()).join(format!("{}.jsonl", slug(&city.city)));
            if !p.is_file() {
                continue;
            }
            let rep = ingest(&p, source, &city.city)?;
            for e in rep.errors {
                errors.push(json!({ "file": ctx.cfg.display(&p), "line": e.line, "message": e.message }));
            }
            raw.extend(rep.documents);
            files.push(p);
        }
    }
    if files.is_empty() {
        bail!("no record files matched under {}", corpus.display());
    }
    let n_raw = raw.len();
    let w = &ctx.cfg.config.window;
    let outcome = apply_window_and_repost_filter(raw, w.start, w.end)?;
    let n_kept = outcome.kept.len();
    let mut docs = segment_and_filter(outcome.kept, &lexicon);
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let stats = corpus_stats(&docs);

    let l = &ctx.layout;
    write_jsonl(&l.documents(), &docs)?;
    write_jsonl(&l.ingest_errors(), &errors)?;
    write_text(&l.corpus_stats(), &stats.to_csv())?;
    ctx.manifest(
        "ingest",
        "ingest",
        &files,
        &[l.documents(), l.ingest_errors(), l.corpus_stats()],
        json!({
            "raw_records": n_raw,
            "line_errors": errors.len(),
            "missing_timestamp": outcome.missing_timestamp.len(),
            "in_window": n_kept,
            "documents": docs.len(),
            "analysis_units": docs.iter().filter(|d| d.is_analysis_unit()).count(),
            "lexicon_terms": lexicon.terms().len(),
        }),
    )?;
    eprintln!("ingest: {} records -> {} documents", n_raw, docs.len());
    Ok(())
}

// ---------------------------------------------------------------- anonymize

pub const RECALL_AUDIT_DOCS: usize = 100;

pub fn anonymize_cmd(ctx: &Ctx) -> Result<()> {
    let anonymizer = ctx.cfg.anonymizer()?;
    let docs = ctx.documents()?;
    let mut out = Vec::with_capacity(docs.len());
    let mut residual = Vec::new();
    for d in &docs {
        let a = anonymizer.mask(d)?;
        let left = anonymizer.leak_check(&a)?;
        if !left.is_empty() {
            residual.push(json!({ "doc_id": a.doc_id, "spans": left.len() }));
        }
        out.push(a);
    }
    let audit = audit_recall(&anonymizer, &synthetic_pii_docs(RECALL_AUDIT_DOCS, ctx.cfg.config.seed))?;
    let recall: BTreeMap<String, Value> = audit
        .by_kind
        .iter()
        .map(|(k, (n, c))| (format!("{k:?}"), json!({ "injected": n, "caught": c })))
        .collect();
    let l = &ctx.layout;
    write_jsonl(&l.anonymized(), &out)?;
    ctx.manifest(
        "anonymize",
        "anonymize",
        &[l.documents()],
        &[l.anonymized()],
        json!({
            "backend": anonymizer.backend_name(),
            "documents": out.len(),
            "entities_masked": out.iter().map(|a| a.entity_map.len()).sum::<usize>(),
            "residual_detections": residual,
            "recall_audit": { "documents": RECALL_AUDIT_DOCS, "by_kind": recall, "missed": audit.total_missed() },
        }),
    )?;
    if !residual.is_empty() {
        log::warn!("{} documents still contain detectable entities after masking", residual.len());
    }
    eprintln!("anonymize: {} documents masked", out.len());
    Ok(())
}

// ---------------------------------------------------------------- sample

pub fn sample_cmd(ctx: &Ctx) -> Result<()> {
    let docs: Vec<Document> = ctx
        .documents()?
        .into_iter()
        .filter(|d| ctx.filters.keep(d.source, &d.city))
        .collect();
    let s = stratified_sample(&docs, &ctx.city_names(), ctx.cfg.config.per_cell, ctx.cfg.config.seed)?;
    let l = &ctx.layout;
    write_json(&l.sample(), &s)?;
    ctx.manifest(
        "sample",
        "sample",
        &[l.documents()],
        &[l.sample()],
        json!({
            "per_cell": s.per_cell,
            "items": s.doc_ids.len(),
            "cells": s.cells.len(),
            "empty_cells": s.cells.iter().filter(|c| c.empty).count(),
        }),
    )?;
    eprintln!("sample: {} items from {} cells", s.doc_ids.len(), s.cells.len());
    Ok(())
}

// ---------------------------------------------------------------- sheets

pub fn export_sheets_cmd(ctx: &Ctx, out: Option<&Path>) -> Result<()> {
    let sample = ctx.sample()?;
    let anon: HashMap<String, AnonymizedDocument> =
        ctx.anonymized()?.into_iter().map(|a| (a.doc_id.clone(), a)).collect();
    let rows: Vec<SheetRow> = sample
        .doc_ids
        .iter()
        .map(|id| {
            let a = anon.get(id).ok_or_else(|| anyhow!("sampled {id:?} has no masked text"))?;
            Ok(SheetRow {
                doc_id: id.clone(),
                text: a.masked_text.clone(),
                labels: None,
                annotated_at: None,
            })
        })
        .collect::<Result<_>>()?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| ctx.layout.sheets());
    let mut outputs = Vec::new();
    for a in &ctx.cfg.config.annotators {
        let p = dir.join(format!("{a}.csv"));
        export_sheet(&p, &rows)?;
        outputs.push(p);
    }
    ctx.manifest(
        "export-sheets",
        "export-sheets",
        &[ctx.layout.sample(), ctx.layout.anonymized()],
        &outputs,
        json!({ "rows": rows.len(), "annotators": ctx.cfg.config.annotators }),
    )?;
    eprintln!("export-sheets: {} sheets of {} rows in {}", outputs.len(), rows.len(), dir.display());
    Ok(())
}

pub fn import_sheets_cmd(ctx: &Ctx, input: Option<&Path>, from_service: bool) -> Result<()> {
    let sample = ctx.sample()?;
    let in_sample: BTreeSet<&str> = sample.doc_ids.iter().map(String::as_str).collect();
    let roster = &ctx.cfg.config.annotators;
    let mut records: Vec<AnnotationRecord> = Vec::new();
    let mut inputs = Vec::new();
    if from_service {
        let p = ctx.need(&ctx.layout.events(), "serve")?;
        // last submission per (annotator, doc) wins
        let mut last: BTreeMap<(String, String), AnnotationRecord> = BTreeMap::new();
        for r in read_jsonl::<AnnotationRecord>(&p)? {
            last.insert((r.annotator_id.clone(), r.doc_id.clone()), r);
        }
        records.extend(last.into_values());
        inputs.push(p);
    } else {
        let dir = input.map(Path::to_path_buf).unwrap_or_else(|| ctx.layout.sheets());
        let mut problems = Vec::new();
        for a in roster {
            let p = dir.join(format!("{a}.csv"));
            if !p.is_file() {
                problems.push(format!("{}: missing sheet", p.display()));
                continue;
            }
            match import_sheet(&p, roster) {
                Ok(rs) => records.extend(rs),
                Err(v) => {
                    for i in v.issues {
                        let at = match (i.line, &i.column) {
                            (Some(l), Some(c)) => format!(":{l} [{c}]"),
                            (Some(l), None) => format!(":{l}"),
                            _ => String::new(),
                        };
                        problems.push(format!("{}{at}: {}", p.display(), i.message));
                    }
                }
            }
            inputs.push(p);
        }
        if !problems.is_empty() {
            bail!("annotation sheets failed validation:\n  {}", problems.join("\n  "));
        }
    }
    let outside: Vec<&str> = records
        .iter()
        .map(|r| r.doc_id.as_str())
        .filter(|d| !in_sample.contains(d))
        .collect();
    if !outside.is_empty() {
        bail!("annotations for documents outside the sample: {outside:?}");
    }
    records.sort_by(|a, b| (&a.doc_id, &a.annotator_id).cmp(&(&b.doc_id, &b.annotator_id)));
    write_jsonl(&ctx.layout.annotations(), &records)?;
    inputs.push(ctx.layout.sample());
    ctx.manifest(
        "import-sheets",
        "import-sheets",
        &inputs,
        &[ctx.layout.annotations()],
        json!({ "records": records.len(), "from_service": from_service }),
    )?;
    eprintln!("import-sheets: {} records", records.len());
    Ok(())
}

// ---------------------------------------------------------------- gold

pub fn gold_cmd(ctx: &Ctx) -> Result<()> {
    let p = ctx.need(&ctx.layout.annotations(), "import-sheets")?;
    let records: Vec<AnnotationRecord> = read_jsonl(&p)?;
    let outcome = soft_label(&records)?;
    let agree = agreement(&records)?;
    let gold = ctx.gold_path();
    save_gold(&gold, &outcome.items)?;
    write_json(&ctx.layout.agreement(), &agree)?;
    ctx.manifest(
        "gold",
        "gold",
        &[p],
        &[gold, ctx.layout.agreement()],
        json!({
            "items": outcome.items.len(),
            "excluded": outcome.excluded,
            "agreement_pairwise_mean": agree.pairwise_mean,
            "agreement_unanimous_mean": agree.unanimous_mean,
        }),
    )?;
    eprintln!(
        "gold: {} items, pairwise agreement {:.2}%",
        outcome.items.len(),
        100.0 * agree.pairwise_mean
    );
    Ok(())
}

// ---------------------------------------------------------------- classify

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocSet {
    /// Every analysis unit.
    All,
    /// Only documents in the gold standard.
    Gold,
}

fn load_exemplars(ctx: &Ctx) -> Result<Vec<Exemplar>> {
    let p = ctx
        .cfg
        .config
        .paths
        .exemplars
        .as_ref()
        .ok_or_else(|| anyhow!("few-shot prompts need paths.exemplars"))?;
    let p = ctx.cfg.require_file("exemplar file", p)?;
    serde_json::from_slice(&std::fs::read(&p)?).with_context(|| format!("parsing {}", p.display()))
}

/// Model configs selected by `--model`, with `{mode}` substituted and
/// replay paths resolved.
pub fn select_models(ctx: &Ctx, wanted: &[String]) -> Result<Vec<ModelConfig>> {
    let all = &ctx.cfg.config.models;
    if all.is_empty() {
        bail!("no models configured");
    }
    if wanted.is_empty() || wanted.iter().any(|w| w == "all") {
        return Ok(all.clone());
    }
    wanted
        .iter()
        .map(|w| {
            all.iter()
                .find(|m| &m.model_id == w)
                .cloned()
                .ok_or_else(|| anyhow!("model {w:?} is not configured"))
        })
        .collect()
}

fn for_mode(ctx: &Ctx, m: &ModelConfig, mode: PromptMode) -> Result<ModelConfig> {
    let mut c = m.clone();
    c.endpoint = c.endpoint.replace("{mode}", mode.id());
    if c.backend == BackendKind::Replay {
        c.endpoint = ctx.cfg.require_file("replay file", Path::new(&c.endpoint))?.to_string_lossy().into_owned();
    }
    Ok(c)
}

pub fn classify_cmd(ctx: &Ctx, models: &[String], modes: &[PromptMode], set: DocSet, workers: Option<usize>) -> Result<()> {
    let selected = select_models(ctx, models)?;
    let exemplars = if modes.contains(&PromptMode::FewShot) {
        load_exemplars(ctx)?
    } else {
        Vec::new()
    };
    // resolve everything before any model is called
    let mut plan = Vec::new();
    for m in &selected {
        for &mode in modes {
            let spec = match mode {
                PromptMode::ZeroShot => PromptSpec::zero_shot(&ctx.cfg.config.instruction_version),
                PromptMode::FewShot => PromptSpec::few_shot(&ctx.cfg.config.instruction_version, exemplars.clone()),
            };
            spec.validate()?;
            let resolved = for_mode(ctx, m, mode)?;
            from_config(&resolved).with_context(|| format!("model {:?}", m.model_id))?;
            plan.push((m.clone(), mode, spec, resolved));
        }
    }

    let docs = ctx.documents()?;
    let meta: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let gold_ids: Option<BTreeSet<String>> = match set {
        DocSet::All => None,
        DocSet::Gold => Some(load_gold(&ctx.need(&ctx.gold_path(), "gold")?)?.into_iter().map(|g| g.doc_id).collect()),
    };
    let targets: Vec<AnonymizedDocument> = ctx
        .anonymized()?
        .into_iter()
        .filter(|a| {
            meta.get(a.doc_id.as_str())
                .is_some_and(|d| d.is_analysis_unit() && ctx.filters.keep(d.source, &d.city))
                && gold_ids.as_ref().is_none_or(|g| g.contains(&a.doc_id))
        })
        .collect();
    if targets.is_empty() {
        bail!("no documents to classify");
    }
    let cache = match &ctx.cfg.config.paths.cache_dir {
        Some(d) => Some(ResponseCache::open(ctx.cfg.resolve(d))?),
        None => None,
    };
    let opts = BatchOptions {
        workers: workers.unwrap_or(ctx.cfg.config.workers),
    };
    for (orig, mode, spec, resolved) in plan {
        let out = match classify_batch(&targets, &resolved, &spec, cache.as_ref(), &opts) {
            Ok(o) => o,
            Err(BatchError::Auth(msg)) => bail!("{}: authentication failed, run aborted: {msg}", orig.model_id),
            Err(e) => return Err(e.into()),
        };
        let path = ctx.layout.prediction_file(&orig.model_id, mode);
        write_jsonl(&path, &out.predictions)?;
        let mut manifest = out.manifest;
        manifest.config.endpoint = orig.endpoint.replace("{mode}", mode.id());
        ctx.manifest(
            &format!("classify__{}__{}", slug(&orig.model_id), mode.id()),
            "classify",
            &[ctx.layout.anonymized()],
            &[path],
            serde_json::to_value(&manifest)?,
        )?;
        if manifest.degraded {
            log::warn!("{} {}: run degraded, {} of {} failed", orig.model_id, mode.id(), manifest.failed, manifest.documents);
        }
        eprintln!(
            "classify: {} {} -> {} ok, {} repaired, {} failed",
            orig.model_id,
            mode.id(),
            manifest.ok,
            manifest.repaired,
            manifest.failed
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn prediction_files(ctx: &Ctx, models: &[String], modes: &[PromptMode]) -> Result<Vec<PathBuf>> {
    let dir = ctx.need_dir(&ctx.layout.predictions(), "classify")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if !models.is_empty() && !models.iter().any(|m| m == "all") {
        let want: Vec<String> = models.iter().map(|m| slug(m)).collect();
        files.retain(|p| {
            let stem = p.file_stem().unwrap().to_string_lossy();
            want.iter().any(|w| stem.starts_with(&format!("{w}__")))
        });
    }
    files.retain(|p| {
        let stem = p.file_stem().unwrap().to_string_lossy();
        modes.iter().any(|m| stem.ends_with(&format!("__{}", m.id())))
    });
    if files.is_empty() {
        bail!("no prediction files selected in {}", dir.display());
    }
    Ok(files)
}

impl Ctx {
    fn need_dir(&self, p: &Path, produced_by: &str) -> Result<PathBuf> {
        if !p.is_dir() {
            bail!("{} is missing; run `pehlens {produced_by}` first", p.display());
        }
        Ok(p.to_path_buf())
    }
}

pub fn evaluate_cmd(ctx: &Ctx, models: &[String], modes: &[PromptMode]) -> Result<()> {
    let gold_path = ctx.need(&ctx.gold_path(), "gold")?;
    let gold: Vec<GoldItem> = load_gold(&gold_path)?;
    let docs = ctx.documents()?;
    let source_of: HashMap<String, SourceKind> = docs.iter().map(|d| (d.id.clone(), d.source)).collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.doc_id.as_str()).collect();
    let weights = ctx.cfg.config.source_weights();

    let files = prediction_files(ctx, models, modes)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut exclusions = Vec::new();
    let mut runs = Vec::new();
    let mut mismatches = Vec::new();
    for f in &files {
        let preds: Vec<Prediction> = read_jsonl(f)?;
        let Some(first) = preds.first() else { continue };
        let (model_id, mode) = (first.model_id.clone(), first.mode);
        let ignored = preds.iter().filter(|p| !gold_ids.contains(p.doc_id.as_str())).count();
        let preds: Vec<Prediction> = preds.into_iter().filter(|p| gold_ids.contains(p.doc_id.as_str())).collect();
        let have: BTreeSet<&str> = preds.iter().map(|p| p.doc_id.as_str()).collect();
        let missing: Vec<&str> = gold_ids.difference(&have).copied().collect();
        if !missing.is_empty() {
            mismatches.push(format!("{} ({} {}): no prediction for {:?}", ctx.cfg.display(f), model_id, mode.id(), missing));
            continue;
        }
        let ev = evaluate_by_source(&gold, &preds, &source_of)?;
        let weighted = match weighted_average(&ev.reports, &weights) {
            Ok(w) => Some(w),
            Err(e) => {
                log::warn!("{model_id} {}: no weighted average ({e})", mode.id());
                None
            }
        };
        runs.push(json!({
            "file": ctx.cfg.display(f),
            "model_id": model_id,
            "mode": mode,
            "scored": preds.len() - ev.excluded.len(),
            "excluded": ev.excluded.len(),
            "ignored_outside_gold": ignored,
            "weighted": weighted.is_some(),
        }));
        exclusions.extend(ev.excluded);
        reports.extend(ev.reports);
        reports.extend(weighted);
    }
    if !mismatches.is_empty() {
        bail!("gold and prediction ids do not match:\n  {}", mismatches.join("\n  "));
    }
    reports.sort_by(|a, b| (&a.model_id, a.mode, a.scope).cmp(&(&b.model_id, b.mode, b.scope)));
    let board = leaderboard(&reports);

    let dir = ctx.layout.eval();
    let outs = [dir.join("reports.json"), dir.join("exclusions.json"), dir.join("leaderboard.json")];
    write_json(&outs[0], &reports)?;
    write_json(&outs[1], &exclusions)?;
    write_json(&outs[2], &board)?;
    let mut inputs = vec![gold_path, ctx.layout.documents()];
    inputs.extend(files.iter().cloned());
    ctx.manifest(
        "evaluate",
        "evaluate",
        &inputs,
        &outs,
        json!({
            "gold_items": gold.len(),
            "runs": runs,
            "weights": weights,
            "weighted_check": weighted_check(&weights),
        }),
    )?;
    for e in &board {
        eprintln!("{:>2}. {} {} macro {:.2} micro {:.2}", e.rank, e.model_id, e.mode.id(), e.macro_f1, e.micro_f1);
    }
    Ok(())
}

// ---------------------------------------------------------------- analyze

fn pick_run(ctx: &Ctx, model: Option<&str>, mode: Option<PromptMode>) -> Result<(String, PromptMode)> {
    if let (Some(m), Some(md)) = (model, mode) {
        return Ok((m.to_string(), md));
    }
    let p = ctx.layout.eval().join("leaderboard.json");
    let board: Vec<LeaderboardEntry> = if p.is_file() {
        serde_json::from_slice(&std::fs::read(&p)?)?
    } else {
        Vec::new()
    };
    let top = board
        .iter()
        .find(|e| model.is_none_or(|m| e.model_id == m) && mode.is_none_or(|md| e.mode == md))
        .ok_or_else(|| anyhow!("pass --model and --mode, or run `pehlens evaluate` first"))?;
    Ok((top.model_id.clone(), top.mode))
}

pub fn analyze_cmd(ctx: &Ctx, model: Option<&str>, mode: Option<PromptMode>, alpha: f64) -> Result<()> {
    let (model_id, mode) = pick_run(ctx, model, mode)?;
    let pf = ctx.need(&ctx.layout.prediction_file(&model_id, mode), "classify")?;
    let docs = ctx.documents()?;
    let keep: HashMap<&str, &Document> = docs
        .iter()
        .filter(|d| d.is_analysis_unit() && ctx.filters.keep(d.source, &d.city))
        .map(|d| (d.id.as_str(), d))
        .collect();
    let preds: Vec<Prediction> = read_jsonl::<Prediction>(&pf)?
        .into_iter()
        .filter(|p| p.is_scorable() && keep.contains_key(p.doc_id.as_str()))
        .collect();
    if preds.is_empty() {
        bail!("no scorable predictions in {}", pf.display());
    }
    let test = ctx.cfg.config.test_kind();
    let corr = correlate(&preds);
    let sig = correlation_significance(&corr, alpha);
    let partition = city_group_partition(&docs, &ctx.cfg.config.roster());
    let city = compare_groups(&preds, &partition, ("Large", "Small"), alpha, pehlens::taxonomy::NUM_CATEGORIES, test);
    let source_of: HashMap<String, SourceKind> = docs.iter().map(|d| (d.id.clone(), d.source)).collect();
    let sources = compare_sources(&preds, &source_of, alpha, test);

    let dir = ctx.layout.analysis();
    let outs = [
        dir.join("correlation.json"),
        dir.join("correlation_tests.json"),
        dir.join("city_comparison.json"),
        dir.join("source_comparison.json"),
    ];
    write_json(&outs[0], &corr)?;
    write_json(&outs[1], &sig)?;
    write_json(&outs[2], &city)?;
    write_json(&outs[3], &sources)?;
    ctx.manifest(
        "analyze",
        "analyze",
        &[pf, ctx.layout.documents()],
        &outs,
        json!({
            "model_id": model_id,
            "mode": mode,
            "alpha": alpha,
            "test": test,
            "documents": preds.len(),
            "significant_correlations": sig.iter().filter(|t| t.significant).count(),
            "significant_city_categories": city.significant().count(),
            "source_contrasts": sources.contrasts.len(),
        }),
    )?;
    eprintln!(
        "analyze: {} {} over {} documents; {} significant correlations, {} city differences",
        model_id,
        mode.id(),
        preds.len(),
        sig.iter().filter(|t| t.significant).count(),
        city.significant().count()
    );
    Ok(())
}

// ---------------------------------------------------------------- report

fn read_opt<T: serde::de::DeserializeOwned>(p: &Path) -> Result<Option<T>> {
    if !p.is_file() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&std::fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?))
}

pub fn report_cmd(ctx: &Ctx, out: Option<&Path>) -> Result<PathBuf> {
    let eval = ctx.layout.eval().join("reports.json");
    let an = ctx.layout.analysis();
    let reports: Vec<EvalReport> = read_opt(&eval)?.unwrap_or_default();
    let correlation: Option<CorrelationMatrix> = read_opt(&an.join("correlation.json"))?;
    let city_comparison: Option<GroupComparison> = read_opt(&an.join("city_comparison.json"))?;
    let source_comparison: Option<SourceComparison> = read_opt(&an.join("source_comparison.json"))?;
    let eval_manifest: Option<CommandManifest> = read_opt(&ctx.layout.manifests().join("evaluate.json"))?;
    let analyze_manifest: Option<CommandManifest> = read_opt(&ctx.layout.manifests().join("analyze.json"))?;
    let weights = ctx.cfg.config.source_weights();
    let inputs = ReportInputs {
        reports,
        correlation,
        city_comparison,
        source_comparison,
        metadata: json!({
            "seed": ctx.cfg.config.seed,
            "alpha": ctx.cfg.config.alpha,
            "config_sha256": ctx.cfg.sha256,
            "instruction_version": ctx.cfg.config.instruction_version,
            "evaluate": eval_manifest.map(|m| m.details),
            "analyze": analyze_manifest.map(|m| m.details),
            "weighted_check": weighted_check(&weights),
        }),
    };
    let bundle = build_bundle(&inputs);
    let root = match out {
        Some(p) => p.to_path_buf(),
        None => ctx.cfg.resolve(&ctx.cfg.config.paths.out_dir),
    };
    bundle.write(&root)?;
    let mut in_files = Vec::new();
    for p in [
        eval,
        an.join("correlation.json"),
        an.join("city_comparison.json"),
        an.join("source_comparison.json"),
    ] {
        if p.is_file() {
            in_files.push(p);
        }
    }
    let outputs: Vec<PathBuf> = bundle
        .manifest
        .artifacts
        .iter()
        .map(|a| root.join(&a.path))
        .chain(std::iter::once(root.join(pehlens::reporting::MANIFEST_FILE)))
        .collect();
    ctx.manifest(
        "report",
        "report",
        &in_files,
        &outputs,
        json!({ "tables": bundle.tables.len(), "figures": bundle.figures.len() }),
    )?;
    eprintln!(
        "report: {} tables, {} figures in {}",
        bundle.tables.len(),
        bundle.figures.len(),
        root.display()
    );
    Ok(root)
}

// ---------------------------------------------------------------- serve

pub fn serve_cmd(ctx: &Ctx, addr: std::net::SocketAddr) -> Result<()> {
    use pehlens_annotate::{items_from, AnnotationStore, Assignment, LeakGuard, Service};
    let sample = ctx.sample()?;
    let anon = ctx.anonymized()?;
    let docs = ctx.documents()?;
    let items = items_from(&sample.doc_ids, &anon, &docs)?;
    let in_sample: BTreeSet<&str> = sample.doc_ids.iter().map(String::as_str).collect();
    let sampled: Vec<AnonymizedDocument> = anon.into_iter().filter(|a| in_sample.contains(a.doc_id.as_str())).collect();
    let guard = LeakGuard::new(&sampled, &ctx.city_names());
    let store = AnnotationStore::open(
        items,
        ctx.cfg.config.annotators.clone(),
        Assignment::All,
        Some(&ctx.layout.events()),
    )?;
    let ui = ctx.cfg.config.paths.ui_dir.as_ref().map(|p| ctx.cfg.resolve(p));
    ctx.manifest(
        "serve",
        "serve",
        &[ctx.layout.sample(), ctx.layout.anonymized()],
        &[],
        json!({ "addr": addr.to_string(), "items": sample.doc_ids.len(), "annotators": ctx.cfg.config.annotators }),
    )?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(pehlens_annotate::serve(addr, Service::new(store, guard), ui))?;
    Ok(())
}

// ---------------------------------------------------------------- knn

pub fn knn_cmd(ctx: &Ctx, target: &str, k: usize, out: Option<&Path>) -> Result<Vec<String>> {
    let pool = match &ctx.cfg.config.paths.county_features {
        Some(p) => pehlens::corpus::load_county_features(&ctx.cfg.require_file("county table", p)?)?,
        None => pehlens::corpus::appendix_counties(),
    };
    let t = pehlens::corpus::find_county(&pool, target).ok_or_else(|| anyhow!("no county matches {target:?}"))?;
    let near = pehlens::corpus::select_similar_counties(t, &pool, k)?;
    let body = serde_json::to_string_pretty(&json!({ "target": t.county, "k": k, "neighbors": near }))? + "\n";
    let mut outputs = Vec::new();
    if let Some(p) = out {
        write_text(p, &body)?;
        outputs.push(p.to_path_buf());
    }
    ctx.manifest("knn-cities", "knn-cities", &[], &outputs, json!({ "target": t.county, "k": k, "neighbors": near }))?;
    print!("{body}");
    Ok(near)
}
