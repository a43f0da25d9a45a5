#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pehlens::anonymizer::AnonymizedDocument;
use pehlens::classifier::PromptMode;
use pehlens::fixtures::{
    data_dir, exemplars_from, gold_fixture, prompt_spec, record_replay, smoke_annotations, smoke_run, DATA_SEED,
    SIMULATED_MODELS,
};
use pehlens::goldstandard::{export_sheet, SheetRow};
use pehlens::io::{read_jsonl, write_jsonl};
use pehlens::anonymizer::Anonymizer;

pub fn pehlens(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pehlens"))
        .current_dir(dir)
        .args(["--config", "pehlens.toml"])
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pehlens(dir, args);
    assert!(
        out.status.success(),
        "pehlens {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dst = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dst);
        } else {
            std::fs::copy(e.path(), dst).unwrap();
        }
    }
}

/// A scratch copy of the bundled smoke directory.
pub fn smoke_dir() -> tempfile::TempDir {
    let t = tempfile::tempdir().unwrap();
    copy_dir(&data_dir().join("smoke"), t.path());
    t
}

/// Fills every exported sheet with the fixture annotations, as the three
/// annotators would.
pub fn fill_sheets(dir: &Path) {
    let run = smoke_run(DATA_SEED);
    let records = smoke_annotations(&run.truth);
    let anon: Vec<AnonymizedDocument> = read_jsonl(&dir.join("work/anonymized.jsonl")).unwrap();
    let text: BTreeMap<&str, &str> = anon.iter().map(|a| (a.doc_id.as_str(), a.masked_text.as_str())).collect();
    let mut by: BTreeMap<&str, Vec<SheetRow>> = BTreeMap::new();
    for r in &records {
        by.entry(&r.annotator_id).or_default().push(SheetRow {
            doc_id: r.doc_id.clone(),
            text: text[r.doc_id.as_str()].to_string(),
            labels: Some(r.labels),
            annotated_at: None,
        });
    }
    for (a, rows) in by {
        export_sheet(&dir.join(format!("work/sheets/{a}.csv")), &rows).unwrap();
    }
}

/// ingest through report on a smoke copy, with annotation via sheets.
pub fn smoke_pipeline(dir: &Path, workers: usize) {
    let w = workers.to_string();
    ok(dir, &["ingest"]);
    ok(dir, &["anonymize"]);
    ok(dir, &["sample"]);
    ok(dir, &["export-sheets"]);
    fill_sheets(dir);
    ok(dir, &["import-sheets"]);
    ok(dir, &["gold"]);
    ok(dir, &["classify", "--set", "gold", "--workers", &w]);
    ok(dir, &["evaluate"]);
    ok(dir, &["analyze"]);
    ok(dir, &["report"]);
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, p: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(p).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                walk(root, &e, out);
            } else {
                out.insert(e.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&e).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// A work directory over the 1702-item gold fixture with replay files for
/// the simulated models.
pub fn gold_dir() -> tempfile::TempDir {
    let t = tempfile::tempdir().unwrap();
    let root = t.path();
    let g = gold_fixture(DATA_SEED);
    let anonymizer = Anonymizer::default();
    let anon: Vec<AnonymizedDocument> = g.documents.iter().map(|d| anonymizer.mask(d).unwrap()).collect();
    write_jsonl(&root.join("work/documents.jsonl"), &g.documents).unwrap();
    write_jsonl(&root.join("work/anonymized.jsonl"), &anon).unwrap();
    std::fs::copy(data_dir().join("gold/gold.csv"), root.join("work/gold.csv")).unwrap();
    std::fs::copy(data_dir().join("gold/exemplars.json"), root.join("exemplars.json")).unwrap();
    let exemplars = exemplars_from(&g.documents, &g.gold);
    let mut cfg = String::from("[paths]\nexemplars = \"exemplars.json\"\n");
    for (model, err) in SIMULATED_MODELS {
        for mode in PromptMode::ALL {
            let recs = record_replay(&anon, &prompt_spec(mode, &exemplars), &g.truth, model, err);
            write_jsonl(&root.join(format!("replay/{model}__{}.jsonl", mode.id())), &recs).unwrap();
        }
        cfg.push_str(&format!(
            "\n[[models]]\nmodel_id = \"{model}\"\nbackend = \"replay\"\nendpoint = \"replay/{model}__{{mode}}.jsonl\"\n"
        ));
    }
    std::fs::write(root.join("pehlens.toml"), cfg).unwrap();
    t
}
