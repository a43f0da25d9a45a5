//! Score tables, SVG figures and the on-disk report bundle.
//!
//! Tables are pure functions of their inputs. Figures are hand-written SVG
//! so output is stable across platforms and needs no font or raster stack.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{CorrelationMatrix, GroupComparison, SourceComparison};
use crate::classifier::PromptMode;
use crate::corpus::SourceKind;
use crate::io::{sha256_hex, write_atomic};
use crate::metrics::{EvalReport, Scope};
use crate::taxonomy::{Category, NUM_CATEGORIES};

/// A rectangular table of already-formatted cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 cells")
    }

    pub fn to_markdown(&self) -> String {
        let esc = |s: &str| s.replace('|', "\\|");
        let mut out = String::new();
        let line = |cells: &[String]| format!("| {} |\n", cells.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | "));
        out.push_str(&line(&self.header));
        out.push_str(&format!("|{}\n", "---|".repeat(self.header.len())));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }

    /// Cell at the row whose leading cells equal `key`, in column `col`.
    pub fn cell(&self, key: &[&str], col: &str) -> Option<&str> {
        let ci = self.header.iter().position(|h| h == col)?;
        self.rows
            .iter()
            .find(|r| r.iter().zip(key).all(|(a, b)| a == b))
            .map(|r| r[ci].as_str())
    }
}

pub fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

fn scope_label(s: Scope) -> &'static str {
    match s {
        Scope::Source(k) => k.label(),
        Scope::Weighted => "Weighted Avg",
    }
}

const SCOPE_ORDER: [Scope; 5] = [
    Scope::Source(SourceKind::Reddit),
    Scope::Source(SourceKind::X),
    Scope::Source(SourceKind::News),
    Scope::Source(SourceKind::Council),
    Scope::Weighted,
];

/// Models in order of first appearance.
fn model_order(reports: &[EvalReport]) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for r in reports {
        if !out.contains(&r.model_id.as_str()) {
            out.push(&r.model_id);
        }
    }
    out
}

fn column(model: &str, mode: PromptMode) -> String {
    format!("{model} {}", mode.label())
}

/// Macro and micro F1 by source then weighted; one column per
/// (model, mode). Missing cells are empty.
pub fn score_table(reports: &[EvalReport]) -> Table {
    let models = model_order(reports);
    let mut header = vec!["Source".to_string(), "Metric".to_string()];
    for m in &models {
        for mode in PromptMode::ALL {
            header.push(column(m, mode));
        }
    }
    let mut rows = Vec::new();
    for scope in SCOPE_ORDER {
        if !reports.iter().any(|r| r.scope == scope) {
            continue;
        }
        for (metric, get) in [("Macro", (|r: &EvalReport| r.macro_f1) as fn(&EvalReport) -> f64), ("Micro", |r| r.micro_f1)] {
            let mut row = vec![scope_label(scope).to_string(), metric.to_string()];
            for m in &models {
                for mode in PromptMode::ALL {
                    let v = reports.iter().find(|r| r.scope == scope && r.mode == mode && r.model_id == *m);
                    row.push(v.map(|r| fmt2(get(r))).unwrap_or_default());
                }
            }
            rows.push(row);
        }
    }
    Table { header, rows }
}

/// Per-category F1 for one model: rows are categories, columns are
/// (source, mode) pairs present in the reports.
pub fn category_table(reports: &[EvalReport], model_id: &str) -> Table {
    let mine: Vec<&EvalReport> = reports.iter().filter(|r| r.model_id == model_id).collect();
    let mut cols = Vec::new();
    for scope in SCOPE_ORDER {
        for mode in PromptMode::ALL {
            if let Some(r) = mine.iter().find(|r| r.scope == scope && r.mode == mode) {
                cols.push((format!("{} {}", scope_label(scope), mode.label()), *r));
            }
        }
    }
    let mut header = vec!["Category".to_string()];
    header.extend(cols.iter().map(|c| c.0.clone()));
    let mut rows: Vec<Vec<String>> = Category::ALL
        .iter()
        .map(|c| {
            let mut row = vec![c.short_label().to_string()];
            row.extend(cols.iter().map(|(_, r)| fmt2(r.per_category_f1[c.index()])));
            row
        })
        .collect();
    if !cols.is_empty() {
        let mut row = vec!["Macro".to_string()];
        row.extend(cols.iter().map(|(_, r)| fmt2(r.macro_f1)));
        rows.push(row);
    }
    Table { header, rows }
}

pub fn leaderboard_table(reports: &[EvalReport]) -> Table {
    let header = ["Rank", "Model", "Mode", "Macro", "Micro"].map(String::from).to_vec();
    let rows = crate::metrics::leaderboard(reports)
        .into_iter()
        .map(|e| vec![e.rank.to_string(), e.model_id, e.mode.label().to_string(), fmt2(e.macro_f1), fmt2(e.micro_f1)])
        .collect();
    Table { header, rows }
}

pub fn correlation_table(m: &CorrelationMatrix) -> Table {
    let mut header = vec!["Category".to_string()];
    header.extend(Category::ALL.iter().map(|c| c.id().to_string()));
    let rows = Category::ALL
        .iter()
        .map(|a| {
            let mut row = vec![a.id().to_string()];
            row.extend(Category::ALL.iter().map(|b| format!("{:.4}", m.get(*a, *b))));
            row
        })
        .collect();
    Table { header, rows }
}

pub fn comparison_table(c: &GroupComparison) -> Table {
    let header = [
        "Category".to_string(),
        format!("Prevalence {}", c.label_a),
        format!("Prevalence {}", c.label_b),
        "Statistic".to_string(),
        "P Value".to_string(),
        "Significant".to_string(),
        "Direction".to_string(),
    ]
    .to_vec();
    let rows = c
        .rows
        .iter()
        .map(|r| {
            let dir = match r.direction() {
                1 => c.label_a.clone(),
                -1 => c.label_b.clone(),
                _ => String::new(),
            };
            vec![
                r.category.id().to_string(),
                format!("{:.4}", r.prevalence_a),
                format!("{:.4}", r.prevalence_b),
                format!("{:.4}", r.statistic),
                format!("{:.3e}", r.p_value),
                r.significant.to_string(),
                dir,
            ]
        })
        .collect();
    Table { header, rows }
}

pub fn source_prevalence_table(c: &SourceComparison) -> Table {
    let mut header = vec!["Category".to_string()];
    header.extend(c.prevalence.iter().map(|p| format!("{} (n={})", p.source.label(), p.n)));
    let rows = Category::ALL
        .iter()
        .map(|cat| {
            let mut row = vec![cat.id().to_string()];
            row.extend(c.prevalence.iter().map(|p| format!("{:.4}", p.prevalence[cat.index()])));
            row
        })
        .collect();
    Table { header, rows }
}

// ---------------------------------------------------------------- figures

/// Blue for -1, white for 0, red for +1; clamps outside [-1, 1].
pub fn diverging_color(v: f64) -> String {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const CELL: usize = 28;
const LABEL_W: usize = 190;

/// Correlation heatmap. Colour scale is fixed to [-1, 1] so 0 is white.
pub fn heatmap_svg(m: &CorrelationMatrix, title: &str) -> String {
    let n = NUM_CATEGORIES;
    let w = LABEL_W + n * CELL + 20;
    let h = 40 + LABEL_W + n * CELL + 20;
    let top = 40 + LABEL_W;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#, w / 2, xml_escape(title));
    for (j, c) in Category::ALL.iter().enumerate() {
        let x = LABEL_W + j * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text transform="translate({x},{}) rotate(-60)">{}</text>"#,
            top - 6,
            xml_escape(c.short_label())
        );
    }
    for (i, a) in Category::ALL.iter().enumerate() {
        let y = top + i * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 6,
            y + CELL / 2 + 4,
            xml_escape(a.short_label())
        );
        for (j, b) in Category::ALL.iter().enumerate() {
            let v = m.get(*a, *b);
            let _ = writeln!(
                s,
                r#"<rect class="cell" data-row="{i}" data-col="{j}" x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="{}"><title>{:.3}</title></rect>"#,
                LABEL_W + j * CELL,
                diverging_color(v),
                v
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

const PALETTE: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

/// Grouped bars: one group per category, one bar per series. Values are
/// prevalences in [0, 1].
pub fn grouped_bars_svg(title: &str, series: &[(String, [f64; NUM_CATEGORIES])]) -> String {
    let k = series.len().max(1);
    let bar = 10usize;
    let group = k * bar + 8;
    let plot_h = 200.0;
    let left = 50;
    let base = 40 + plot_h as usize;
    let w = left + NUM_CATEGORIES * group + 20;
    let h = base + 170 + 20 * k;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#, w / 2, xml_escape(title));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, w - 20);
    let _ = writeln!(s, r#"<line x1="{left}" y1="40" x2="{left}" y2="{base}" stroke="black"/>"#);
    for t in [0.0, 0.5, 1.0] {
        let y = base as f64 - t * plot_h;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{t:.1}</text>"#, left - 4, y + 4.0);
    }
    for (ci, c) in Category::ALL.iter().enumerate() {
        let gx = left + 4 + ci * group;
        for (si, (_, vals)) in series.iter().enumerate() {
            let v = vals[ci].clamp(0.0, 1.0);
            let bh = v * plot_h;
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-series="{si}" data-cat="{ci}" x="{}" y="{:.2}" width="{bar}" height="{:.2}" fill="{}"><title>{:.4}</title></rect>"#,
                gx + si * bar,
                base as f64 - bh,
                bh,
                PALETTE[si % PALETTE.len()],
                vals[ci]
            );
        }
        let _ = writeln!(
            s,
            r#"<text transform="translate({},{}) rotate(-60)" text-anchor="end">{}</text>"#,
            gx + group / 2,
            base + 12,
            xml_escape(c.short_label())
        );
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let y = base + 160 + si * 20;
        let _ = writeln!(s, r#"<rect x="{left}" y="{y}" width="12" height="12" fill="{}"/>"#, PALETTE[si % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, left + 18, y + 10, xml_escape(name));
    }
    s.push_str("</svg>\n");
    s
}

pub fn group_comparison_svg(c: &GroupComparison, title: &str) -> String {
    let mut a = [0.0; NUM_CATEGORIES];
    let mut b = [0.0; NUM_CATEGORIES];
    for r in &c.rows {
        a[r.category.index()] = r.prevalence_a;
        b[r.category.index()] = r.prevalence_b;
    }
    grouped_bars_svg(title, &[(c.label_a.clone(), a), (c.label_b.clone(), b)])
}

pub fn source_comparison_svg(c: &SourceComparison, title: &str) -> String {
    let series: Vec<(String, [f64; NUM_CATEGORIES])> =
        c.prevalence.iter().map(|p| (p.source.label().to_string(), p.prevalence)).collect();
    grouped_bars_svg(title, &series)
}

// ---------------------------------------------------------------- bundle

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub tool: String,
    pub version: String,
    pub metadata: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

/// Everything a report run produces, keyed by path relative to the
/// bundle root.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub tables: BTreeMap<String, String>,
    pub figures: BTreeMap<String, String>,
    pub manifest: BundleManifest,
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub reports: Vec<EvalReport>,
    pub correlation: Option<CorrelationMatrix>,
    pub city_comparison: Option<GroupComparison>,
    pub source_comparison: Option<SourceComparison>,
    /// Free-form run metadata copied into the manifest.
    pub metadata: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn render_tables(inputs: &ReportInputs) -> BTreeMap<String, String> {
    let mut t = BTreeMap::new();
    let mut put = |name: &str, table: Table| {
        t.insert(format!("tables/{name}.csv"), table.to_csv());
        t.insert(format!("tables/{name}.md"), table.to_markdown());
    };
    put("scores", score_table(&inputs.reports));
    put("leaderboard", leaderboard_table(&inputs.reports));
    for m in model_order(&inputs.reports) {
        put(&format!("categories_{}", crate::corpus::slug(m)), category_table(&inputs.reports, m));
    }
    if let Some(m) = &inputs.correlation {
        put("correlation", correlation_table(m));
    }
    if let Some(c) = &inputs.city_comparison {
        put("city_comparison", comparison_table(c));
    }
    if let Some(c) = &inputs.source_comparison {
        put("source_prevalence", source_prevalence_table(c));
        for g in &c.contrasts {
            put(
                &format!("source_{}_vs_{}", crate::corpus::slug(&g.label_a), crate::corpus::slug(&g.label_b)),
                comparison_table(g),
            );
        }
    }
    t
}

pub fn render_figures(inputs: &ReportInputs) -> BTreeMap<String, String> {
    let mut f = BTreeMap::new();
    if let Some(m) = &inputs.correlation {
        f.insert("figures/correlation.svg".into(), heatmap_svg(m, "Category correlation"));
    }
    if let Some(c) = &inputs.city_comparison {
        f.insert(
            "figures/city_comparison.svg".into(),
            group_comparison_svg(c, &format!("{} vs {} cities", c.label_a, c.label_b)),
        );
    }
    if let Some(c) = &inputs.source_comparison {
        f.insert("figures/source_comparison.svg".into(), source_comparison_svg(c, "Category prevalence by source"));
    }
    f
}

pub fn build_bundle(inputs: &ReportInputs) -> ReportBundle {
    let tables = render_tables(inputs);
    let figures = render_figures(inputs);
    let artifacts = tables
        .iter()
        .chain(&figures)
        .map(|(p, body)| Artifact {
            path: p.clone(),
            sha256: sha256_hex(body.as_bytes()),
            bytes: body.len(),
        })
        .collect();
    ReportBundle {
        tables,
        figures,
        manifest: BundleManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            metadata: inputs.metadata.clone(),
            artifacts,
        },
    }
}

impl ReportBundle {
    pub fn write(&self, root: &Path) -> std::io::Result<()> {
        for (p, body) in self.tables.iter().chain(&self.figures) {
            write_atomic(&root.join(p), body.as_bytes())?;
        }
        let json = serde_json::to_vec_pretty(&self.manifest).map_err(std::io::Error::other)?;
        write_atomic(&root.join(MANIFEST_FILE), &json)
    }
}

/// Checks every manifest entry against the files under `root`.
pub fn verify_bundle(root: &Path) -> Result<BundleManifest, String> {
    let raw = std::fs::read(root.join(MANIFEST_FILE)).map_err(|e| format!("manifest: {e}"))?;
    let m: BundleManifest = serde_json::from_slice(&raw).map_err(|e| format!("manifest: {e}"))?;
    for a in &m.artifacts {
        let body = std::fs::read(root.join(&a.path)).map_err(|e| format!("{}: {e}", a.path))?;
        if sha256_hex(&body) != a.sha256 {
            return Err(format!("{}: hash mismatch", a.path));
        }
    }
    Ok(m)
}
