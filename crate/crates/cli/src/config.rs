//! TOML run configuration. Relative paths resolve against the directory of
//! the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use pehlens::analysis::TestKind;
use pehlens::anonymizer::{Anonymizer, HttpNer, RuleNer};
use pehlens::classifier::{BackendKind, ModelConfig};
use pehlens::corpus::{default_roster, default_window, CityEntry, Lexicon, SourceKind};
use pehlens::io::sha256_hex;
use pehlens::metrics::SourceWeights;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "d_corpus")]
    pub corpus_dir: PathBuf,
    #[serde(default = "d_work")]
    pub work_dir: PathBuf,
    #[serde(default = "d_out")]
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub county_features: Option<PathBuf>,
    /// JSON array of five exemplars for few-shot prompts.
    pub exemplars: Option<PathBuf>,
    /// Gold-standard CSV; defaults to `work_dir/gold.csv`.
    pub gold: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
}

fn d_corpus() -> PathBuf {
    "corpus".into()
}
fn d_work() -> PathBuf {
    "work".into()
}
fn d_out() -> PathBuf {
    "report".into()
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus_dir: d_corpus(),
            work_dir: d_work(),
            out_dir: d_out(),
            cache_dir: None,
            lexicon: None,
            county_features: None,
            exemplars: None,
            gold: None,
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    #[serde(deserialize_with = "date")]
    pub start: NaiveDate,
    #[serde(deserialize_with = "date")]
    pub end: NaiveDate,
}

/// Accepts a bare TOML date or a quoted `YYYY-MM-DD` string.
fn date<'de, D: serde::Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Toml(toml::value::Datetime),
        Text(String),
    }
    let s = match Raw::deserialize(d)? {
        Raw::Toml(t) => t.to_string(),
        Raw::Text(s) => s,
    };
    NaiveDate::parse_from_str(&s, "%Y-%m-%d").map_err(|e| serde::de::Error::custom(format!("date {s:?}: {e}")))
}

impl Default for Window {
    fn default() -> Self {
        let (start, end) = default_window();
        Window { start, end }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum NerConfig {
    #[default]
    Rule,
    Http {
        endpoint: String,
        #[serde(default = "d_timeout")]
        timeout_secs: u64,
    },
}

fn d_timeout() -> u64 {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_version")]
    pub instruction_version: String,
    #[serde(default = "d_per_cell")]
    pub per_cell: usize,
    #[serde(default = "d_workers")]
    pub workers: usize,
    #[serde(default = "d_annotators")]
    pub annotators: Vec<String>,
    #[serde(default)]
    pub test: Option<TestKind>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub window: Window,
    /// Empty means the built-in ten-city roster.
    #[serde(default)]
    pub cities: Vec<CityEntry>,
    /// Per-source weights for the cross-source average; defaults to corpus
    /// unit totals.
    #[serde(default)]
    pub weights: Option<BTreeMap<SourceKind, f64>>,
    #[serde(default)]
    pub anonymizer: NerConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
}

fn d_seed() -> u64 {
    0
}
fn d_alpha() -> f64 {
    0.05
}
fn d_version() -> String {
    pehlens::fixtures::INSTRUCTION_VERSION.into()
}
fn d_per_cell() -> usize {
    50
}
fn d_workers() -> usize {
    4
}
fn d_annotators() -> Vec<String> {
    pehlens::fixtures::ANNOTATORS.iter().map(|s| s.to_string()).collect()
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
    pub sha256: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let c: RunConfig = toml::from_str(text).context("invalid config")?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha must be in (0, 1), got {}", self.alpha);
        }
        if self.per_cell == 0 {
            bail!("per_cell must be positive");
        }
        if self.workers == 0 {
            bail!("workers must be positive");
        }
        if self.window.start >= self.window.end {
            bail!("window start {} is not before end {}", self.window.start, self.window.end);
        }
        if self.annotators.is_empty() {
            bail!("annotator roster is empty");
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.annotators {
            if !seen.insert(a) {
                bail!("annotator {a:?} listed twice");
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for m in &self.models {
            m.validate().with_context(|| format!("model {:?}", m.model_id))?;
            if !ids.insert(&m.model_id) {
                bail!("model {:?} listed twice", m.model_id);
            }
        }
        if let Some(w) = &self.weights {
            for (s, v) in w {
                if !(*v > 0.0) {
                    bail!("weight for {s} must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn roster(&self) -> Vec<CityEntry> {
        if self.cities.is_empty() {
            default_roster()
        } else {
            self.cities.clone()
        }
    }

    pub fn test_kind(&self) -> TestKind {
        self.test.unwrap_or(TestKind::ZTest)
    }

    pub fn source_weights(&self) -> SourceWeights {
        match &self.weights {
            Some(w) => SourceWeights(w.clone()),
            None => SourceWeights::default(),
        }
    }
}

impl Loaded {
    pub fn from_file(path: &Path) -> Result<Loaded> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config = RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Loaded {
            config,
            base,
            sha256: sha256_hex(text.as_bytes()),
        })
    }

    /// Built-in defaults rooted at the current directory.
    pub fn defaults() -> Loaded {
        let config = RunConfig::parse("").expect("defaults are valid");
        Loaded {
            config,
            base: PathBuf::from("."),
            sha256: sha256_hex(b""),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// `p` relative to the config directory when it lies beneath it.
    pub fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.base).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    pub fn work(&self) -> PathBuf {
        self.resolve(&self.config.paths.work_dir)
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        match &self.config.paths.lexicon {
            Some(p) => Ok(Lexicon::from_file(&self.resolve(p))?),
            None => Ok(Lexicon::default()),
        }
    }

    pub fn anonymizer(&self) -> Result<Anonymizer> {
        Ok(match &self.config.anonymizer {
            NerConfig::Rule => Anonymizer::new(Box::new(RuleNer::default())),
            NerConfig::Http { endpoint, timeout_secs } => Anonymizer::new(Box::new(HttpNer::new(
                endpoint.clone(),
                std::time::Duration::from_secs(*timeout_secs),
            )?)),
        })
    }

    /// Every input file the config names must exist. Outputs and the corpus
    /// directory are checked by the commands that use them.
    pub fn check_paths(&self) -> Result<()> {
        let p = &self.config.paths;
        for (what, path) in [
            ("lexicon", &p.lexicon),
            ("county table", &p.county_features),
            ("exemplar file", &p.exemplars),
        ] {
            if let Some(path) = path {
                self.require_file(what, path)?;
            }
        }
        if let Some(d) = &p.ui_dir {
            if !self.resolve(d).is_dir() {
                bail!("UI directory not found: {}", self.resolve(d).display());
            }
        }
        for m in self.config.models.iter().filter(|m| m.backend == BackendKind::Replay) {
            let modes: &[&str] = if m.endpoint.contains("{mode}") { &["zero_shot", "few_shot"] } else { &[""] };
            for mode in modes {
                let e = m.endpoint.replace("{mode}", mode);
                self.require_file(&format!("replay file for {:?}", m.model_id), Path::new(&e))?;
            }
        }
        Ok(())
    }

    pub fn require_file(&self, what: &str, p: &Path) -> Result<PathBuf> {
        let full = self.resolve(p);
        if !full.is_file() {
            bail!("{what} not found: {}", full.display());
        }
        Ok(full)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.roster().len(), 10);
        assert_eq!(c.annotators.len(), 3);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("alpha = 1.5").is_err());
        assert!(RunConfig::parse("annotators = []").is_err());
        assert!(RunConfig::parse("bogus = 1").is_err());
        let err = RunConfig::parse("[window]\nstart = 2020-01-01\nend = 2019-01-01").unwrap_err();
        assert!(err.to_string().contains("not before"), "{err}");
        let w = RunConfig::parse("[window]\nstart = 2019-01-01\nend = \"2020-06-30\"").unwrap().window;
        assert_eq!(w.end, NaiveDate::from_ymd_opt(2020, 6, 30).unwrap());
        let dup = r#"
[[models]]
model_id = "m"
backend = "replay"
endpoint = "a.jsonl"
[[models]]
model_id = "m"
backend = "replay"
endpoint = "b.jsonl"
"#;
        assert!(RunConfig::parse(dup).is_err());
    }

    #[test]
    fn parses_models_and_ner() {
        let c = RunConfig::parse(
            r#"
seed = 7
[anonymizer]
backend = "http"
endpoint = "http://127.0.0.1:9000/ner"
[weights]
reddit = 1.0
x = 1.0
news = 1.0
council = 1.0
[[models]]
model_id = "gpt"
backend = "remote_api"
endpoint = "https://api.example.com/v1/chat/completions"
api_key_env = "OPENAI_API_KEY"
rate_limit = 60.0
"#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert!(matches!(c.anonymizer, NerConfig::Http { .. }));
        assert_eq!(c.source_weights().get(SourceKind::News), Some(1.0));
        assert_eq!(c.models[0].rate_limit, Some(60.0));
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let body = readme.split("## Configuration").nth(1).unwrap();
        let toml = body.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
        let c = RunConfig::parse(toml).unwrap();
        assert_eq!(c.models.len(), 3);
        assert_eq!(c.roster().len(), 1);
        assert_eq!(c.test_kind(), TestKind::ZTest);
        assert_eq!(c.source_weights().get(SourceKind::Reddit), Some(34447.0));
    }

    #[test]
    fn missing_inputs_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "[[models]]\nmodel_id = \"m\"\nbackend = \"replay\"\nendpoint = \"r__{mode}.jsonl\"\n").unwrap();
        std::fs::write(dir.path().join("r__zero_shot.jsonl"), "").unwrap();
        let l = Loaded::from_file(&cfg).unwrap();
        let err = l.check_paths().unwrap_err().to_string();
        assert!(err.contains("r__few_shot.jsonl"), "{err}");
        std::fs::write(dir.path().join("r__few_shot.jsonl"), "").unwrap();
        l.check_paths().unwrap();

        std::fs::write(&cfg, "[paths]\nlexicon = \"nope.txt\"\n").unwrap();
        assert!(Loaded::from_file(&cfg).unwrap().check_paths().is_err());
    }
}
