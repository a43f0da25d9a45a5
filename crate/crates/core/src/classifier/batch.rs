use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::AnonymizedDocument;
use crate::io::sha256_hex;

use super::backend::from_config;
use super::cache::{CachedResponse, ResponseCache};
use super::invoke::{InvokeError, Invoker, SystemClock};
use super::{parse_response, build_prompt, ConfigError, ModelConfig, ParseStatus, Prediction, PromptSpec};

/// Share of failed predictions above which a run is flagged degraded.
pub const DEGRADED_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("aborted: {0}")]
    Auth(String),
    #[error("duplicate doc_id {0}")]
    DuplicateDoc(String),
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub workers: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions { workers: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocFailure {
    pub doc_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ModelConfig,
    pub spec: PromptSpec,
    pub documents: usize,
    pub ok: usize,
    pub repaired: usize,
    pub failed: usize,
    pub cache_hits: usize,
    pub invocations: usize,
    pub retries: u64,
    pub call_failures: Vec<DocFailure>,
    pub degraded: bool,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Sorted by doc_id.
    pub predictions: Vec<Prediction>,
    pub manifest: RunManifest,
}

/// Runs a batch against the backend named by `config`, in real time.
pub fn classify_batch(
    docs: &[AnonymizedDocument],
    config: &ModelConfig,
    spec: &PromptSpec,
    cache: Option<&ResponseCache>,
    opts: &BatchOptions,
) -> Result<BatchOutput, BatchError> {
    config.validate()?;
    spec.validate()?;
    let backend = from_config(config)?;
    let invoker = Invoker::new(
        Arc::from(backend),
        config.retry.clone(),
        config.rate_limit,
        Arc::new(SystemClock::new()),
    );
    classify_batch_with(docs, config, &invoker, spec, cache, opts)
}

enum Outcome {
    Hit(String),
    Called { text: String, retries: u32 },
    Failed(String),
}

/// Same as [`classify_batch`] with a caller-supplied invoker.
pub fn classify_batch_with(
    docs: &[AnonymizedDocument],
    config: &ModelConfig,
    invoker: &Invoker,
    spec: &PromptSpec,
    cache: Option<&ResponseCache>,
    opts: &BatchOptions,
) -> Result<BatchOutput, BatchError> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| docs[a].doc_id.cmp(&docs[b].doc_id));
    for w in order.windows(2) {
        if docs[w[0]].doc_id == docs[w[1]].doc_id {
            return Err(BatchError::DuplicateDoc(docs[w[0]].doc_id.clone()));
        }
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let auth_error: Mutex<Option<String>> = Mutex::new(None);
    let outcomes: Mutex<Vec<Option<Outcome>>> =
        Mutex::new((0..docs.len()).map(|_| None).collect());

    let work = || loop {
        if abort.load(Ordering::SeqCst) {
            return;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= order.len() {
            return;
        }
        let doc = &docs[order[i]];
        let prompt = build_prompt(doc, spec);
        let key = ResponseCache::key(
            &config.model_id,
            spec.mode,
            &spec.instruction_version,
            &doc.doc_id,
            &prompt,
        );
        let cached = cache.and_then(|c| c.get(&key));
        let outcome = match cached {
            Some(hit) => Outcome::Hit(hit.response),
            None => match invoker.invoke(&prompt) {
                Ok(inv) => {
                    if let Some(c) = cache {
                        let entry = CachedResponse {
                            model_id: config.model_id.clone(),
                            mode: spec.mode,
                            instruction_version: spec.instruction_version.clone(),
                            doc_id: doc.doc_id.clone(),
                            prompt_sha256: sha256_hex(prompt.as_bytes()),
                            response: inv.text.clone(),
                        };
                        if let Err(e) = c.put(&key, &entry) {
                            log::warn!("cache write failed for {}: {e}", doc.doc_id);
                        }
                    }
                    Outcome::Called {
                        text: inv.text,
                        retries: inv.retries,
                    }
                }
                Err(InvokeError::Auth(m)) => {
                    abort.store(true, Ordering::SeqCst);
                    *auth_error.lock().unwrap() = Some(m);
                    return;
                }
                Err(e) => Outcome::Failed(e.to_string()),
            },
        };
        outcomes.lock().unwrap()[i] = Some(outcome);
    };

    let workers = opts.workers.max(1).min(docs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(work);
        }
    });

    if let Some(m) = auth_error.into_inner().unwrap() {
        return Err(BatchError::Auth(m));
    }

    let mut manifest = RunManifest {
        config: config.clone(),
        spec: spec.clone(),
        documents: docs.len(),
        ok: 0,
        repaired: 0,
        failed: 0,
        cache_hits: 0,
        invocations: 0,
        retries: 0,
        call_failures: Vec::new(),
        degraded: false,
    };
    let mut predictions = Vec::with_capacity(docs.len());
    for (i, outcome) in outcomes.into_inner().unwrap().into_iter().enumerate() {
        let doc = &docs[order[i]];
        let raw = match outcome.expect("every document is processed") {
            Outcome::Hit(text) => {
                manifest.cache_hits += 1;
                Some(text)
            }
            Outcome::Called { text, retries } => {
                manifest.invocations += 1;
                manifest.retries += retries as u64;
                Some(text)
            }
            Outcome::Failed(error) => {
                manifest.invocations += 1;
                manifest.call_failures.push(DocFailure {
                    doc_id: doc.doc_id.clone(),
                    error,
                });
                None
            }
        };
        let (labels, status, raw) = match raw {
            Some(raw) => {
                let (labels, status) = parse_response(&raw);
                (labels, status, raw)
            }
            None => (Default::default(), ParseStatus::Failed, String::new()),
        };
        match status {
            ParseStatus::Ok => manifest.ok += 1,
            ParseStatus::Repaired => manifest.repaired += 1,
            ParseStatus::Failed => manifest.failed += 1,
        }
        predictions.push(Prediction {
            doc_id: doc.doc_id.clone(),
            model_id: config.model_id.clone(),
            mode: spec.mode,
            labels,
            raw_response: raw,
            parse_status: status,
        });
    }
    manifest.degraded =
        !docs.is_empty() && manifest.failed as f64 / docs.len() as f64 > DEGRADED_THRESHOLD;
    Ok(BatchOutput {
        predictions,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::backend::{BackendError, Completion, FnBackend, ReplayBackend};
    use crate::classifier::invoke::SimClock;
    use crate::classifier::{BackendKind, Decoding, RetryPolicy};
    use crate::taxonomy::{Category, LabelVector};
    use std::sync::atomic::AtomicU32;

    fn config() -> ModelConfig {
        ModelConfig {
            model_id: "stub".into(),
            backend: BackendKind::LocalInference,
            endpoint: "http://localhost".into(),
            remote_model: None,
            decoding: Decoding::default(),
            rate_limit: None,
            retry: RetryPolicy {
                max_attempts: 2,
                backoff_base: 0.5,
            },
            api_key_env: None,
        }
    }

    fn docs(n: usize) -> Vec<AnonymizedDocument> {
        (0..n)
            .rev()
            .map(|i| AnonymizedDocument {
                doc_id: format!("doc{i:03}"),
                masked_text: format!("text number {i}"),
                entity_map: vec![],
            })
            .collect()
    }

    fn labels_for(prompt: &str) -> LabelVector {
        let n: u16 = prompt
            .rsplit("text number ")
            .next()
            .and_then(|s| s.split_whitespace().next())
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        LabelVector::from_bits(n.wrapping_mul(2654) ^ 0x5a5a)
    }

    fn invoker(backend: impl crate::classifier::ModelBackend + 'static) -> Invoker {
        Invoker::new(
            Arc::new(backend),
            config().retry,
            None,
            Arc::new(SimClock::new()),
        )
    }

    fn echo_backend(calls: Arc<AtomicU32>) -> FnBackend {
        FnBackend::new("stub", move |p| {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok(Completion::text(labels_for(p).to_json_object()))
        })
    }

    #[test]
    fn empty_batch_has_valid_manifest() {
        let calls = Arc::new(AtomicU32::new(0));
        let out = classify_batch_with(
            &[],
            &config(),
            &invoker(echo_backend(calls)),
            &PromptSpec::zero_shot("v1"),
            None,
            &BatchOptions::default(),
        )
        .unwrap();
        assert!(out.predictions.is_empty());
        assert_eq!(out.manifest.documents, 0);
        assert!(!out.manifest.degraded);
        serde_json::to_string(&out.manifest).unwrap();
    }

    #[test]
    fn second_run_is_all_cache_hits() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(tmp.path()).unwrap();
        let calls = Arc::new(AtomicU32::new(0));
        let inv = invoker(echo_backend(calls.clone()));
        let spec = PromptSpec::zero_shot("v1");
        let d = docs(25);
        let first =
            classify_batch_with(&d, &config(), &inv, &spec, Some(&cache), &BatchOptions::default())
                .unwrap();
        assert_eq!(first.manifest.invocations, 25);
        assert_eq!(calls.load(Ordering::SeqCst), 25);
        let second =
            classify_batch_with(&d, &config(), &inv, &spec, Some(&cache), &BatchOptions::default())
                .unwrap();
        assert_eq!(second.manifest.cache_hits, 25);
        assert_eq!(second.manifest.invocations, 0);
        assert_eq!(calls.load(Ordering::SeqCst), 25);
        assert_eq!(first.predictions, second.predictions);
    }

    #[test]
    fn output_sorted_and_independent_of_workers() {
        let spec = PromptSpec::zero_shot("v1");
        let d = docs(40);
        let records: Vec<_> = d
            .iter()
            .map(|doc| {
                let p = build_prompt(doc, &spec);
                let r = labels_for(&p).to_json_object();
                ReplayBackend::record(&p, r)
            })
            .collect();
        let mut runs = Vec::new();
        for workers in [1, 3, 8] {
            let inv = invoker(ReplayBackend::new("replay", records.clone()));
            let out = classify_batch_with(&d, &config(), &inv, &spec, None, &BatchOptions { workers })
                .unwrap();
            runs.push(serde_json::to_string(&out.predictions).unwrap());
            let ids: Vec<_> = out.predictions.iter().map(|p| p.doc_id.clone()).collect();
            let mut sorted = ids.clone();
            sorted.sort();
            assert_eq!(ids, sorted);
            assert_eq!(out.manifest.ok, 40);
        }
        assert!(runs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn failures_are_recorded_and_mark_degraded() {
        let b = FnBackend::new("flaky", |p| {
            if p.contains("text number 1") {
                Err(BackendError::Transient("503".into()))
            } else {
                Ok(Completion::text(LabelVector::EMPTY.with(Category::Racist).to_json_object()))
            }
        });
        let out = classify_batch_with(
            &docs(20),
            &config(),
            &invoker(b),
            &PromptSpec::zero_shot("v1"),
            None,
            &BatchOptions::default(),
        )
        .unwrap();
        // "text number 1" also matches 10..19
        assert_eq!(out.manifest.call_failures.len(), 11);
        assert_eq!(out.manifest.failed, 11);
        assert_eq!(out.predictions.len(), 20);
        assert!(out.manifest.degraded);
        for p in out.predictions.iter().filter(|p| !p.is_scorable()) {
            assert_eq!(p.labels, LabelVector::EMPTY);
        }
    }

    #[test]
    fn one_failure_in_twenty_is_not_degraded() {
        let b = FnBackend::new("flaky", |p| {
            if p.contains("text number 7") {
                Err(BackendError::Fatal("400".into()))
            } else {
                Ok(Completion::text(LabelVector::EMPTY.to_json_object()))
            }
        });
        let out = classify_batch_with(
            &docs(20),
            &config(),
            &invoker(b),
            &PromptSpec::zero_shot("v1"),
            None,
            &BatchOptions::default(),
        )
        .unwrap();
        assert_eq!(out.manifest.failed, 1);
        assert!(!out.manifest.degraded);
    }

    #[test]
    fn auth_failure_aborts() {
        let b = FnBackend::new("bad-key", |_| Err(BackendError::Auth("401".into())));
        let r = classify_batch_with(
            &docs(5),
            &config(),
            &invoker(b),
            &PromptSpec::zero_shot("v1"),
            None,
            &BatchOptions::default(),
        );
        assert!(matches!(r, Err(BatchError::Auth(_))));
    }
}
