//! Toolkit for detecting and measuring bias against people experiencing
//! homelessness (PEH) in multi-source text corpora.
//!
//! The pipeline runs ingest → lexicon filter → anonymize → multi-label
//! classification with language models → evaluation against a human gold
//! standard → statistical analysis by city and source. Each stage reads and
//! writes plain files so human annotation can happen between stages.

pub mod analysis;
pub mod anonymizer;
pub mod classifier;
pub mod corpus;
pub mod fixtures;
pub mod goldstandard;
pub mod io;
pub mod metrics;
pub mod reference;
pub mod reporting;
pub mod taxonomy;

pub use corpus::{Document, SourceKind, Unit};
pub use taxonomy::{Category, LabelVector, NUM_CATEGORIES};
