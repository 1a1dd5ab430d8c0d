//! Structure-aware dense retrieval over HTML documents.
//!
//! The pipeline: sanitize HTML down to a small set of structural tags
//! ([`structml`]), render documents with, without, or with partially
//! removed tags, train a hashed bi-encoder contrastively on those renderings
//! ([`encoder`], [`objectives`]), then index, search ([`retrieval`]) and
//! score runs ([`metrics`]).

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod structml;
pub mod trec;

pub use corpus::{Corpus, MaskPlan, Query, RawDocument, TrainingExample};
pub use encoder::{Encoder, EncoderConfig, EncoderModel, Vocabulary};
pub use error::{Error, Result};
pub use metrics::{Metric, MetricReport, Qrels};
pub use objectives::{Strategy, TrainConfig};
pub use retrieval::{RankedRun, VectorIndex};
pub use structml::{Element, MaskedDocument, StructuredDocument, Variant};
