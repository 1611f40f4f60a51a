//! Curation and evaluation toolkit for text-rich image instruction data.
//!
//! The pipeline runs filter, cluster, categorize, OCR layout and dataset
//! construction over precomputed embeddings and OCR output. Evaluation covers
//! containment accuracy, ANLS, partial correctness, caption metrics, LLM-judge
//! relative scores and the font-size study.

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod categorization;
pub mod clustering;
pub mod config;
pub mod datasetgen;
pub mod error;
pub mod evalkit;
pub mod filtering;
pub mod ingest;
pub mod llmclient;
pub mod textlayout;

pub use config::RunConfig;
pub use datasetgen::{Conversation, Source, Speaker, Turn};
pub use error::{Error, Result};
pub use evalkit::{EvalRecord, JudgeOutcome, MetricReport};
pub use filtering::FilterThresholds;
pub use ingest::{EmbeddingMatrix, Engine, ImageMeta, OcrDoc, Point, Quad, Rect, WordBox};
pub use llmclient::{ChatBackend, ChatMessage, ChatRequest, ChatResult, LlmClient, LlmError, TemperatureProfile};
pub use textlayout::{LayoutParams, Paragraph};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
