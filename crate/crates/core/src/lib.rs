//! Attribute-graph entity similarity search.
//!
//! Offline, products are classified, given per-category attribute schemas,
//! and run through attribute extraction; the resulting (product, attribute,
//! value) triples form a bipartite graph. Online, a query product's dense or
//! BM25 neighbors are re-ranked by comparing attribute triples from the local
//! subgraph, with a model-free overlap scorer as fallback.

pub mod catalog;
pub mod config;
pub mod engine;
pub mod eval;
pub mod extraction;
pub mod graph;
pub mod pipeline;
pub mod prompts;
pub mod provider;
pub mod ranking;
pub mod retrieval;
pub mod schema;
pub mod stats;
pub mod synthetic;
pub mod text;

pub use catalog::{CategoryPath, FilterPolicy, ProductRecord, ProductStore};
pub use config::PipelineConfig;
pub use engine::{Engine, EngineError, JudgeSummary, Query, SimilarItem, SimilarResponse, Timing};
pub use eval::{EvalReport, Judgment, Judgments};
pub use extraction::{AttributeSet, AttributeStore};
pub use graph::{AttributeGraph, LocalSubgraph, Triple};
pub use pipeline::{Pipeline, PipelineError, PipelineReport, Stage};
pub use prompts::PromptSet;
pub use provider::{ModelProvider, ProviderError, ProviderSettings, StructuredClient};
pub use ranking::{RankedList, Ranker, ScoredCandidate};
pub use retrieval::{Candidate, CandidateSet, Method};
pub use schema::{AttributeDef, CategorySchema, SchemaRegistry};
