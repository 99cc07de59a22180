//! Federated retrieval over heterogeneous knowledge sources.
//!
//! Given a natural-language question and a registered pool of knowledge
//! sources (document corpora, SQLite databases, SPARQL endpoints, property
//! graphs), the engine selects candidate sources, formulates a query in each
//! source's native language, executes them against the backends, and
//! consolidates the executor outputs into a single evidence set. The
//! [`evaluation`] module provides the metric suite (source-selection
//! accuracy, NDCG@10, execution match, LLM-as-a-judge) and run-mode
//! baselines used to benchmark the pipeline.

pub mod evaluation;
pub mod evidence;
pub mod execution;
pub mod formulation;
pub mod gateway;
pub mod pipeline;
pub mod registry;
pub mod selection;
pub mod validation;

pub use registry::{BackendKind, Catalog, ConnectionSpec, SourceDescriptor};
