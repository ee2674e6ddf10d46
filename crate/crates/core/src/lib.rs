//! Topic atlas engine: corpus ingest, embeddings, hybrid search, temporal
//! topic discovery, an atlas of merged topics, and grounded question answering.

pub mod atlas;
pub mod embed;
pub mod engine;
pub mod error;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod model;
pub mod qa;
pub mod snapshot;
pub mod synth;
pub mod text;
pub mod topics;

pub use engine::{build_state, Engine, EngineState};
pub use error::{Error, Result};
pub use model::{Document, EngineConfig, Filter, FilterQuery, QueryMode, SentenceChunk, TimeInterval, Topic};
