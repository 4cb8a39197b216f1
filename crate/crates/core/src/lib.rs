//! Weakly-supervised aspect-based sentiment analysis.
//!
//! Learns joint ⟨sentiment, aspect⟩ topic embeddings from an unlabeled corpus
//! and a few seed keywords per label, turns them into soft document labels,
//! distills those into two small convolutional classifiers and refines the
//! classifiers by self-training.
//!
//! Numeric types are generic over [`Scalar`]; the aliases below fix the
//! common choices. The command line tool trains and stores `f32` models.

pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod inference;
pub mod math;
pub mod scalar;
pub mod textcnn;
pub mod training;

pub use corpus::{Dimension, Document, TopicSchema, Vocabulary};
pub use embedding::{EmbedHyperparams, EmbeddingModel};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use textcnn::{CnnArch, CnnHyperparams, CnnModel};
pub use training::{run_pipeline, PipelineConfig, PipelineOutput};

pub type EmbeddingModelF32 = EmbeddingModel<f32>;
pub type EmbeddingModelF64 = EmbeddingModel<f64>;
pub type CnnModelF32 = CnnModel<f32>;
pub type CnnModelF64 = CnnModel<f64>;
