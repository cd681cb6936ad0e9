//! Contrastive sentence-embedding workbench.
//!
//! The crate covers the full desk-scale pipeline: tagged-corpus handling,
//! a small trainable encoder with seeded dropout, weighted hard-negative
//! contrastive objectives, noun-chunk masking for contradiction synthesis,
//! two-stage training, relevant-word analysis, back-translation filtering,
//! and STS / retrieval evaluation.

pub mod benchmark;
pub mod contrastive;
pub mod corpus;
pub mod datagen;
pub mod encoder;
pub mod io;
pub mod metrics;
pub mod relevance;
pub mod seed;
pub mod synthetic;
pub mod trainer;

pub use contrastive::{BatchEmbeddings, TrainConfig};
pub use corpus::{Pos, SentencePair, TaggedSentence, TaggedToken, Triplet};
pub use encoder::{DropoutSpec, Embedding, EncoderParams, Vocab};
pub use metrics::{RetrievalReport, RetrievalRun};
pub use trainer::TrainReport;
