//! Move recognition for scientific abstracts: corpus handling, dependency
//! based sentence splitting, subword tokenization, a relative-position
//! transformer encoder with segment memory, and an attention-pooled BiGRU
//! classifier.

pub mod checkpoint;
pub mod classifier;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod splitter;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use classifier::{ClassifierConfig, ClassifierParams};
pub use corpus::{LabeledRecord, MoveLabel};
pub use encoder::{EncoderConfig, EncoderParams, MemoryState};
pub use model::{Example, Model, ModelError};
pub use splitter::{DepParse, DepToken};
pub use tokenizer::{SubwordVocab, TokenSequence};
pub use training::{History, TrainConfig, TrainError};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use eval::{MetricsReport, ReportFormat};
