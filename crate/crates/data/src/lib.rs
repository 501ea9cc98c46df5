//! Dataset ingestion for churn-style binary prediction: schema-driven CSV
//! loading, train-fitted preprocessing, sequence construction, seeded splits
//! and synthetic generators.
//!
//! The usual flow is [`load_csv`] → [`split_indices`] → [`fit`] on the
//! training rows → [`PreprocessStats::apply`] → [`build_sequences`].

pub mod error;
pub mod preprocess;
pub mod schema;
pub mod sequence;
pub mod split;
pub mod synth;
pub mod table;
pub mod transactions;

pub use error::{DataError, Result};
pub use preprocess::{fit, EncodedTable, PreprocessStats};
pub use schema::{DatasetSchema, Role, Scale};
pub use sequence::{build_sequences, SequenceSample};
pub use split::{split, split_indices};
pub use synth::{synth_dataset, SynthKind};
pub use table::{load_csv, load_unlabeled, RawTable};
