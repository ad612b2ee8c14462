//! Ground-truth generator: 3D embedding, extended-Hückel style labels, the
//! bundled SMILES corpus and dataset assembly.

mod corpus;
mod dataset;
mod embed;
mod huckel;

pub use corpus::{bundled_corpus, corpus_hash, generate_corpus, CORPUS_SEED, CORPUS_SIZE};
pub use dataset::{
    assign_splits, from_upper, gen_dataset, label_molecule, to_upper, Dataset, DATASET_FORMAT, GenConfig, Manifest, Record, SkippedRecord, Split, SplitConfig,
    SplitMode,
};
pub use embed::{embed_3d, embed_calls, reset_embed_calls, EmbedConfig};
pub use huckel::{huckel_labels, WOLFSBERG_HELMHOLZ};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("embedding failed: min distance {min_dist:.3} Å after {attempts} attempts")]
    EmbedFailure { min_dist: f64, attempts: usize },
    #[error("split {0} is empty")]
    EmptySplit(&'static str),
    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<crate::Error>,
    },
    #[error("dataset line {line}: {message}")]
    BadDataset { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
