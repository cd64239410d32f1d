//! Triplet, description and word-vector ingestion plus training batches.

mod dataset;
mod sampling;
mod text;
mod triplets;
mod vocab;

pub use dataset::{synthetic_dataset, Dataset, DatasetPaths, TextData};
pub use sampling::{
    bern_stats, epoch_batches, make_batch, sample_negative, Batch, BernStats, RelationStats, MAX_REJECTIONS,
};
pub use text::{
    load_descriptions, load_word_vectors, parse_descriptions, parse_word_vectors, tokenize, Description,
    DescriptionTable, WordEmbeddingTable, DEFAULT_DESC_LEN,
};
pub use triplets::{load_triplets, parse_triplets, LoadReport, Split, Triplet, TripletIndex, TripletSet};
pub use vocab::Vocab;
