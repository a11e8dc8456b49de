//! CSV ingestion, tokenization, vocabulary and batching.

mod batch;
mod csv_load;
mod tokenize;
mod vocab;

pub use batch::{batch_iter, encode_all, train_val_split, BatchIter, EncodeStats, EncodedExample};
pub use csv_load::{load_csv, load_csv_from, ColumnRef, DatasetSchema, Example, LoadedCsv};
pub use tokenize::tokenize;
pub use vocab::{Encoding, Vocab, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
