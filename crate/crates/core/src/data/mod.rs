//! Text preprocessing, vocabularies, dataset files and minibatching.

mod batch;
mod dataset;
mod synth;
mod text;
mod vocab;

pub use batch::{make_batch, make_batches, Batch};
pub use dataset::{
    read_captions_jsonl, read_features, write_captions_jsonl, write_features, CaptionRecord, FeatureRows,
    CaptionedItem, Corpus, RawItem,
};
pub use synth::{synthetic_dataset, SyntheticData};
pub use text::preprocess;
pub use vocab::{build_vocab, Vocabulary, END, PAD, RESERVED, START, UNKNOWN};
