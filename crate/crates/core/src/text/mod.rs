//! Tokenization, vocabularies, dataset files and fixed-length encoding.

mod dataset;
mod split;
mod tokenize;
mod vocab;

pub use dataset::{
    encode, encode_examples, load_examples, load_multiclass_csv, load_multilabel_tsv, save_examples, Example, Instance,
    Keep, Label, PadSide, SequencePolicy, Task,
};
pub use split::{epoch_batches, split_holdout, DatasetSplit};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
