//! Synthetic swallow recordings and the labelled corpus built from them.

pub mod corpus;
mod segment;
pub mod synth;

pub use corpus::{make_corpus, make_corpus_with, CorpusConfig, CorpusRecord, Label, LabeledDataset, LabeledItem};
pub use segment::SignalSegment;
pub use synth::{
    add_noise, synth_swallow, synth_swallow_event, NoiseConfig, SubjectKind, SubjectProfile, SwallowEvent,
    Volume,
};
