//! Hyper-relational statements: parsing, vocabularies, completion queries and
//! the filtered-evaluation answer index.

mod graph;
mod index;
mod io;
mod query;

pub use graph::{EntityId, KnowledgeGraph, Qualifier, RelationId, Split, Statement, Vocabulary};
pub use index::{build_filter_index, build_label_index, AnswerIndex, PatternKey};
pub use io::{
    dataset_checksum, load_dataset, read_manifest, split_path, write_dataset, write_manifest,
    DatasetFormat, ENTITY_MANIFEST, RELATION_MANIFEST,
};
pub use query::{build_queries, one_n_labels, CompletionQuery, Slot};
