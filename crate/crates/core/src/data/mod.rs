//! Sequence ingestion and curation.

mod curate;
mod fasta;
mod folds;
mod record;
mod schema;
mod split;

pub use curate::{curate, CurationLog, DropReason, Dropped};
pub use fasta::{header_key, parse_fasta, parse_fasta_str};
pub use folds::{plan_nested_folds, plan_nested_folds_labeled, FoldPlan, OuterFold, FOLD_PLAN_VERSION};
pub use record::{
    assemble, read_dataset, read_metadata, read_metadata_str, write_dataset, MetadataRow, RawRecord, SequenceIndex,
    Source, StrainRecord, METADATA_COLUMNS,
};
pub use schema::{split_subtype, LabelSchema, Subtype};
pub use split::{holdout_split, split_by_era, DatasetSplit, EraSplit, SplitName};
