//! Feature schema, dataset ingestion, standardization and encoding.

pub mod dataset;
pub mod encode;
pub mod schema;

pub use dataset::{
    load_dataset, read_dataset, reshape_samples, save_dataset, write_dataset, FeatureValue, Sample,
};
pub use encode::{encode, fit_standardizer, ColumnStats, EncodedSet, Standardizer};
pub use schema::{load_schema, FeatureKind, FeatureSchema, FeatureSpec, MissingPolicy};
