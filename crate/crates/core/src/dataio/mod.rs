//! Interaction and feature loading, splitting, and synthetic data.

mod dataset;
mod features;
mod synthetic;

pub use dataset::{
    cold_start_users, load_interactions, load_interactions_sized, read_split, split_dataset,
    write_interactions, write_split, DatasetStats, InteractionDataset, LoadedInteractions, Split,
    SplitRatios, SplitReport,
};
pub use features::{
    read_features, write_features, Modality, ModalityFeatures, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};
