//! Multi-view hypergraph contrastive recommendation.
//!
//! Three embedding views are summed into one user/item space:
//!
//! * [`ui_graph`]: propagation over the normalized user–item bipartite graph
//! * [`item_graph`]: per-modality item–item KNN graphs over projected features
//! * [`hypergraph`]: message passing through learnable hyperedges
//!
//! [`objectives`] holds the BPR and contrastive losses, [`training`] the
//! parameters, gradients and optimization loop, and [`evaluation`] the
//! full-ranking metrics.

pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod hypergraph;
pub mod item_graph;
pub mod objectives;
pub mod sparse;
pub mod training;
pub mod ui_graph;

pub use dataio::{InteractionDataset, Modality, ModalityFeatures, Split, SplitRatios};
pub use error::{ErrorClass, MhcrError, Result};
pub use evaluation::{EvalOptions, EvalReport, Slice};
pub use sparse::SparseRowMatrix;
pub use training::{AblationFlags, FitOutcome, ModelParameters, ModelViews, TrainConfig};
