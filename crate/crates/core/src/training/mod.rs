//! Parameters, forward/backward composition of the views, and the
//! optimization loop.

mod adam;
mod checkpoint;
mod config;
mod fit;
mod model;
mod params;
mod sampling;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{AblationFlags, TrainConfig};
pub use fit::{
    derive_seed, fit, parameter_shapes, stream_rng, EpochRecord, FitOutcome, INIT_STREAM,
    SPLIT_STREAM, TRAIN_STREAM,
};
pub use model::{
    batch_loss, embed, embed_with_masks, fused_embeddings, loss_and_grads, sample_step_masks,
    Batch, ModelViews, ViewEmbeddings,
};
pub use params::{init_parameters, ModalityParams, ModelParameters, ParameterShapes};
pub use sampling::{epoch_batches, sample_negatives, NegativeSampler};
