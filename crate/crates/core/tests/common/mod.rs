#![allow(dead_code)]

use mhcr_core::dataio::{InteractionDataset, Modality, ModalityFeatures};
use mhcr_core::training::{
    init_parameters, parameter_shapes, Batch, ModelParameters, ModelViews, TrainConfig,
};
use ndarray::array;

/// 4 users, 6 items, image (3-d) and text (2-d) features.
pub fn micro_instance() -> (InteractionDataset, Vec<ModalityFeatures>) {
    let pairs = [
        (0, 0),
        (0, 1),
        (0, 4),
        (1, 1),
        (1, 2),
        (2, 3),
        (2, 4),
        (3, 5),
        (3, 0),
    ];
    let (ds, _) = InteractionDataset::new(4, 6, pairs).unwrap();
    let image = array![
        [1.0, 0.2, 0.0],
        [0.9, 0.1, 0.3],
        [0.1, 1.0, 0.2],
        [0.0, 0.8, 0.9],
        [0.3, 0.3, 1.0],
        [1.0, 1.0, 0.1]
    ];
    let text = array![
        [0.5, 1.0],
        [1.0, 0.4],
        [0.2, 0.9],
        [0.7, 0.7],
        [1.0, 0.1],
        [0.3, 0.6]
    ];
    (
        ds,
        vec![
            ModalityFeatures::new(Modality::Image, image).unwrap(),
            ModalityFeatures::new(Modality::Text, text).unwrap(),
        ],
    )
}

pub fn micro_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        knn_k: 2,
        hyper_num: 3,
        lambda_hc: 0.2,
        lambda_ghc: 0.3,
        lambda_reg: 0.05,
        ..TrainConfig::default()
    }
}

pub fn micro_setup(cfg: &TrainConfig, seed: u64) -> (ModelViews, ModelParameters) {
    let (ds, features) = micro_instance();
    let views = ModelViews::build(&ds, &features, cfg).unwrap();
    let params = init_parameters(&parameter_shapes(&ds, &features, cfg), seed).unwrap();
    (views, params)
}

pub fn micro_batch() -> Batch {
    Batch {
        users: vec![0, 1, 2, 3],
        positives: vec![4, 2, 3, 5],
        negatives: vec![2, 5, 1, 3],
    }
}
