//! Shared fixtures for the criterion benches.

use mhcr_core::dataio::{generate_synthetic, split_dataset, SplitRatios, SyntheticConfig};
use mhcr_core::hypergraph::{build_incidence, IncidencePair};
use mhcr_core::training::{init_parameters, parameter_shapes, Batch, ModelParameters, TrainConfig};
use mhcr_core::{InteractionDataset, ModalityFeatures, ModelViews, Split};
use ndarray::Array2;

/// A split synthetic dataset with built views and freshly initialized
/// parameters.
pub struct Fixture {
    pub dataset: InteractionDataset,
    pub features: Vec<ModalityFeatures>,
    pub config: TrainConfig,
    pub views: ModelViews,
    pub params: ModelParameters,
}

impl Fixture {
    pub fn new(num_users: usize, num_items: usize, seed: u64) -> Self {
        let syn = generate_synthetic(&SyntheticConfig {
            num_users,
            num_items,
            seed,
            ..SyntheticConfig::default()
        })
        .expect("valid synthetic config");
        let (dataset, _) =
            split_dataset(&syn.dataset, SplitRatios::default(), seed).expect("valid ratios");
        let config = TrainConfig::default();
        let views = ModelViews::build(&dataset, &syn.features, &config).expect("views build");
        let params = init_parameters(&parameter_shapes(&dataset, &syn.features, &config), seed)
            .expect("shapes are consistent");
        Self {
            dataset,
            features: syn.features,
            config,
            views,
            params,
        }
    }

    /// Incidence matrices and projected item features of the first modality.
    pub fn first_modality(&self) -> (IncidencePair, Array2<f64>) {
        let m = &self.params.modalities[0];
        let f = &self.features[0];
        let interactions = self.dataset.interaction_matrix(Split::Train);
        let pair = build_incidence(
            f.modality(),
            &f.matrix().view(),
            &m.hyperedges.view(),
            &interactions,
        )
        .expect("shapes are consistent");
        (pair, f.matrix().dot(&m.projection))
    }

    /// The first `size` training pairs with deterministic negatives.
    pub fn batch(&self, size: usize) -> Batch {
        let ni = self.dataset.num_items();
        let pairs: Vec<(usize, usize)> = self.dataset.pairs_in(Split::Train).take(size).collect();
        Batch {
            users: pairs.iter().map(|p| p.0).collect(),
            positives: pairs.iter().map(|p| p.1).collect(),
            negatives: pairs.iter().map(|p| (p.1 * 7 + 3) % ni).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes_agree() {
        let fx = Fixture::new(40, 30, 1);
        let (pair, items) = fx.first_modality();
        assert_eq!(pair.items.dim(), (30, fx.config.hyper_num));
        assert_eq!(pair.users.nrows(), 40);
        assert_eq!(items.dim(), (30, fx.config.dim));
        let b = fx.batch(16);
        assert_eq!(b.len(), 16);
        assert!(b.negatives.iter().all(|&i| i < 30));
    }
}
