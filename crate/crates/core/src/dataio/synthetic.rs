//! Planted-cluster synthetic data.
//!
//! Users and items are assigned to latent clusters. Users draw most of their
//! interactions from their own cluster, and every modality's item features are
//! the item's cluster centroid plus isotropic Gaussian noise, so both the
//! collaborative signal and the content signal point at the same structure.
//! Per-user interaction counts follow a shifted Lomax (Pareto II) law, which
//! puts a large share of users at one to three interactions.

use std::collections::HashSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::dataset::InteractionDataset;
use crate::dataio::features::{Modality, ModalityFeatures};
use crate::error::{MhcrError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// Tail exponent of the per-user interaction count law; must exceed 1.
    pub powerlaw_exponent: f64,
    /// Target mean interactions per user.
    pub mean_interactions: f64,
    pub num_clusters: usize,
    /// Probability that an interaction is drawn from the user's own cluster.
    pub cluster_affinity: f64,
    pub modality_dims: Vec<(Modality, usize)>,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 500,
            powerlaw_exponent: 2.0,
            mean_interactions: 4.0,
            num_clusters: 10,
            cluster_affinity: 0.8,
            modality_dims: vec![
                (Modality::Image, 32),
                (Modality::Video, 32),
                (Modality::Text, 16),
            ],
            noise_std: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MhcrError::Config(msg));
        if self.num_users == 0 || self.num_items == 0 || self.num_clusters == 0 {
            return bad("user, item and cluster counts must be >= 1".into());
        }
        if !self.powerlaw_exponent.is_finite() || self.powerlaw_exponent <= 1.0 {
            return bad(format!(
                "power-law exponent must be > 1, got {}",
                self.powerlaw_exponent
            ));
        }
        if !self.mean_interactions.is_finite() || self.mean_interactions < 1.0 {
            return bad(format!(
                "mean interactions must be >= 1, got {}",
                self.mean_interactions
            ));
        }
        if !(0.0..=1.0).contains(&self.cluster_affinity) {
            return bad(format!(
                "cluster affinity must be in [0, 1], got {}",
                self.cluster_affinity
            ));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.modality_dims.iter().any(|&(_, d)| d == 0) {
            return bad("modality widths must be >= 1".into());
        }
        let distinct: HashSet<_> = self.modality_dims.iter().map(|m| m.0).collect();
        if distinct.len() != self.modality_dims.len() {
            return bad("modalities must be distinct".into());
        }
        Ok(())
    }

    /// Largest number of interactions a single user may receive.
    pub fn max_per_user(&self) -> usize {
        (self.num_items / 2).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: InteractionDataset,
    pub features: Vec<ModalityFeatures>,
    pub user_clusters: Vec<usize>,
    pub item_clusters: Vec<usize>,
}

/// Draws one per-user interaction count: `1 + floor(X)`, `X ~ Lomax(alpha, scale)`.
fn draw_count(rng: &mut impl Rng, alpha: f64, mean: f64, cap: usize) -> usize {
    let scale = (mean - 0.5).max(0.0) * (alpha - 1.0);
    let u: f64 = rng.random();
    let x = scale * ((1.0 - u).powf(-1.0 / alpha) - 1.0);
    let n = 1.0 + x.floor();
    if n.is_finite() {
        (n as usize).clamp(1, cap)
    } else {
        cap
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let user_clusters: Vec<usize> = (0..cfg.num_users)
        .map(|_| rng.random_range(0..cfg.num_clusters))
        .collect();
    let item_clusters: Vec<usize> = (0..cfg.num_items)
        .map(|_| rng.random_range(0..cfg.num_clusters))
        .collect();
    let mut members = vec![Vec::new(); cfg.num_clusters];
    for (item, &c) in item_clusters.iter().enumerate() {
        members[c].push(item);
    }

    let cap = cfg.max_per_user();
    let mut pairs = Vec::new();
    for (user, &cluster) in user_clusters.iter().enumerate() {
        let n = draw_count(&mut rng, cfg.powerlaw_exponent, cfg.mean_interactions, cap);
        let own = &members[cluster];
        let mut seen = HashSet::with_capacity(n);
        while seen.len() < n {
            let in_cluster = !own.is_empty() && rng.random::<f64>() < cfg.cluster_affinity;
            let item = if in_cluster {
                // a saturated cluster falls through to a uniform draw
                let mut pick = None;
                for _ in 0..32 {
                    let cand = own[rng.random_range(0..own.len())];
                    if !seen.contains(&cand) {
                        pick = Some(cand);
                        break;
                    }
                }
                pick.unwrap_or_else(|| rng.random_range(0..cfg.num_items))
            } else {
                rng.random_range(0..cfg.num_items)
            };
            if seen.insert(item) {
                pairs.push((user, item));
            }
        }
    }
    let (dataset, duplicates) = InteractionDataset::new(cfg.num_users, cfg.num_items, pairs)?;
    debug_assert_eq!(duplicates, 0);

    let mut features = Vec::with_capacity(cfg.modality_dims.len());
    for &(modality, dim) in &cfg.modality_dims {
        let scale = 1.0 / (dim as f64).sqrt();
        let centroid_dist = Normal::new(0.0, scale).expect("positive scale");
        let centroids: Vec<Vec<f64>> = (0..cfg.num_clusters)
            .map(|_| (0..dim).map(|_| centroid_dist.sample(&mut rng)).collect())
            .collect();
        let noise_dist = Normal::new(0.0, cfg.noise_std * scale).expect("validated noise");
        let mut matrix = Array2::zeros((cfg.num_items, dim));
        for (item, mut row) in matrix.rows_mut().into_iter().enumerate() {
            let centroid = &centroids[item_clusters[item]];
            for (j, v) in row.iter_mut().enumerate() {
                let noise = if cfg.noise_std > 0.0 {
                    noise_dist.sample(&mut rng)
                } else {
                    0.0
                };
                // stored as f32 on disk; keep in-memory data identical
                *v = (centroid[j] + noise) as f32 as f64;
            }
        }
        features.push(ModalityFeatures::new(modality, matrix)?);
    }

    Ok(SyntheticData {
        dataset,
        features,
        user_clusters,
        item_clusters,
    })
}
