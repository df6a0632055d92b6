use rand::seq::SliceRandom;
use rand::Rng;

use super::model::Batch;
use crate::dataio::{InteractionDataset, Split};

const MAX_REJECTIONS: usize = 100;

/// Uniform negative sampler over items a user has not interacted with in
/// the training split.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    train_items: Vec<Vec<usize>>,
    num_items: usize,
}

impl NegativeSampler {
    pub fn new(ds: &InteractionDataset) -> Self {
        Self {
            train_items: ds.user_items(Split::Train),
            num_items: ds.num_items(),
        }
    }

    /// Rejection sampling capped at 100 draws; after that the last uniform
    /// draw is returned even if it is a training positive.
    pub fn sample(&self, user: usize, rng: &mut impl Rng) -> usize {
        let seen = &self.train_items[user];
        for _ in 0..MAX_REJECTIONS {
            let j = rng.random_range(0..self.num_items);
            if seen.binary_search(&j).is_err() {
                return j;
            }
        }
        log::warn!(
            "user {user} has no unseen item after {MAX_REJECTIONS} draws; using a uniform item"
        );
        rng.random_range(0..self.num_items)
    }
}

pub fn sample_negatives(
    sampler: &NegativeSampler,
    users: &[usize],
    rng: &mut impl Rng,
) -> Vec<usize> {
    users.iter().map(|&u| sampler.sample(u, rng)).collect()
}

/// Shuffles the training interactions and cuts them into batches, each with
/// freshly sampled negatives.
pub fn epoch_batches(
    ds: &InteractionDataset,
    sampler: &NegativeSampler,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Vec<Batch> {
    let mut pairs: Vec<(usize, usize)> = ds.pairs_in(Split::Train).collect();
    pairs.shuffle(rng);
    pairs
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let users: Vec<usize> = chunk.iter().map(|p| p.0).collect();
            let negatives = sample_negatives(sampler, &users, rng);
            Batch {
                positives: chunk.iter().map(|p| p.1).collect(),
                users,
                negatives,
            }
        })
        .collect()
}
