use log::warn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::eval::UserItems;
use crate::graph::InteractionGraph;
use crate::losses::TripleBatch;

/// Tries per negative before the positive pair is redrawn.
pub const MAX_NEGATIVE_TRIES: usize = 100;

/// Draws BPR triples: positives uniformly over training pairs, negatives
/// uniformly over items the user has no interaction with in any split.
#[derive(Clone, Debug)]
pub struct NegativeSampler<'a> {
    pairs: &'a [(usize, usize)],
    known: &'a UserItems,
    eligible: Vec<usize>,
    n_items: usize,
}

impl<'a> NegativeSampler<'a> {
    /// `known` must hold every observed interaction (train, validation and
    /// test). Users who interacted with every item are skipped.
    pub fn new(graph: &'a InteractionGraph, known: &'a UserItems) -> Result<Self> {
        let pairs = graph.interactions();
        let n_items = graph.n_items();
        let mut saturated = 0usize;
        let mut last_user = None;
        let mut eligible = Vec::with_capacity(pairs.len());
        for (k, &(u, _)) in pairs.iter().enumerate() {
            if known.get(u).len() >= n_items {
                if last_user != Some(u) {
                    saturated += 1;
                    last_user = Some(u);
                }
                continue;
            }
            eligible.push(k);
        }
        if saturated > 0 {
            warn!("sampling: skipping {saturated} users who interacted with every item");
        }
        if eligible.is_empty() {
            return Err(Error::InvalidArgument(
                "no user has an item left to sample as a negative".into(),
            ));
        }
        Ok(NegativeSampler {
            pairs,
            known,
            eligible,
            n_items,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> TripleBatch {
        let mut batch = TripleBatch::default();
        while batch.len() < batch_size {
            let (u, i) = self.pairs[self.eligible[rng.random_range(0..self.eligible.len())]];
            for _ in 0..MAX_NEGATIVE_TRIES {
                let j = rng.random_range(0..self.n_items);
                if !self.known.contains(u, j) {
                    batch.push(u, i, j);
                    break;
                }
            }
        }
        batch
    }
}

/// Convenience wrapper building a [`NegativeSampler`] for one batch.
pub fn sample_triples<R: Rng + ?Sized>(
    graph: &InteractionGraph,
    known: &UserItems,
    batch_size: usize,
    rng: &mut R,
) -> Result<TripleBatch> {
    Ok(NegativeSampler::new(graph, known)?.sample(batch_size, rng))
}
