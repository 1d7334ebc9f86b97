//! Bipartite user–item interaction graph.
//!
//! Node ordering is fixed throughout the crate: users occupy rows `0..p`,
//! items rows `p..p + q` of every stacked matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::error::{Error, Result};

/// Immutable interaction graph with its normalized adjacency.
#[derive(Clone, Debug)]
pub struct InteractionGraph {
    n_users: usize,
    n_items: usize,
    interactions: Vec<(usize, usize)>,
    user_neighbors: Vec<Vec<usize>>,
    item_degree: Vec<usize>,
    adjacency: Arc<SparseMatrix>,
    norm_adjacency: Arc<SparseMatrix>,
    neighbor_mean: Arc<SparseMatrix>,
}

impl InteractionGraph {
    /// Builds the graph from `(user, item)` pairs. Duplicate pairs collapse
    /// to one edge; every user and item must end up with at least one edge.
    pub fn build(pairs: &[(usize, usize)], n_users: usize, n_items: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Graph("no interactions".into()));
        }
        if let Some(&(u, i)) = pairs.iter().find(|&&(u, i)| u >= n_users || i >= n_items) {
            return Err(Error::Graph(format!(
                "interaction ({u}, {i}) out of range for {n_users} users and {n_items} items"
            )));
        }
        let interactions: Vec<(usize, usize)> = pairs
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let mut user_neighbors = vec![Vec::new(); n_users];
        let mut item_degree = vec![0usize; n_items];
        for &(u, i) in &interactions {
            user_neighbors[u].push(i);
            item_degree[i] += 1;
        }
        if let Some(u) = user_neighbors.iter().position(Vec::is_empty) {
            return Err(Error::Graph(format!("user {u} has no interactions")));
        }
        if let Some(i) = item_degree.iter().position(|&d| d == 0) {
            return Err(Error::Graph(format!("item {i} has no interactions")));
        }

        let n = n_users + n_items;
        let degree = |node: usize| -> f64 {
            if node < n_users {
                user_neighbors[node].len() as f64
            } else {
                item_degree[node - n_users] as f64
            }
        };
        let mut adj = Vec::with_capacity(2 * interactions.len());
        let mut norm = Vec::with_capacity(2 * interactions.len());
        for &(u, i) in &interactions {
            let j = n_users + i;
            let w = 1.0 / (degree(u) * degree(j)).sqrt();
            adj.push((u, j, 1.0));
            adj.push((j, u, 1.0));
            norm.push((u, j, w));
            norm.push((j, u, w));
        }
        let mean = interactions
            .iter()
            .map(|&(u, i)| (u, i, 1.0 / user_neighbors[u].len() as f64))
            .collect();

        Ok(InteractionGraph {
            n_users,
            n_items,
            adjacency: Arc::new(SparseMatrix::from_triplets(n, n, adj)?),
            norm_adjacency: Arc::new(SparseMatrix::from_triplets(n, n, norm)?),
            neighbor_mean: Arc::new(SparseMatrix::from_triplets(n_users, n_items, mean)?),
            interactions,
            user_neighbors,
            item_degree,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    /// Distinct `(user, item)` edges in ascending order.
    pub fn interactions(&self) -> &[(usize, usize)] {
        &self.interactions
    }

    /// Items user `u` interacted with, ascending.
    pub fn user_neighbors(&self, u: usize) -> &[usize] {
        &self.user_neighbors[u]
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_degree[i]
    }

    /// Binary `(p+q) × (p+q)` adjacency.
    pub fn adjacency(&self) -> &Arc<SparseMatrix> {
        &self.adjacency
    }

    /// `D^{-1/2} A D^{-1/2}`.
    pub fn norm_adjacency(&self) -> &Arc<SparseMatrix> {
        &self.norm_adjacency
    }

    /// Row-normalized `p × q` interaction matrix: row `u` averages over `N_u`.
    pub fn neighbor_mean(&self) -> &Arc<SparseMatrix> {
        &self.neighbor_mean
    }
}

/// Initial user rows for a modality: each user takes the mean of its
/// neighbors' item rows.
pub fn user_modality_init(tape: &mut Tape, graph: &InteractionGraph, item_feats: Var) -> Result<Var> {
    let shape = tape.shape(item_feats);
    if shape.0 != graph.n_items() {
        return Err(Error::shape(
            "user_modality_init",
            graph.neighbor_mean().shape(),
            shape,
        ));
    }
    tape.sparse_matmul(graph.neighbor_mean(), item_feats)
}

/// Interactions partitioned into train / validation / test.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// Users dropped for having fewer than three interactions.
    pub excluded_users: Vec<usize>,
}

/// Sizes `(train, validation, test)` for a user with `n ≥ 3` interactions:
/// test and validation each get `max(1, ⌊n/10⌋)`, train the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = (n / 10).max(1);
    (n - 2 * held, held, held)
}

/// Per-user 8:1:1 split. Each retained user's distinct items are shuffled
/// with a generator seeded once from `seed`, users visited in ascending id
/// order.
pub fn split_interactions(pairs: &[(usize, usize)], seed: u64) -> Split {
    let mut by_user: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(u, i) in pairs {
        by_user.entry(u).or_default().insert(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for (u, items) in by_user {
        if items.len() < 3 {
            split.excluded_users.push(u);
            continue;
        }
        let mut items: Vec<usize> = items.into_iter().collect();
        items.shuffle(&mut rng);
        let (_, n_val, n_test) = split_sizes(items.len());
        let (test, rest) = items.split_at(n_test);
        let (val, train) = rest.split_at(n_val);
        split.test.extend(test.iter().map(|&i| (u, i)));
        split.validation.extend(val.iter().map(|&i| (u, i)));
        split.train.extend(train.iter().map(|&i| (u, i)));
    }
    for part in [&mut split.train, &mut split.validation, &mut split.test] {
        part.sort_unstable();
    }
    if !split.excluded_users.is_empty() {
        info!(
            "split: excluded {} users with fewer than 3 interactions",
            split.excluded_users.len()
        );
    }
    split
}
