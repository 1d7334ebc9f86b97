#![allow(dead_code)]

use std::collections::BTreeSet;

use mgnm::autodiff::Matrix;
use mgnm::dataset::{prepare, Dataset, Part};
use mgnm::eval::{evaluate, MetricsReport};
use mgnm::graph::InteractionGraph;
use mgnm::local::Modality;
use mgnm::model::ModalityFeatureBank;
use mgnm::synth::{synth_dataset, SynthConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Planted-block data from `cfg`, prepared with split seed 2024.
pub fn planted(cfg: &SynthConfig) -> Dataset {
    let data = synth_dataset(cfg).unwrap();
    let mut bank = ModalityFeatureBank::new();
    bank.insert(Modality::Visual, data.visual).unwrap();
    bank.insert(Modality::Textual, data.textual).unwrap();
    prepare(&data.pairs, &bank, 2024).unwrap().0
}

/// A small planted-block dataset for fast training tests.
pub fn small_planted(seed: u64) -> Dataset {
    planted(&SynthConfig {
        users: 60,
        items: 40,
        visual_dim: 8,
        textual_dim: 6,
        seed,
        ..SynthConfig::default()
    })
}

/// Random bipartite graph where every user and item has an edge.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> InteractionGraph {
    let p = rng.random_range(2..=max_nodes / 2);
    let q = rng.random_range(2..=max_nodes - p);
    let density = rng.random_range(0.05..0.5);
    let mut pairs = BTreeSet::new();
    for u in 0..p {
        for i in 0..q {
            if rng.random_bool(density) {
                pairs.insert((u, i));
            }
        }
    }
    for u in 0..p {
        pairs.insert((u, rng.random_range(0..q)));
    }
    for i in 0..q {
        pairs.insert((rng.random_range(0..p), i));
    }
    let pairs: Vec<_> = pairs.into_iter().collect();
    InteractionGraph::build(&pairs, p, q).unwrap()
}

/// Dense `D^{-1/2} A D^{-1/2}` computed from the edge list alone.
pub fn dense_norm_adjacency(graph: &InteractionGraph) -> Matrix {
    let (p, n) = (graph.n_users(), graph.n_nodes());
    let mut a = Matrix::zeros(n, n);
    for &(u, i) in graph.interactions() {
        a.set(u, p + i, 1.0);
        a.set(p + i, u, 1.0);
    }
    let degree: Vec<f64> = (0..n).map(|r| a.row(r).iter().sum()).collect();
    Matrix::from_fn(n, n, |r, c| {
        let v = a.get(r, c);
        if v == 0.0 {
            0.0
        } else {
            v / (degree[r] * degree[c]).sqrt()
        }
    })
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Test metrics of i.i.d. Gaussian node embeddings, averaged over `draws`.
pub fn random_embedding_baseline(dataset: &Dataset, dim: usize, draws: u64, k: usize) -> f64 {
    let train = dataset.items(Part::Train);
    let val = dataset.items(Part::Validation);
    let truth = dataset.items(Part::Test);
    let mut total = 0.0;
    for seed in 0..draws {
        let mut rng = rand::SeedableRng::seed_from_u64(seed);
        let emb = gaussian(dataset.n_users + dataset.n_items, dim, &mut rng);
        let report: MetricsReport =
            evaluate(&emb, dataset.n_users, &truth, &[&train, &val], &[k], 0).unwrap();
        total += report.recall[0];
    }
    total / draws as f64
}

pub fn bits(m: &Matrix) -> Vec<u64> {
    m.as_slice().iter().map(|x| x.to_bits()).collect()
}
