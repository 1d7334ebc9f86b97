mod common;

use mgnm::autodiff::{Matrix, Tape};
use mgnm::graph::InteractionGraph;
use mgnm::local::{modality_input, project_modality, propagate_id, propagate_modality};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{dense_norm_adjacency, gaussian, random_graph};

fn dense_neighbor_mean(graph: &InteractionGraph, items: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(graph.n_users(), items.cols());
    for u in 0..graph.n_users() {
        let ns = graph.user_neighbors(u);
        for &i in ns {
            for (o, x) in out.row_mut(u).iter_mut().zip(items.row(i)) {
                *o += x / ns.len() as f64;
            }
        }
    }
    out
}

#[test]
fn id_propagation_matches_dense_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..20 {
        let graph = random_graph(&mut rng, 60);
        let adj = dense_norm_adjacency(&graph);
        let e0 = gaussian(graph.n_nodes(), 5, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(e0.clone());
        let layers = propagate_id(&mut tape, &graph, x, 3).unwrap();
        let mut expected = e0;
        for (l, &layer) in layers.iter().enumerate() {
            if l > 0 {
                expected = adj.matmul(&expected).unwrap();
            }
            assert!(tape.value(layer).max_abs_diff(&expected) < 1e-12, "layer {l}");
        }
    }
}

#[test]
fn modality_propagation_matches_dense_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..20 {
        let graph = random_graph(&mut rng, 60);
        let adj = dense_norm_adjacency(&graph);
        let feats = gaussian(graph.n_items(), 7, &mut rng);
        let w = gaussian(7, 4, &mut rng);
        let projected = feats.matmul(&w).unwrap();
        let users = dense_neighbor_mean(&graph, &projected);
        let mut expected = Matrix::vstack(&[&users, &projected]).unwrap();

        let mut tape = Tape::new();
        let (f, wv) = (tape.constant(feats), tape.constant(w));
        let proj = project_modality(&mut tape, f, wv).unwrap();
        let stacked = modality_input(&mut tape, &graph, proj).unwrap();
        let (last, layers) = propagate_modality(&mut tape, &graph, stacked, 2).unwrap();
        for (l, &layer) in layers.iter().enumerate() {
            if l > 0 {
                expected = adj.matmul(&expected).unwrap();
            }
            assert!(tape.value(layer).max_abs_diff(&expected) < 1e-12, "layer {l}");
        }
        assert_eq!(tape.value(last), tape.value(layers[2]));
    }
}

#[test]
fn normalized_adjacency_is_symmetric_with_bounded_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..10 {
        let graph = random_graph(&mut rng, 40);
        let adj = graph.norm_adjacency().to_dense();
        assert!(adj.max_abs_diff(&adj.transpose()) < 1e-15);
        assert!(adj.max_abs_diff(&dense_norm_adjacency(&graph)) < 1e-15);
        // The eigenvector D^{1/2}·1 has eigenvalue 1.
        let n = graph.n_nodes();
        let root_deg = Matrix::from_fn(n, 1, |r, _| {
            graph.adjacency().row(r).map(|(_, v)| v).sum::<f64>().sqrt()
        });
        let image = adj.matmul(&root_deg).unwrap();
        assert!(image.max_abs_diff(&root_deg) < 1e-12);
    }
}
