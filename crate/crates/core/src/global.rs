//! Global interaction: a modality-guided gate that purifies item ID
//! embeddings, hyperedge affinities derived from the purified embeddings,
//! and propagation through the resulting dependency matrices.
//!
//! Shapes, for `q` items, `p` users, embedding size `d`, feature size `d_m`
//! and `B` hyperedges:
//!
//! | value            | shape     |
//! |------------------|-----------|
//! | expanded feature | `q × 4d`  |
//! | gated embedding  | `q × d`   |
//! | item affinity    | `q × B`   |
//! | user affinity    | `p × B`   |

use rand::RngCore;

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;

/// Settings for the global branch. Defaults for `dropout`, `depth`, `alpha`
/// and the contrastive weight are not published values; they are tunable.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalConfig {
    /// Number of hyperedges `B`.
    pub hyperedges: usize,
    /// Hypergraph propagation depth `H`.
    pub depth: usize,
    pub dropout: f64,
    /// Contrastive temperature `τ`.
    pub temperature: f64,
    /// Weight `α` of each modality's global embedding in the final fusion.
    pub alpha: f64,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            hyperedges: 4,
            depth: 2,
            dropout: 0.2,
            temperature: 0.2,
            alpha: 0.2,
        }
    }
}

impl GlobalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hyperedges == 0 {
            return Err(Error::Config("global.hyperedges must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("global.depth must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("global.dropout {} not in [0, 1)", self.dropout)));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config("global.temperature must be positive".into()));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config("global.alpha must be non-negative".into()));
        }
        Ok(())
    }
}

/// `features · W₁ᵀ + b₁`, with `W₁` of shape `4d × d_m` and `b₁` a `1 × 4d`
/// row broadcast over items.
pub fn expand_features(tape: &mut Tape, features: Var, weight: Var, bias: Var) -> Result<Var> {
    let (f, w, b) = (tape.shape(features), tape.shape(weight), tape.shape(bias));
    if f.1 != w.1 {
        return Err(Error::shape("expand_features", f, w));
    }
    if b != (1, w.0) {
        return Err(Error::shape("expand_features", w, b));
    }
    let wt = tape.transpose(weight)?;
    let lin = tape.matmul(features, wt)?;
    tape.add(lin, bias)
}

/// `items ⊙ σ(expanded · W₂ᵀ + b₂)`. The gate lies in `(0, 1)`, so the output
/// never exceeds the item embedding in magnitude.
pub fn gate_filter(tape: &mut Tape, items: Var, expanded: Var, weight: Var, bias: Var) -> Result<Var> {
    let (e, w, b, it) = (
        tape.shape(expanded),
        tape.shape(weight),
        tape.shape(bias),
        tape.shape(items),
    );
    if e.1 != w.1 {
        return Err(Error::shape("gate_filter", e, w));
    }
    if b != (1, w.0) {
        return Err(Error::shape("gate_filter", w, b));
    }
    if it != (e.0, w.0) {
        return Err(Error::shape("gate_filter", it, (e.0, w.0)));
    }
    let wt = tape.transpose(weight)?;
    let lin = tape.matmul(expanded, wt)?;
    let pre = tape.add(lin, bias)?;
    let gate = tape.sigmoid(pre)?;
    tape.mul(items, gate)
}

/// Item affinities to the hyperedges: `filtered · Tᵀ` with `T` of shape `B × d`.
pub fn item_hyperedges(tape: &mut Tape, filtered: Var, transform: Var) -> Result<Var> {
    let (f, t) = (tape.shape(filtered), tape.shape(transform));
    if f.1 != t.1 {
        return Err(Error::shape("item_hyperedges", f, t));
    }
    let tt = tape.transpose(transform)?;
    tape.matmul(filtered, tt)
}

/// User affinities: the mean of each user's neighbor item affinities.
pub fn user_hyperedges(tape: &mut Tape, graph: &InteractionGraph, item_affinity: Var) -> Result<Var> {
    let shape = tape.shape(item_affinity);
    if shape.0 != graph.n_items() {
        return Err(Error::shape("user_hyperedges", graph.neighbor_mean().shape(), shape));
    }
    tape.sparse_matmul(graph.neighbor_mean(), item_affinity)
}

/// Propagates the item seed through hyperedge dependency matrices.
///
/// With `H̃ = softmax` over hyperedges, each of `depth` rounds computes
/// `Eᵢ ← Drop(H̃ᵢH̃ᵢᵀ)·Eᵢ` and `Eᵤ ← Drop(H̃ᵤH̃ᵢᵀ)·Eᵢ`, both from the
/// previous item stream. Dropout applies only when `rng` is given (training).
/// Returns `(users, items)` after the last round.
pub fn hypergraph_propagate(
    tape: &mut Tape,
    user_affinity: Var,
    item_affinity: Var,
    item_seed: Var,
    depth: usize,
    dropout: f64,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<(Var, Var)> {
    if depth == 0 {
        return Err(Error::InvalidArgument("hypergraph depth must be at least 1".into()));
    }
    let (hu, hi, seed) = (
        tape.shape(user_affinity),
        tape.shape(item_affinity),
        tape.shape(item_seed),
    );
    if hu.1 != hi.1 {
        return Err(Error::shape("hypergraph_propagate", hu, hi));
    }
    if seed.0 != hi.0 {
        return Err(Error::shape("hypergraph_propagate", hi, seed));
    }
    let user_soft = tape.row_softmax(user_affinity)?;
    let item_soft = tape.row_softmax(item_affinity)?;
    let item_soft_t = tape.transpose(item_soft)?;
    let item_dep = tape.matmul(item_soft, item_soft_t)?;
    let user_dep = tape.matmul(user_soft, item_soft_t)?;

    let mut items = item_seed;
    let mut users = None;
    for _ in 0..depth {
        let (item_mix, user_mix) = match rng.as_deref_mut() {
            Some(r) => (
                tape.dropout(item_dep, dropout, r)?,
                tape.dropout(user_dep, dropout, r)?,
            ),
            None => (item_dep, user_dep),
        };
        let next_items = tape.matmul(item_mix, items)?;
        users = Some(tape.matmul(user_mix, items)?);
        items = next_items;
    }
    Ok((users.expect("depth >= 1"), items))
}

/// Stacks one modality's global user and item embeddings.
pub fn fuse_global(tape: &mut Tape, users: Var, items: Var) -> Result<Var> {
    tape.concat_rows(&[users, items])
}

/// In-batch InfoNCE between two views with cosine similarity:
/// `Σ_u −ln( exp(s(a_u, b_u)/τ) / Σ_{u'} exp(s(a_u, b_{u'})/τ) )`.
pub fn contrastive_loss(tape: &mut Tape, a: Var, b: Var, temperature: f64) -> Result<Var> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(Error::shape("contrastive_loss", sa, sb));
    }
    if sa.0 < 2 {
        return Err(Error::InvalidArgument(format!(
            "contrastive loss needs at least 2 rows, got {}",
            sa.0
        )));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let na = tape.row_l2_normalize(a)?;
    let nb = tape.row_l2_normalize(b)?;
    let nbt = tape.transpose(nb)?;
    let sim = tape.matmul(na, nbt)?;
    let logits = tape.scale(sim, 1.0 / temperature)?;
    let probs = tape.row_softmax(logits)?;
    let log_probs = tape.ln(probs)?;
    let eye = tape.constant(Matrix::identity(sa.0));
    let diag = tape.mul(log_probs, eye)?;
    let total = tape.sum(diag)?;
    tape.scale(total, -1.0)
}

/// `E* = E_loc + Σ_m α·Norm(E_glo_m)`, `Norm` the row-wise L2 normalization.
pub fn fuse_final(tape: &mut Tape, local: Var, global: &[Var], alpha: f64) -> Result<Var> {
    let mut out = local;
    for &g in global {
        let (a, b) = (tape.shape(local), tape.shape(g));
        if a != b {
            return Err(Error::shape("fuse_final", a, b));
        }
        let normalized = tape.row_l2_normalize(g)?;
        let weighted = tape.scale(normalized, alpha)?;
        out = tape.add(out, weighted)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn expand_features_is_affine() {
        let mut tape = Tape::new();
        let f0 = random(3, 5, 1);
        let f = tape.constant(f0.clone());
        let zero_w = tape.constant(Matrix::zeros(8, 5));
        let c = Matrix::from_fn(1, 8, |_, k| k as f64 - 3.0);
        let b = tape.constant(c.clone());
        let out = expand_features(&mut tape, f, zero_w, b).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(out).row(r), c.row(0));
        }

        let w0 = random(8, 5, 2);
        let w = tape.constant(w0.clone());
        let zero_b = tape.constant(Matrix::zeros(1, 8));
        let basis = tape.constant(Matrix::from_fn(1, 5, |_, k| if k == 2 { 1.0 } else { 0.0 }));
        let out = expand_features(&mut tape, basis, w, zero_b).unwrap();
        for k in 0..8 {
            assert_eq!(tape.value(out).get(0, k), w0.get(k, 2));
        }

        let b0 = random(1, 8, 3);
        let b = tape.constant(b0.clone());
        let out = expand_features(&mut tape, f, w, b).unwrap();
        for r in 0..3 {
            for k in 0..8 {
                let mut expected = b0.get(0, k);
                for j in 0..5 {
                    expected += f0.get(r, j) * w0.get(k, j);
                }
                assert!((tape.value(out).get(r, k) - expected).abs() < 1e-12);
            }
        }
        assert!(expand_features(&mut tape, f, w, zero_w).is_err());
    }

    #[test]
    fn gate_filter_limits() {
        let mut tape = Tape::new();
        let items0 = random(4, 3, 4);
        let items = tape.constant(items0.clone());
        let expanded = tape.constant(random(4, 12, 5));
        let w_zero = tape.constant(Matrix::zeros(3, 12));
        let b_zero = tape.constant(Matrix::zeros(1, 3));
        let out = gate_filter(&mut tape, items, expanded, w_zero, b_zero).unwrap();
        assert!(tape.value(out).max_abs_diff(&items0.scale(0.5)) < 1e-15);

        let b_big = tape.constant(Matrix::filled(1, 3, 30.0));
        let out = gate_filter(&mut tape, items, expanded, w_zero, b_big).unwrap();
        assert!(tape.value(out).max_abs_diff(&items0) < 1e-9);

        let zero_items = tape.constant(Matrix::zeros(4, 3));
        let w = tape.constant(random(3, 12, 6));
        let out = gate_filter(&mut tape, zero_items, expanded, w, b_zero).unwrap();
        assert_eq!(*tape.value(out), Matrix::zeros(4, 3));

        let out = gate_filter(&mut tape, items, expanded, w, b_zero).unwrap();
        for (o, i) in tape.value(out).as_slice().iter().zip(items0.as_slice()) {
            assert!(o.abs() <= i.abs());
        }
    }

    #[test]
    fn hyperedge_affinities() {
        let mut tape = Tape::new();
        let t = tape.constant(Matrix::identity(3));
        let filtered = tape.constant(Matrix::from_rows(&[[0.0, 1.0, 0.0]]));
        let h = item_hyperedges(&mut tape, filtered, t).unwrap();
        assert_eq!(*tape.value(h), Matrix::from_rows(&[[0.0, 1.0, 0.0]]));

        let zero = tape.constant(Matrix::zeros(2, 3));
        let t = tape.constant(random(4, 3, 7));
        let h = item_hyperedges(&mut tape, zero, t).unwrap();
        assert_eq!(*tape.value(h), Matrix::zeros(2, 4));

        let (f0, t0) = (random(5, 3, 8), random(4, 3, 9));
        let (f, t) = (tape.constant(f0.clone()), tape.constant(t0.clone()));
        let h = item_hyperedges(&mut tape, f, t).unwrap();
        assert!(tape.value(h).max_abs_diff(&f0.matmul(&t0.transpose()).unwrap()) < 1e-12);
    }

    #[test]
    fn user_affinity_is_neighbor_mean() {
        let g = InteractionGraph::build(&[(0, 1), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)], 3, 3).unwrap();
        let h0 = random(3, 4, 10);
        let mut tape = Tape::new();
        let h = tape.constant(h0.clone());
        let hu = user_hyperedges(&mut tape, &g, h).unwrap();
        assert_eq!(tape.value(hu).row(0), h0.row(1));
        for u in 0..3 {
            let nbrs = g.user_neighbors(u);
            for b in 0..4 {
                let mean = nbrs.iter().map(|&i| h0.get(i, b)).sum::<f64>() / nbrs.len() as f64;
                assert!((tape.value(hu).get(u, b) - mean).abs() < 1e-12);
            }
        }
        let same = tape.constant(Matrix::from_fn(3, 4, |_, b| b as f64 * 0.25));
        let hu = user_hyperedges(&mut tape, &g, same).unwrap();
        for u in 0..3 {
            for b in 0..4 {
                assert!((tape.value(hu).get(u, b) - b as f64 * 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_hyperedge_gives_column_sums() {
        let mut tape = Tape::new();
        let e0 = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]);
        let seed = tape.constant(e0.clone());
        let hi = tape.constant(random(3, 1, 11));
        let hu = tape.constant(random(2, 1, 12));
        let (users, items) = hypergraph_propagate(&mut tape, hu, hi, seed, 1, 0.0, None).unwrap();
        for r in 0..3 {
            assert!((tape.value(items).get(r, 0) - 4.5).abs() < 1e-15);
            assert!((tape.value(items).get(r, 1) - 1.5).abs() < 1e-15);
        }
        for r in 0..2 {
            assert_eq!(tape.value(users).row(r), &[4.5, 1.5]);
        }
        assert!(hypergraph_propagate(&mut tape, hu, hi, seed, 0, 0.0, None).is_err());
    }

    /// Direct evaluation of the two recurrences.
    fn hypergraph_oracle(hu: &Matrix, hi: &Matrix, seed: &Matrix, depth: usize) -> (Matrix, Matrix) {
        let softmax = |m: &Matrix| {
            Matrix::from_fn(m.rows(), m.cols(), |r, c| {
                let z: f64 = m.row(r).iter().map(|v| v.exp()).sum();
                m.get(r, c).exp() / z
            })
        };
        let (su, si) = (softmax(hu), softmax(hi));
        let mut items = seed.clone();
        let mut users = Matrix::zeros(hu.rows(), seed.cols());
        for _ in 0..depth {
            let mut next_items = Matrix::zeros(items.rows(), items.cols());
            for a in 0..si.rows() {
                for b in 0..si.rows() {
                    let w: f64 = (0..si.cols()).map(|k| si.get(a, k) * si.get(b, k)).sum();
                    for c in 0..items.cols() {
                        next_items.set(a, c, next_items.get(a, c) + w * items.get(b, c));
                    }
                }
            }
            users = Matrix::zeros(hu.rows(), seed.cols());
            for u in 0..su.rows() {
                for b in 0..si.rows() {
                    let w: f64 = (0..si.cols()).map(|k| su.get(u, k) * si.get(b, k)).sum();
                    for c in 0..items.cols() {
                        users.set(u, c, users.get(u, c) + w * items.get(b, c));
                    }
                }
            }
            items = next_items;
        }
        (users, items)
    }

    #[test]
    fn hypergraph_matches_oracle_without_dropout() {
        let (hu0, hi0, seed0) = (random(4, 3, 13), random(5, 3, 14), random(5, 2, 15));
        let mut tape = Tape::new();
        let (hu, hi, seed) = (
            tape.constant(hu0.clone()),
            tape.constant(hi0.clone()),
            tape.constant(seed0.clone()),
        );
        let (users, items) = hypergraph_propagate(&mut tape, hu, hi, seed, 2, 0.0, None).unwrap();
        let (ou, oi) = hypergraph_oracle(&hu0, &hi0, &seed0, 2);
        assert!(tape.value(users).max_abs_diff(&ou) < 1e-12);
        assert!(tape.value(items).max_abs_diff(&oi) < 1e-12);

        // Evaluation mode ignores the dropout rate entirely.
        let (u2, i2) = hypergraph_propagate(&mut tape, hu, hi, seed, 2, 0.5, None).unwrap();
        assert_eq!(tape.value(u2), tape.value(users));
        assert_eq!(tape.value(i2), tape.value(items));

        // Training mode with a seeded generator replays exactly.
        let run = |tape: &mut Tape, s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (u, _) = hypergraph_propagate(tape, hu, hi, seed, 2, 0.5, Some(&mut rng)).unwrap();
            tape.value(u).clone()
        };
        assert_eq!(run(&mut tape, 3), run(&mut tape, 3));
    }

    #[test]
    fn contrastive_identical_rows_give_n_ln_n() {
        for n in [2usize, 3, 7] {
            let mut tape = Tape::new();
            let v = tape.constant(Matrix::from_fn(n, 4, |_, c| c as f64 + 1.0));
            let loss = contrastive_loss(&mut tape, v, v, 0.2).unwrap();
            let oracle = n as f64 * (n as f64).ln();
            assert!((tape.scalar(loss).unwrap() - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn contrastive_two_orthogonal_rows_closed_form() {
        let mut tape = Tape::new();
        let v = tape.constant(Matrix::identity(2));
        let loss = contrastive_loss(&mut tape, v, v, 0.2).unwrap();
        let closed = 2.0 * (-5.0f64).exp().ln_1p();
        let direct = -2.0 * (5.0f64.exp() / (5.0f64.exp() + 1.0)).ln();
        assert!((closed - direct).abs() < 1e-15);
        assert!((tape.scalar(loss).unwrap() - closed).abs() < 1e-12);
    }

    #[test]
    fn contrastive_temperature_acts_through_the_ratio() {
        let (a0, b0) = (random(5, 3, 16), random(5, 3, 17));
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(a0), tape.constant(b0));
        let base = contrastive_loss(&mut tape, a, b, 0.2).unwrap();
        let sharp = contrastive_loss(&mut tape, a, b, 0.1).unwrap();
        // Halving τ doubles every logit: compare against logits scaled by hand.
        let (na, nb) = (tape.row_l2_normalize(a).unwrap(), tape.row_l2_normalize(b).unwrap());
        let nbt = tape.transpose(nb).unwrap();
        let sim = tape.matmul(na, nbt).unwrap();
        let s = tape.value(sim).clone();
        let manual: f64 = (0..5)
            .map(|r| {
                let z: f64 = (0..5).map(|c| (2.0 * s.get(r, c) / 0.2).exp()).sum();
                -((2.0 * s.get(r, r) / 0.2).exp() / z).ln()
            })
            .sum();
        assert!((tape.scalar(sharp).unwrap() - manual).abs() < 1e-10);
        assert!(tape.scalar(base).unwrap() != tape.scalar(sharp).unwrap());
        let one = tape.constant(Matrix::zeros(1, 3));
        assert!(contrastive_loss(&mut tape, one, one, 0.2).is_err());
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let params = BTreeMap::from([
            ("a".to_string(), random(4, 3, 18)),
            ("b".to_string(), random(4, 3, 19)),
        ]);
        let report = finite_diff_check(
            |tape, v| contrastive_loss(tape, v["a"], v["b"], 0.2),
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn fuse_final_cases() {
        let mut tape = Tape::new();
        let loc0 = random(5, 3, 20);
        let loc = tape.constant(loc0.clone());
        let g = tape.constant(random(5, 3, 21));
        let out = fuse_final(&mut tape, loc, &[g], 0.0).unwrap();
        assert_eq!(*tape.value(out), loc0);

        let unit = Matrix::from_fn(5, 3, |r, c| if c == r % 3 { -1.0 } else { 0.0 });
        let u = tape.constant(unit.clone());
        let out = fuse_final(&mut tape, loc, &[u], 0.3).unwrap();
        let mut expected = loc0.clone();
        expected.add_assign(&unit.scale(0.3));
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-15);

        let (a0, b0) = (random(5, 3, 22), random(5, 3, 23));
        let (a, b) = (tape.constant(a0.clone()), tape.constant(b0.clone()));
        let out = fuse_final(&mut tape, loc, &[a, b], 0.7).unwrap();
        for r in 0..5 {
            let na = a0.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b0.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in 0..3 {
                let expected = loc0.get(r, c) + 0.7 * a0.get(r, c) / na + 0.7 * b0.get(r, c) / nb;
                assert!((tape.value(out).get(r, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fuse_global_stacks_users_above_items() {
        let mut tape = Tape::new();
        let users = tape.constant(random(3, 4, 24));
        let items0 = random(2, 4, 25);
        let items = tape.constant(items0.clone());
        let out = fuse_global(&mut tape, users, items).unwrap();
        assert_eq!(tape.shape(out), (5, 4));
        assert_eq!(tape.value(out).row(3), items0.row(0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn softmaxed_affinities_are_distributions(seed in any::<u64>()) {
            let mut tape = Tape::new();
            let h = tape.constant(random(6, 4, seed).scale(5.0));
            let s = tape.row_softmax(h).unwrap();
            for r in 0..6 {
                let row = tape.value(s).row(r);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn hypergraph_is_linear_in_the_seed(seed in any::<u64>(), a in -2.0f64..2.0) {
            let (hu0, hi0, x0, y0) = (random(3, 2, seed), random(4, 2, seed ^ 1), random(4, 3, seed ^ 2), random(4, 3, seed ^ 3));
            let mut tape = Tape::new();
            let (hu, hi) = (tape.constant(hu0), tape.constant(hi0));
            let mut combo = x0.scale(a);
            combo.add_assign(&y0);
            let (x, y, c) = (tape.constant(x0), tape.constant(y0), tape.constant(combo));
            let (ux, ix) = hypergraph_propagate(&mut tape, hu, hi, x, 2, 0.0, None).unwrap();
            let (uy, iy) = hypergraph_propagate(&mut tape, hu, hi, y, 2, 0.0, None).unwrap();
            let (uc, ic) = hypergraph_propagate(&mut tape, hu, hi, c, 2, 0.0, None).unwrap();
            let mut eu = tape.value(ux).scale(a);
            eu.add_assign(tape.value(uy));
            let mut ei = tape.value(ix).scale(a);
            ei.add_assign(tape.value(iy));
            prop_assert!(tape.value(uc).max_abs_diff(&eu) < 1e-10);
            prop_assert!(tape.value(ic).max_abs_diff(&ei) < 1e-10);
        }

        #[test]
        fn contrastive_loss_is_rotation_invariant(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU) {
            let (a0, b0) = (random(5, 2, seed), random(5, 2, seed ^ 9));
            let rot = Matrix::from_rows(&[[angle.cos(), -angle.sin()], [angle.sin(), angle.cos()]]);
            let mut tape = Tape::new();
            let (a, b) = (tape.constant(a0.clone()), tape.constant(b0.clone()));
            let (ra, rb) = (tape.constant(a0.matmul(&rot).unwrap()), tape.constant(b0.matmul(&rot).unwrap()));
            let base = contrastive_loss(&mut tape, a, b, 0.2).unwrap();
            let rotated = contrastive_loss(&mut tape, ra, rb, 0.2).unwrap();
            prop_assert!((tape.scalar(base).unwrap() - tape.scalar(rotated).unwrap()).abs() < 1e-10);
        }
    }
}
