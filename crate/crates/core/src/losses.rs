//! Training objectives: pairwise ranking (BPR), the dynamic de-redundancy
//! (DDR) penalty on embedding-column correlation, and their weighted total.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use crate::autodiff::{Matrix, SparseMatrix, Tape, Var, EPS};
use crate::error::{Error, Result};

/// Sampled `(user, positive item, negative item)` triples. Item ids are
/// `0..q`, not node ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleBatch {
    pub users: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl TripleBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn push(&mut self, user: usize, positive: usize, negative: usize) {
        self.users.push(user);
        self.positives.push(positive);
        self.negatives.push(negative);
    }
}

/// Weights of the regularizer and the auxiliary loss terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// L2 weight `λ` on all parameters.
    pub lambda: f64,
    /// Contrastive weight `ω`.
    pub omega: f64,
    /// Collaborative DDR weight `β`.
    pub beta: f64,
    /// Modality DDR weight `δ`.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1e-4,
            omega: 1e-4,
            beta: 1e-4,
            delta: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("omega", self.omega),
            ("beta", self.beta),
            ("delta", self.delta),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Config(format!("loss.{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// One-hot rows selecting `nodes` out of a `(p+q)`-row embedding matrix.
fn selector(nodes: impl ExactSizeIterator<Item = usize>, n_nodes: usize) -> Result<Arc<SparseMatrix>> {
    let rows = nodes.len();
    let entries = nodes.enumerate().map(|(r, n)| (r, n, 1.0)).collect();
    Ok(Arc::new(SparseMatrix::from_triplets(rows, n_nodes, entries)?))
}

/// `Σ −ln σ(r_ui − r_uj) + λ Σ_Θ ‖Θ‖²` with `r_ui = ⟨E*_u, E*_{p+i}⟩`.
///
/// `params` are the tensors covered by the L2 term.
pub fn bpr_loss(
    tape: &mut Tape,
    embeddings: Var,
    batch: &TripleBatch,
    n_users: usize,
    lambda: f64,
    params: &[Var],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty BPR batch".into()));
    }
    let (n_nodes, dim) = tape.shape(embeddings);
    let item_node = |i: &usize| n_users + i;
    let users = selector(batch.users.iter().copied(), n_nodes)?;
    let pos = selector(batch.positives.iter().map(item_node), n_nodes)?;
    let neg = selector(batch.negatives.iter().map(item_node), n_nodes)?;

    let eu = tape.sparse_matmul(&users, embeddings)?;
    let ei = tape.sparse_matmul(&pos, embeddings)?;
    let ej = tape.sparse_matmul(&neg, embeddings)?;
    let diff_items = tape.sub(ei, ej)?;
    let prod = tape.mul(eu, diff_items)?;
    let mean = tape.row_mean(prod)?;
    let margin = tape.scale(mean, dim as f64)?;
    // −ln σ(x) = softplus(−x)
    let neg_margin = tape.scale(margin, -1.0)?;
    let per_triple = tape.softplus(neg_margin)?;
    let mut loss = tape.sum(per_triple)?;

    if lambda != 0.0 && !params.is_empty() {
        let mut reg = None;
        for &p in params {
            let sq = tape.mul(p, p)?;
            let s = tape.sum(sq)?;
            reg = Some(match reg {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        let reg = tape.scale(reg.expect("non-empty"), lambda)?;
        loss = tape.add(loss, reg)?;
    }
    Ok(loss)
}

/// Correlations between columns minus the identity, plus the matrix
/// itself: returns `(P_R − I, P_R)` sharing one tape subgraph.
fn correlation_parts(tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
    let (n, d) = tape.shape(x);
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "column correlation needs at least 2 rows, got {n}"
        )));
    }
    let mean = tape.col_mean(x)?;
    let centered = tape.sub(x, mean)?;
    let centered_t = tape.transpose(centered)?;
    let cov = tape.matmul(centered_t, centered)?;
    let sq = tape.mul(centered, centered)?;
    let var_mean = tape.col_mean(sq)?;
    let var = tape.scale(var_mean, n as f64)?;
    // 1/√var through ln/exp; ln floors its argument at 1e-12, so a constant
    // column contributes zero correlation instead of dividing by zero.
    let log_var = tape.ln(var)?;
    let half = tape.scale(log_var, -0.5)?;
    let inv_std = tape.exp(half)?;
    let inv_std_t = tape.transpose(inv_std)?;
    let outer = tape.matmul(inv_std_t, inv_std)?;
    let corr = tape.mul(cov, outer)?;
    let off_mask = tape.constant(Matrix::from_fn(d, d, |r, c| if r == c { 0.0 } else { 1.0 }));
    let off = tape.mul(corr, off_mask)?;
    let eye = tape.constant(Matrix::identity(d));
    let full = tape.add(off, eye)?;
    Ok((off, full))
}

/// Pearson correlation matrix of the columns of `x` (`n × d`, `n ≥ 2`). The
/// diagonal is exactly one.
pub fn column_correlation(tape: &mut Tape, x: Var) -> Result<Var> {
    Ok(correlation_parts(tape, x)?.1)
}

/// `‖P_R − I‖_F / √2`.
pub fn p_cov(tape: &mut Tape, x: Var) -> Result<Var> {
    let (off, _) = correlation_parts(tape, x)?;
    let norm = tape.frobenius_norm(off)?;
    tape.scale(norm, FRAC_1_SQRT_2)
}

/// Inverse-`p_cov` weights normalized to sum to one. Values are floored at
/// `1e-12` first.
pub fn layer_coefficients(values: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = values.iter().map(|v| 1.0 / v.max(EPS)).collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|v| v / total).collect()
}

/// Layer coefficients `μ` of one DDR term, per side.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DdrCoefficients {
    pub users: Vec<f64>,
    pub items: Vec<f64>,
}

/// `μ` for every DDR term of the objective.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerCoefficients {
    pub ddr: DdrCoefficients,
    /// One entry per modality, in forward-pass order.
    pub ddr_mm: Vec<DdrCoefficients>,
}

/// Per-layer DDR penalty over matching user and item layer lists.
///
/// Layer coefficients are computed from the forward values and enter the
/// tape as constants.
pub fn ddr_loss(tape: &mut Tape, user_layers: &[Var], item_layers: &[Var]) -> Result<Var> {
    Ok(ddr_loss_with(tape, user_layers, item_layers, None)?.0)
}

/// [`ddr_loss`] with the option of supplying the coefficients instead of
/// deriving them. Returns the coefficients used.
pub fn ddr_loss_with(
    tape: &mut Tape,
    user_layers: &[Var],
    item_layers: &[Var],
    coefficients: Option<&DdrCoefficients>,
) -> Result<(Var, DdrCoefficients)> {
    if user_layers.len() != item_layers.len() {
        return Err(Error::InvalidArgument(format!(
            "ddr_loss: {} user layers but {} item layers",
            user_layers.len(),
            item_layers.len()
        )));
    }
    if user_layers.is_empty() {
        return Err(Error::InvalidArgument("ddr_loss: no layers".into()));
    }
    let mut total = tape.constant(Matrix::scalar(0.0));
    let mut used = DdrCoefficients::default();
    for (side, given, out) in [
        (user_layers, coefficients.map(|c| &c.users), &mut used.users),
        (item_layers, coefficients.map(|c| &c.items), &mut used.items),
    ] {
        let pcovs = side
            .iter()
            .map(|&layer| p_cov(tape, layer))
            .collect::<Result<Vec<_>>>()?;
        let mu = match given {
            Some(mu) if mu.len() == pcovs.len() => mu.clone(),
            Some(mu) => {
                return Err(Error::InvalidArgument(format!(
                    "ddr_loss: {} coefficients for {} layers",
                    mu.len(),
                    pcovs.len()
                )))
            }
            None => {
                let values = pcovs
                    .iter()
                    .map(|&v| tape.scalar(v))
                    .collect::<Result<Vec<_>>>()?;
                layer_coefficients(&values)
            }
        };
        for (&v, &m) in pcovs.iter().zip(&mu) {
            let weighted = tape.scale(v, m)?;
            total = tape.add(total, weighted)?;
        }
        *out = mu;
    }
    Ok((total, used))
}

/// [`ddr_loss`] summed over modalities; each entry holds one modality's
/// `(user layers, item layers)`.
pub fn ddr_mm_loss(tape: &mut Tape, per_modality: &[(Vec<Var>, Vec<Var>)]) -> Result<Var> {
    Ok(ddr_mm_loss_with(tape, per_modality, None)?.0)
}

pub fn ddr_mm_loss_with(
    tape: &mut Tape,
    per_modality: &[(Vec<Var>, Vec<Var>)],
    coefficients: Option<&[DdrCoefficients]>,
) -> Result<(Var, Vec<DdrCoefficients>)> {
    if let Some(c) = coefficients {
        if c.len() != per_modality.len() {
            return Err(Error::InvalidArgument(format!(
                "ddr_mm_loss: coefficients for {} modalities, got {}",
                c.len(),
                per_modality.len()
            )));
        }
    }
    let mut total = tape.constant(Matrix::scalar(0.0));
    let mut used = Vec::with_capacity(per_modality.len());
    for (k, (users, items)) in per_modality.iter().enumerate() {
        let (l, mu) = ddr_loss_with(tape, users, items, coefficients.map(|c| &c[k]))?;
        total = tape.add(total, l)?;
        used.push(mu);
    }
    Ok((total, used))
}

/// Splits stacked `(p+q)`-row layers into user and item blocks.
pub fn split_blocks(tape: &mut Tape, layers: &[Var], n_users: usize) -> Result<(Vec<Var>, Vec<Var>)> {
    let mut users = Vec::with_capacity(layers.len());
    let mut items = Vec::with_capacity(layers.len());
    for &layer in layers {
        let rows = tape.shape(layer).0;
        if rows <= n_users {
            return Err(Error::InvalidArgument(format!(
                "layer with {rows} rows has no item block after {n_users} users"
            )));
        }
        users.push(tape.slice_rows(layer, 0, n_users)?);
        items.push(tape.slice_rows(layer, n_users, rows - n_users)?);
    }
    Ok((users, items))
}

/// The scalar terms that make up the objective.
#[derive(Clone, Debug)]
pub struct LossComponents {
    pub bpr: Var,
    pub contrastive_users: Var,
    pub contrastive_items: Var,
    pub ddr: Var,
    pub ddr_mm: Var,
    /// The DDR layer coefficients that were applied.
    pub coefficients: LayerCoefficients,
}

/// `bpr + ω(hcl_u + hcl_i) + β·ddr + δ·ddr_mm`.
pub fn total_loss(tape: &mut Tape, parts: &LossComponents, weights: &LossWeights) -> Result<Var> {
    let hcl = tape.add(parts.contrastive_users, parts.contrastive_items)?;
    let hcl = tape.scale(hcl, weights.omega)?;
    let ddr = tape.scale(parts.ddr, weights.beta)?;
    let ddr_mm = tape.scale(parts.ddr_mm, weights.delta)?;
    let total = tape.add(parts.bpr, hcl)?;
    let total = tape.add(total, ddr)?;
    tape.add(total, ddr_mm)
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

    /// Pearson correlation of two columns by explicit loops.
    fn pearson(x: &Matrix, a: usize, b: usize) -> f64 {
        let n = x.rows() as f64;
        let ma = (0..x.rows()).map(|r| x.get(r, a)).sum::<f64>() / n;
        let mb = (0..x.rows()).map(|r| x.get(r, b)).sum::<f64>() / n;
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for r in 0..x.rows() {
            let (da, db) = (x.get(r, a) - ma, x.get(r, b) - mb);
            cov += da * db;
            va += da * da;
            vb += db * db;
        }
        cov / (va * vb).sqrt()
    }

    fn pcov_oracle(x: &Matrix) -> f64 {
        let d = x.cols();
        let mut total = 0.0;
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    total += pearson(x, a, b).powi(2);
                }
            }
        }
        (total / 2.0).sqrt()
    }

    fn pcov_value(x: &Matrix) -> f64 {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let p = p_cov(&mut tape, v).unwrap();
        tape.scalar(p).unwrap()
    }

    #[test]
    fn equal_scores_cost_ln2_per_triple() {
        let mut tape = Tape::new();
        // Item rows identical so every r_ui equals r_uj.
        let e = tape.constant(Matrix::from_fn(5, 3, |r, c| if r < 2 { (r + c) as f64 } else { 0.5 }));
        let mut batch = TripleBatch::default();
        batch.push(0, 0, 1);
        batch.push(1, 2, 0);
        batch.push(0, 1, 2);
        let loss = bpr_loss(&mut tape, e, &batch, 2, 0.0, &[]).unwrap();
        assert!((tape.scalar(loss).unwrap() - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bpr_loss(&mut tape, e, &TripleBatch::default(), 2, 0.0, &[]).is_err());
    }

    #[test]
    fn saturated_margin_costs_nothing() {
        let mut tape = Tape::new();
        // User [1,0], positive [30,0], negative [0,0]: margin 30.
        let e = tape.constant(Matrix::from_rows(&[[1.0, 0.0], [30.0, 0.0], [0.0, 0.0]]));
        let mut batch = TripleBatch::default();
        batch.push(0, 0, 1);
        let loss = bpr_loss(&mut tape, e, &batch, 1, 0.0, &[]).unwrap();
        let value = tape.scalar(loss).unwrap();
        assert!(value < 1e-12);
        assert!((value - (-30.0f64).exp().ln_1p()).abs() < 1e-20);
    }

    #[test]
    fn regularizer_is_squared_l2() {
        let mut tape = Tape::new();
        let e = tape.constant(Matrix::zeros(2, 2));
        let mut w = Matrix::zeros(3, 2);
        w.set(1, 1, 2.0);
        let w = tape.leaf("w", w).unwrap();
        let z = tape.leaf("z", Matrix::zeros(2, 2)).unwrap();
        let mut batch = TripleBatch::default();
        batch.push(0, 0, 0);
        let loss = bpr_loss(&mut tape, e, &batch, 1, 1.0, &[w, z]).unwrap();
        let reg = tape.scalar(loss).unwrap() - std::f64::consts::LN_2;
        assert!((reg - 4.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_of_duplicate_and_constant_columns() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [-4.0, -4.0]]));
        let p = column_correlation(&mut tape, x).unwrap();
        assert!(tape.value(p).max_abs_diff(&Matrix::filled(2, 2, 1.0)) < 1e-12);
        assert!((pcov_value(&Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [-4.0, -4.0]])) - 1.0).abs() < 1e-12);

        let x0 = Matrix::from_rows(&[[1.0, 0.0, 3.0], [-1.0, 0.0, 3.0], [0.0, 1.0, 3.0]]);
        let x = tape.constant(x0.clone());
        let p = column_correlation(&mut tape, x).unwrap();
        let p = tape.value(p);
        assert!((p.get(0, 1) - pearson(&x0, 0, 1)).abs() < 1e-12);
        assert_eq!(p.get(0, 2), 0.0);
        assert_eq!(p.get(2, 1), 0.0);
        for i in 0..3 {
            assert_eq!(p.get(i, i), 1.0);
        }
        let short = tape.constant(Matrix::zeros(1, 3));
        assert!(column_correlation(&mut tape, short).is_err());
    }

    #[test]
    fn decorrelated_design_has_zero_pcov() {
        // Columns of a centered Hadamard design are orthogonal.
        let h = Matrix::from_rows(&[
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ]);
        assert!(pcov_value(&h) < 1e-12);
        assert!(pcov_value(&Matrix::identity(4).scale(3.0)) > 0.0);
    }

    #[test]
    fn pcov_matches_oracle_on_random_input() {
        for seed in 0..10 {
            let x = random(9, 5, seed);
            assert!((pcov_value(&x) - pcov_oracle(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficients_are_harmonic_weights() {
        let mu = layer_coefficients(&[0.3, 0.3, 0.3]);
        for m in &mu {
            assert!((m - 1.0 / 3.0).abs() < 1e-15);
        }
        let mu = layer_coefficients(&[1.0, 2.0]);
        assert!((mu[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((mu[1] - 1.0 / 3.0).abs() < 1e-15);
        let mu = layer_coefficients(&[0.0, 1.0]);
        assert!(mu.iter().all(|m| m.is_finite()));
    }

    #[test]
    fn ddr_single_layer_and_mismatch() {
        let (u0, i0) = (random(6, 3, 1), random(4, 3, 2));
        let mut tape = Tape::new();
        let (u, i) = (tape.constant(u0.clone()), tape.constant(i0.clone()));
        let l = ddr_loss(&mut tape, &[u], &[i]).unwrap();
        let expected = pcov_oracle(&u0) + pcov_oracle(&i0);
        assert!((tape.scalar(l).unwrap() - expected).abs() < 1e-12);
        assert!(ddr_loss(&mut tape, &[u, u], &[i]).is_err());
    }

    #[test]
    fn ddr_matches_direct_formula_on_two_layers() {
        let users: Vec<Matrix> = (0..3).map(|s| random(6, 4, 10 + s)).collect();
        let items: Vec<Matrix> = (0..3).map(|s| random(5, 4, 20 + s)).collect();
        let mut tape = Tape::new();
        let uv: Vec<Var> = users.iter().map(|m| tape.constant(m.clone())).collect();
        let iv: Vec<Var> = items.iter().map(|m| tape.constant(m.clone())).collect();
        let l = ddr_loss(&mut tape, &uv, &iv).unwrap();
        let side = |ms: &[Matrix]| {
            let p: Vec<f64> = ms.iter().map(pcov_oracle).collect();
            let z: f64 = p.iter().map(|v| 1.0 / v).sum();
            p.iter().map(|v| (1.0 / v) / z * v).sum::<f64>()
        };
        assert!((tape.scalar(l).unwrap() - (side(&users) + side(&items))).abs() < 1e-12);
    }

    #[test]
    fn ddr_mm_is_additive_over_modalities() {
        let mut tape = Tape::new();
        let none = ddr_mm_loss(&mut tape, &[]).unwrap();
        assert_eq!(tape.scalar(none).unwrap(), 0.0);

        let mk = |tape: &mut Tape, s: u64| -> (Vec<Var>, Vec<Var>) {
            let u = (0..2).map(|k| tape.constant(random(5, 3, s + k))).collect();
            let i = (0..2).map(|k| tape.constant(random(4, 3, s + 10 + k))).collect();
            (u, i)
        };
        let a = mk(&mut tape, 100);
        let b = mk(&mut tape, 200);
        let la = ddr_loss(&mut tape, &a.0, &a.1).unwrap();
        let lb = ddr_loss(&mut tape, &b.0, &b.1).unwrap();
        let one = ddr_mm_loss(&mut tape, std::slice::from_ref(&a)).unwrap();
        assert_eq!(tape.scalar(one).unwrap(), tape.scalar(la).unwrap());
        let both = ddr_mm_loss(&mut tape, &[a, b]).unwrap();
        let sum = tape.scalar(la).unwrap() + tape.scalar(lb).unwrap();
        assert!((tape.scalar(both).unwrap() - sum).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weights_each_term() {
        let mut tape = Tape::new();
        let c = |tape: &mut Tape, v: f64| tape.constant(Matrix::scalar(v));
        let parts = LossComponents {
            bpr: c(&mut tape, 2.0),
            contrastive_users: c(&mut tape, 3.0),
            contrastive_items: c(&mut tape, 5.0),
            ddr: c(&mut tape, 7.0),
            ddr_mm: c(&mut tape, 11.0),
            coefficients: LayerCoefficients::default(),
        };
        let pure = total_loss(&mut tape, &parts, &LossWeights { lambda: 0.0, omega: 0.0, beta: 0.0, delta: 0.0 }).unwrap();
        assert_eq!(tape.scalar(pure).unwrap(), 2.0);
        let w = LossWeights { lambda: 0.0, omega: 0.1, beta: 1e-4, delta: 0.01 };
        let t = total_loss(&mut tape, &parts, &w).unwrap();
        let expected = 2.0 + 0.1 * 8.0 + 1e-4 * 7.0 + 0.01 * 11.0;
        assert!((tape.scalar(t).unwrap() - expected).abs() < 1e-12);
    }

    fn e_mix(tape: &mut Tape) -> Var {
        tape.constant(Matrix::from_rows(&[
            [1.0, 0.5, 0.0, 0.0],
            [0.0, 1.0, 0.5, 0.0],
            [0.0, 0.0, 1.0, 0.5],
            [0.5, 0.0, 0.0, 1.0],
        ]))
    }

    #[test]
    fn frozen_coefficients_reproduce_the_loss() {
        let x = random(9, 4, 21);
        let mut tape = Tape::new();
        let e = tape.leaf("e", x).unwrap();
        let mix = e_mix(&mut tape);
        let layers = vec![e, tape.matmul(e, mix).unwrap()];
        let (u, i) = split_blocks(&mut tape, &layers, 4).unwrap();
        let (free, mu) = ddr_loss_with(&mut tape, &u, &i, None).unwrap();
        let (frozen, same) = ddr_loss_with(&mut tape, &u, &i, Some(&mu)).unwrap();
        assert_eq!(mu, same);
        assert_eq!(tape.scalar(free).unwrap(), tape.scalar(frozen).unwrap());
        let wrong = DdrCoefficients { users: vec![1.0], items: vec![0.5, 0.5] };
        assert!(ddr_loss_with(&mut tape, &u, &i, Some(&wrong)).is_err());
    }

    #[test]
    fn losses_pass_gradient_checks() {
        let params = BTreeMap::from([("e".to_string(), random(7, 4, 5))]);
        let mut batch = TripleBatch::default();
        batch.push(0, 1, 3);
        batch.push(2, 0, 2);
        batch.push(1, 3, 0);
        let bpr = finite_diff_check(
            |tape, v| bpr_loss(tape, v["e"], &batch, 3, 0.1, &[v["e"]]),
            &params,
            1e-5,
        )
        .unwrap();
        assert!(bpr.max_relative_error < 1e-5, "{bpr:?}");

        // μ is a stop-gradient weight, so the oracle holds it at its value
        // at the base point.
        let layers = |tape: &mut Tape, e: Var| -> Result<(Vec<Var>, Vec<Var>)> {
            let exp = tape.exp(e)?;
            let mix = e_mix(tape);
            let layers = vec![e, tape.matmul(e, mix)?, tape.sigmoid(exp)?];
            split_blocks(tape, &layers, 3)
        };
        let mut tape = Tape::new();
        let e = tape.leaf("e", params["e"].clone()).unwrap();
        let (u, i) = layers(&mut tape, e).unwrap();
        let (_, mu) = ddr_loss_with(&mut tape, &u, &i, None).unwrap();
        assert!(mu.users.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-3), "{mu:?}");
        let ddr = finite_diff_check(
            |tape, v| {
                let (u, i) = layers(tape, v["e"])?;
                Ok(ddr_loss_with(tape, &u, &i, Some(&mu))?.0)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(ddr.max_relative_error < 1e-4, "{ddr:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pcov_is_shift_and_scale_invariant(seed in any::<u64>(), col in 0usize..4, shift in -50.0f64..50.0, factor in 0.01f64..100.0) {
            let x = random(8, 4, seed);
            let mut moved = x.clone();
            for r in 0..8 {
                moved.set(r, col, x.get(r, col) * factor + shift);
            }
            prop_assert!((pcov_value(&x) - pcov_value(&moved)).abs() < 1e-10);
        }

        #[test]
        fn pcov_is_bounded(seed in any::<u64>(), d in 2usize..7) {
            let x = random(10, d, seed);
            let v = pcov_value(&x);
            let bound = ((d * (d - 1)) as f64).sqrt() / std::f64::consts::SQRT_2;
            prop_assert!(v >= 0.0 && v <= bound + 1e-12);
        }

        #[test]
        fn coefficients_form_a_monotone_distribution(values in proptest::collection::vec(1e-6f64..10.0, 1..6)) {
            let mu = layer_coefficients(&values);
            prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for a in 0..values.len() {
                for b in 0..values.len() {
                    if values[a] < values[b] {
                        prop_assert!(mu[a] > mu[b]);
                    }
                }
            }
        }
    }
}
