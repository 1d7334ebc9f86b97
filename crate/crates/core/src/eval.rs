//! Full-ranking top-K evaluation.
//!
//! Every item a user has not already seen (per the masks) is scored and
//! ranked; ties go to the lower item id. Relevance is binary, so NDCG uses
//! gain 1 for a hit and 0 otherwise.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::autodiff::{dot, Matrix};
use crate::error::{Error, Result};

pub const DEFAULT_KS: [usize; 4] = [5, 10, 20, 50];

/// Per-user sorted item lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UserItems {
    items: Vec<Vec<usize>>,
}

impl UserItems {
    pub fn from_pairs(n_users: usize, pairs: &[(usize, usize)]) -> Self {
        let mut items = vec![Vec::new(); n_users];
        for &(u, i) in pairs {
            items[u].push(i);
        }
        for list in &mut items {
            list.sort_unstable();
            list.dedup();
        }
        UserItems { items }
    }

    pub fn n_users(&self) -> usize {
        self.items.len()
    }

    pub fn get(&self, u: usize) -> &[usize] {
        self.items.get(u).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.get(u).binary_search(&i).is_ok()
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// Scores `r̂_ui = ⟨E*_u, E*_{p+i}⟩` for the given users against all items.
/// Masked items score `−∞`.
pub fn score_all(
    embeddings: &Matrix,
    n_users: usize,
    users: &[usize],
    masks: &[&UserItems],
) -> Result<Matrix> {
    if embeddings.rows() <= n_users {
        return Err(Error::InvalidArgument(format!(
            "embeddings have {} rows, need more than {n_users} users",
            embeddings.rows()
        )));
    }
    let n_items = embeddings.rows() - n_users;
    let mut scores = Matrix::zeros(users.len(), n_items);
    for (row, &u) in users.iter().enumerate() {
        let eu = embeddings.row(u);
        let out = scores.row_mut(row);
        for (i, s) in out.iter_mut().enumerate() {
            *s = dot(eu, embeddings.row(n_users + i));
        }
        for mask in masks {
            for &i in mask.get(u) {
                out[i] = f64::NEG_INFINITY;
            }
        }
    }
    Ok(scores)
}

/// The first `k` unmasked items of a score row, best first, ties broken by
/// ascending item id.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] != f64::NEG_INFINITY)
        .collect();
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

fn hits<'a>(ranked: &'a [usize], truth: &'a [usize], k: usize) -> impl Iterator<Item = usize> + 'a {
    let truth_sorted = truth.windows(2).all(|w| w[0] <= w[1]);
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(move |(_, i)| {
            if truth_sorted {
                truth.binary_search(i).is_ok()
            } else {
                truth.contains(i)
            }
        })
        .map(|(rank, _)| rank)
}

/// Mean over users with non-empty truth of `|top-K ∩ truth| / |truth|`.
pub fn recall_at_k(ranked: &[Vec<usize>], truth: &[Vec<usize>], k: usize) -> f64 {
    let mut total = CompensatedSum::default();
    let mut users = 0usize;
    for (r, t) in ranked.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        users += 1;
        total.add(hits(r, t, k).count() as f64 / t.len() as f64);
    }
    if users == 0 {
        0.0
    } else {
        total.value() / users as f64
    }
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).log2()
}

/// Mean over users with non-empty truth of `DCG@K / iDCG@K`.
pub fn ndcg_at_k(ranked: &[Vec<usize>], truth: &[Vec<usize>], k: usize) -> f64 {
    let mut total = CompensatedSum::default();
    let mut users = 0usize;
    for (r, t) in ranked.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        users += 1;
        let dcg: f64 = hits(r, t, k).map(discount).sum();
        let idcg: f64 = (0..k.min(t.len())).map(discount).sum();
        total.add(if idcg > 0.0 { dcg / idcg } else { 0.0 });
    }
    if users == 0 {
        0.0
    } else {
        total.value() / users as f64
    }
}

/// Recall and NDCG at each cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users_evaluated: usize,
    /// Hash of the configuration that produced the model.
    pub fingerprint: u64,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6}  {:>10}  {:>10}", "K", "Recall", "NDCG");
        for ((k, r), n) in self.ks.iter().zip(&self.recall).zip(&self.ndcg) {
            let _ = writeln!(out, "{k:>6}  {r:>10.6}  {n:>10.6}");
        }
        let _ = writeln!(out, "users evaluated: {}", self.users_evaluated);
        let _ = writeln!(out, "config fingerprint: {:016x}", self.fingerprint);
        out
    }

    /// One `metric.K=value` line per metric, then `users=` and
    /// `fingerprint=`. Values use shortest round-trip formatting.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, r) in self.ks.iter().zip(&self.recall) {
            let _ = writeln!(out, "recall.{k}={r:?}");
        }
        for (k, n) in self.ks.iter().zip(&self.ndcg) {
            let _ = writeln!(out, "ndcg.{k}={n:?}");
        }
        let _ = writeln!(out, "users={}", self.users_evaluated);
        let _ = writeln!(out, "fingerprint={:016x}", self.fingerprint);
        out
    }
}

/// Ranks all unmasked items for every user with held-out items and reports
/// metrics at each cutoff in `ks`.
pub fn evaluate(
    embeddings: &Matrix,
    n_users: usize,
    truth: &UserItems,
    masks: &[&UserItems],
    ks: &[usize],
    fingerprint: u64,
) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("cutoffs must be positive and non-empty".into()));
    }
    let users: Vec<usize> = (0..n_users).filter(|&u| !truth.get(u).is_empty()).collect();
    let max_k = *ks.iter().max().expect("non-empty");
    let scores = score_all(embeddings, n_users, &users, masks)?;
    let ranked: Vec<Vec<usize>> = (0..users.len()).map(|r| top_k(scores.row(r), max_k)).collect();
    let truths: Vec<Vec<usize>> = users.iter().map(|&u| truth.get(u).to_vec()).collect();
    Ok(MetricsReport {
        ks: ks.to_vec(),
        recall: ks.iter().map(|&k| recall_at_k(&ranked, &truths, k)).collect(),
        ndcg: ks.iter().map(|&k| ndcg_at_k(&ranked, &truths, k)).collect(),
        users_evaluated: users.len(),
        fingerprint,
    })
}
