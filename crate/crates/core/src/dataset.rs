//! A split dataset with dense ids, and the `prepare` step producing it.

use std::collections::BTreeSet;

use log::info;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::eval::UserItems;
use crate::graph::{split_interactions, InteractionGraph};
use crate::model::ModalityFeatureBank;

/// Interactions split three ways over dense ids `0..n_users`, `0..n_items`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_users: usize,
    pub n_items: usize,
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub features: ModalityFeatureBank,
}

impl Dataset {
    pub fn new(
        n_users: usize,
        n_items: usize,
        train: Vec<(usize, usize)>,
        validation: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
        features: ModalityFeatureBank,
    ) -> Result<Self> {
        for (name, part) in [("train", &train), ("validation", &validation), ("test", &test)] {
            if let Some(&(u, i)) = part.iter().find(|&&(u, i)| u >= n_users || i >= n_items) {
                return Err(Error::InvalidArgument(format!(
                    "{name} pair ({u}, {i}) is outside {n_users} users x {n_items} items"
                )));
            }
        }
        for m in features.modalities() {
            let rows = features.get(m).map_or(0, Matrix::rows);
            if rows != n_items {
                return Err(Error::InvalidArgument(format!(
                    "{m} features have {rows} rows for {n_items} items"
                )));
            }
        }
        Ok(Dataset {
            n_users,
            n_items,
            train,
            validation,
            test,
            features,
        })
    }

    pub fn train_graph(&self) -> Result<InteractionGraph> {
        InteractionGraph::build(&self.train, self.n_users, self.n_items)
    }

    /// Every observed interaction, used to exclude negatives.
    pub fn known(&self) -> UserItems {
        let all: Vec<(usize, usize)> = self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .copied()
            .collect();
        UserItems::from_pairs(self.n_users, &all)
    }

    pub fn items(&self, part: Part) -> UserItems {
        let pairs = match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        };
        UserItems::from_pairs(self.n_users, pairs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// Dense id → raw id for users and items.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

/// Splits raw interactions, drops users with fewer than three interactions
/// and items left without a training interaction, and remaps the survivors
/// to dense ids in ascending raw-id order. Feature rows are indexed by raw
/// item id.
pub fn prepare(
    pairs: &[(usize, usize)],
    raw_features: &ModalityFeatureBank,
    seed: u64,
) -> Result<(Dataset, IdMap)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no interactions".into()));
    }
    let split = split_interactions(pairs, seed);
    if split.train.is_empty() {
        return Err(Error::InvalidArgument(
            "no user has the three interactions needed for a split".into(),
        ));
    }
    let users: BTreeSet<usize> = split.train.iter().map(|&(u, _)| u).collect();
    let items: BTreeSet<usize> = split.train.iter().map(|&(_, i)| i).collect();
    let user_ids: Vec<usize> = users.into_iter().collect();
    let item_ids: Vec<usize> = items.into_iter().collect();
    let dense = |ids: &[usize], raw: usize| ids.binary_search(&raw).ok();

    let mut dropped = 0usize;
    let mut remap = |part: &[(usize, usize)]| -> Vec<(usize, usize)> {
        part.iter()
            .filter_map(|&(u, i)| match (dense(&user_ids, u), dense(&item_ids, i)) {
                (Some(u), Some(i)) => Some((u, i)),
                _ => {
                    dropped += 1;
                    None
                }
            })
            .collect()
    };
    let train = remap(&split.train);
    let validation = remap(&split.validation);
    let test = remap(&split.test);
    if dropped > 0 {
        info!("prepare: dropped {dropped} held-out pairs whose item has no training interaction");
    }

    let mut features = ModalityFeatureBank::new();
    for m in raw_features.modalities() {
        let raw = raw_features.get(m).expect("listed modality");
        if let Some(&max) = item_ids.last() {
            if max >= raw.rows() {
                return Err(Error::InvalidArgument(format!(
                    "{m} features have {} rows but item id {max} occurs",
                    raw.rows()
                )));
            }
        }
        let rows: Vec<&[f64]> = item_ids.iter().map(|&i| raw.row(i)).collect();
        let data = rows.concat();
        features.insert(m, Matrix::from_vec(item_ids.len(), raw.cols(), data)?)?;
    }
    let dataset = Dataset::new(user_ids.len(), item_ids.len(), train, validation, test, features)?;
    Ok((
        dataset,
        IdMap {
            users: user_ids,
            items: item_ids,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::Modality;

    #[test]
    fn prepare_remaps_and_drops() {
        // User 5 has three items, user 9 has two (excluded), item 30 is seen
        // only by user 9.
        let pairs = [(5, 10), (5, 11), (5, 12), (9, 10), (9, 30)];
        let mut bank = ModalityFeatureBank::new();
        bank.insert(Modality::Visual, Matrix::from_fn(31, 2, |r, c| (r * 10 + c) as f64))
            .unwrap();
        let (ds, map) = prepare(&pairs, &bank, 1).unwrap();
        assert_eq!(map.users, vec![5]);
        assert_eq!(ds.n_users, 1);
        assert_eq!(ds.train.len(), 1);
        assert_eq!(ds.validation.len() + ds.test.len(), 0);
        let raw_item = map.items[ds.train[0].1];
        assert_eq!(ds.features.get(Modality::Visual).unwrap().row(0), &[raw_item as f64 * 10.0, raw_item as f64 * 10.0 + 1.0]);
        ds.train_graph().unwrap();
    }

    #[test]
    fn prepare_rejects_short_feature_files() {
        let pairs = [(0, 0), (0, 1), (0, 4)];
        let mut bank = ModalityFeatureBank::new();
        bank.insert(Modality::Textual, Matrix::zeros(2, 3)).unwrap();
        // Only items in train need features; train holds one of the three.
        let res = prepare(&pairs, &bank, 0);
        let (_, map) = prepare(&pairs, &ModalityFeatureBank::new(), 0).unwrap();
        assert_eq!(res.is_err(), map.items.iter().any(|&i| i >= 2));
    }

    #[test]
    fn dataset_checks_ranges() {
        let bank = ModalityFeatureBank::new();
        assert!(Dataset::new(1, 1, vec![(0, 1)], vec![], vec![], bank.clone()).is_err());
        assert!(Dataset::new(1, 2, vec![(0, 1)], vec![(0, 0)], vec![], bank).is_ok());
    }
}
