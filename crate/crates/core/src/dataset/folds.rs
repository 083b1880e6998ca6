use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnnotatedDataset;
use crate::error::{Error, Result};
use crate::ImageId;

/// Image-level fold labels. Fold `f`'s test set is every image labelled `f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub seed: u64,
    pub fold_of: BTreeMap<ImageId, usize>,
}

impl FoldAssignment {
    pub fn test_images(&self, fold: usize) -> BTreeSet<ImageId> {
        self.fold_of
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn train_images(&self, fold: usize) -> BTreeSet<ImageId> {
        self.fold_of
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(&id, _)| id)
            .collect()
    }
}

/// Shuffles image ids with a seeded RNG and deals them round-robin into
/// `n_folds` groups, so group sizes differ by at most one.
pub fn split_folds(ds: AnnotatedDataset, n_folds: usize, seed: u64) -> Result<AnnotatedDataset> {
    let folds = assign_folds(ds.image_ids(), n_folds, seed)?;
    ds.with_folds(folds)
}

pub(crate) fn assign_folds(ids: impl Iterator<Item = ImageId>, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::InvalidConfig(format!("n_folds must be at least 2, got {n_folds}")));
    }
    let mut ids: Vec<ImageId> = ids.collect();
    ids.sort_unstable();
    if ids.len() < n_folds {
        return Err(Error::TooFewImages {
            images: ids.len(),
            folds: n_folds,
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of = ids.into_iter().enumerate().map(|(pos, id)| (id, pos % n_folds)).collect();
    Ok(FoldAssignment { n_folds, seed, fold_of })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_images_five_folds() {
        let a = assign_folds(0..10, 5, 3).unwrap();
        for f in 0..5 {
            assert_eq!(a.test_images(f).len(), 2);
            assert_eq!(a.train_images(f).len(), 8);
        }
        assert_eq!(a, assign_folds(0..10, 5, 3).unwrap());
        assert_ne!(a, assign_folds(0..10, 5, 4).unwrap());
    }

    #[test]
    fn errors() {
        assert!(matches!(assign_folds(0..3, 5, 0), Err(Error::TooFewImages { images: 3, folds: 5 })));
        assert!(matches!(assign_folds(0..3, 1, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn stored_on_dataset() {
        let ds = split_folds(crate::dataset::tests::tiny(), 2, 0).unwrap();
        let a = ds.split_assignments().unwrap();
        assert_eq!(a.fold_of.len(), 2);
    }

    proptest! {
        #[test]
        fn partition_is_exhaustive_disjoint_and_balanced(n in 2usize..200, folds in 2usize..10, seed: u64) {
            prop_assume!(n >= folds);
            let a = assign_folds(0..n as u64, folds, seed).unwrap();
            let sets: Vec<_> = (0..folds).map(|f| a.test_images(f)).collect();
            let total: usize = sets.iter().map(BTreeSet::len).sum();
            prop_assert_eq!(total, n);
            let union: BTreeSet<_> = sets.iter().flatten().copied().collect();
            prop_assert_eq!(union.len(), n);
            let max = sets.iter().map(BTreeSet::len).max().unwrap();
            let min = sets.iter().map(BTreeSet::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
