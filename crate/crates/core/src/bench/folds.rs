//! Cross-validation folds over the non-zero entries of a view.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RealMatrix};
use crate::seed::{rng_for, stream};

pub type Coord = (usize, usize);

/// Disjoint test sets whose union is every coordinate that was split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSet {
    pub shape: (usize, usize),
    pub folds: Vec<Vec<Coord>>,
}

impl FoldSet {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    pub fn test(&self, fold: usize) -> &[Coord] {
        &self.folds[fold]
    }

    /// Every split coordinate outside `fold`.
    pub fn train(&self, fold: usize) -> Vec<Coord> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }

    /// Boolean train mask: true where the entry stays visible for `fold`.
    pub fn train_mask(&self, fold: usize) -> Vec<Vec<bool>> {
        let mut mask = vec![vec![true; self.shape.1]; self.shape.0];
        for (i, j) in &self.folds[fold] {
            mask[*i][*j] = false;
        }
        mask
    }

    /// Copy of `view` with the fold's test entries set to zero, plus the
    /// removed values in test order.
    pub fn mask(&self, view: &Matrix, fold: usize) -> (Matrix, Vec<f64>) {
        let mut out = view.clone();
        let removed = self.folds[fold]
            .iter()
            .map(|c| std::mem::replace(&mut out[[c.0, c.1]], 0.0))
            .collect();
        (out, removed)
    }

    /// Undo [`mask`](Self::mask).
    pub fn restore(&self, masked: &mut Matrix, fold: usize, removed: &[f64]) {
        for (c, v) in self.folds[fold].iter().zip(removed) {
            masked[[c.0, c.1]] = *v;
        }
    }
}

/// Shuffle `coords` deterministically and deal them into `k` near-equal folds.
pub fn make_folds_over(shape: (usize, usize), coords: &[Coord], k: usize, seed: u64) -> Result<FoldSet> {
    if k < 2 {
        return Err(Error::Fold(format!("need at least 2 folds, got {k}")));
    }
    if coords.len() < k {
        return Err(Error::Fold(format!("{} entries cannot fill {k} folds", coords.len())));
    }
    let mut order = coords.to_vec();
    order.sort_unstable();
    order.shuffle(&mut rng_for(seed, stream::FOLDS));
    let base = order.len() / k;
    let extra = order.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[at..at + size].to_vec());
        at += size;
    }
    Ok(FoldSet { shape, folds })
}

/// Folds over the non-zero entries of `view`.
pub fn make_cv_folds(view: &RealMatrix, k: usize, seed: u64) -> Result<FoldSet> {
    make_folds_over(view.shape(), &nonzero_coords(view), k, seed)
}

pub fn nonzero_coords(view: &RealMatrix) -> Vec<Coord> {
    match view {
        RealMatrix::Dense(m) => m
            .indexed_iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(ij, _)| ij)
            .collect(),
        RealMatrix::Sparse(s) => {
            let mut c: Vec<Coord> = s.entries().iter().filter(|e| e.2 != 0.0).map(|e| (e.0, e.1)).collect();
            c.sort_unstable();
            c
        }
    }
}

/// A deterministic random subset of `size` coordinates, in sorted order.
pub fn fixed_test_subset(coords: &[Coord], size: usize, seed: u64) -> Result<Vec<Coord>> {
    if size > coords.len() {
        return Err(Error::Fold(format!("asked for {size} test entries out of {}", coords.len())));
    }
    let mut order = coords.to_vec();
    order.sort_unstable();
    order.shuffle(&mut rng_for(seed, stream::TEST_SUBSET));
    order.truncate(size);
    order.sort_unstable();
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn ten_nonzeros() -> RealMatrix {
        RealMatrix::Dense(Matrix::from_shape_fn((4, 5), |(i, j)| if (i + j) % 2 == 0 { 1.0 + i as f64 } else { 0.0 }))
    }

    #[test]
    fn ten_entries_five_folds_of_two() {
        let f = make_cv_folds(&ten_nonzeros(), 5, 0).unwrap();
        assert!(f.folds.iter().all(|x| x.len() == 2));
        assert_eq!(f, make_cv_folds(&ten_nonzeros(), 5, 0).unwrap());
        assert_eq!(f.train(0).len(), 8);
    }

    #[test]
    fn too_few_entries_or_folds() {
        assert!(matches!(make_cv_folds(&ten_nonzeros(), 11, 0), Err(Error::Fold(_))));
        assert!(make_cv_folds(&ten_nonzeros(), 1, 0).is_err());
    }

    #[test]
    fn sparse_and_dense_agree() {
        let d = ten_nonzeros();
        let s = RealMatrix::Sparse(d.to_sparse());
        assert_eq!(make_cv_folds(&d, 3, 4).unwrap(), make_cv_folds(&s, 3, 4).unwrap());
    }

    #[test]
    fn fixed_subset_is_deterministic_and_sized() {
        let coords = nonzero_coords(&ten_nonzeros());
        let a = fixed_test_subset(&coords, 4, 1).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, fixed_test_subset(&coords, 4, 1).unwrap());
        assert!(a.iter().all(|c| coords.contains(c)));
        assert!(fixed_test_subset(&coords, 11, 1).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_nonzeros(rows in 2usize..12, cols in 2usize..12, k in 2usize..6, seed in 0u64..100) {
            let m = Matrix::from_shape_fn((rows, cols), |(i, j)| ((i * 7 + j * 3 + seed as usize) % 4) as f64);
            let view = RealMatrix::Dense(m.clone());
            let nz = nonzero_coords(&view);
            prop_assume!(nz.len() >= k);
            let f = make_cv_folds(&view, k, seed).unwrap();
            let mut all = BTreeSet::new();
            for fold in &f.folds {
                for c in fold {
                    prop_assert!(all.insert(*c));
                }
            }
            prop_assert_eq!(all.into_iter().collect::<Vec<_>>(), nz);
            let sizes: Vec<usize> = f.folds.iter().map(|x| x.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for fold in 0..k {
                let (mut masked, removed) = f.mask(&m, fold);
                prop_assert!(f.test(fold).iter().all(|c| masked[[c.0, c.1]] == 0.0));
                let mask = f.train_mask(fold);
                prop_assert!(f.test(fold).iter().all(|c| !mask[c.0][c.1]));
                f.restore(&mut masked, fold, &removed);
                prop_assert_eq!(&masked, &m);
            }
        }
    }
}
