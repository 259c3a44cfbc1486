//! Deterministic train/val/test splitting. The test block is the trailing
//! fraction of trajectory ids (datasets reserve their final simulations for
//! testing); the validation set is a seeded random draw from the remainder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FieldsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn is_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .all(|&i| seen.insert(i))
    }
}

/// Split `n` trajectory ids with `fractions = (train, val, test)`.
///
/// Test ids are the last `round(test * n)` in order; validation ids are a
/// seeded random sample of the head; training gets the rest (sorted).
pub fn split_trajectories(n: usize, seed: u64, fractions: (f64, f64, f64)) -> Result<DatasetSplit> {
    let (ftr, fva, fte) = fractions;
    let fr = [ftr, fva, fte];
    if n == 0 {
        return Err(FieldsError::Empty("cannot split zero trajectories".into()));
    }
    if fr.iter().any(|&f| !(0.0..=1.0).contains(&f)) || ftr + fva + fte > 1.0 + 1e-12 {
        return Err(FieldsError::BadFractions(fr));
    }
    let n_test = (fte * n as f64).round() as usize;
    let n_val = (fva * n as f64).round() as usize;
    let n_train = ((ftr * n as f64).round() as usize).min(n - n_test - n_val);

    let test: Vec<usize> = (n - n_test..n).collect();
    let mut head: Vec<usize> = (0..n - n_test).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    head.shuffle(&mut rng);
    let val: Vec<usize> = {
        let mut v: Vec<usize> = head[..n_val].to_vec();
        v.sort_unstable();
        v
    };
    let train: Vec<usize> = {
        let mut t: Vec<usize> = head[n_val..n_val + n_train].to_vec();
        t.sort_unstable();
        t
    };
    Ok(DatasetSplit { train, val, test })
}
