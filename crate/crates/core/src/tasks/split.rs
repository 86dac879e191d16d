use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Stratified k-fold assignment: each stratum is shuffled under `seed` and
/// dealt round-robin, continuing the deal across strata so overall fold
/// sizes differ by at most one.
pub fn kfold_split(strata: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = strata.len();
    if k < 2 || k > n {
        return Err(Error::config(format!(
            "cannot split {n} records into {k} folds"
        )));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; n];
    let mut dealt = 0;
    for (stratum, mut members) in groups {
        if members.len() < k {
            log::warn!(
                "stratum {stratum} has {} records for {k} folds; some folds will lack it",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = dealt % k;
            dealt += 1;
        }
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_into_ten() {
        let folds = kfold_split(&vec![0; 100], 10, 1).unwrap();
        for f in 0..10 {
            assert_eq!(folds.iter().filter(|&&x| x == f).count(), 10);
        }
    }

    #[test]
    fn stratified_sixty_forty() {
        let strata: Vec<usize> = (0..100).map(|i| usize::from(i >= 60)).collect();
        let folds = kfold_split(&strata, 5, 9).unwrap();
        for f in 0..5 {
            let c0 = (0..100)
                .filter(|&i| folds[i] == f && strata[i] == 0)
                .count();
            let c1 = (0..100)
                .filter(|&i| folds[i] == f && strata[i] == 1)
                .count();
            assert!(
                c0.abs_diff(12) <= 1 && c1.abs_diff(8) <= 1,
                "fold {f}: {c0}/{c1}"
            );
        }
        assert_eq!(folds, kfold_split(&strata, 5, 9).unwrap());
        assert_ne!(folds, kfold_split(&strata, 5, 10).unwrap());
    }

    #[test]
    fn bad_k() {
        assert!(kfold_split(&[0, 1], 3, 0).is_err());
        assert!(kfold_split(&[0, 1], 1, 0).is_err());
    }
}
