use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `k` seeded (train, test) partitions of `indices`; test folds are disjoint,
/// cover every index once and differ in size by at most one.
pub fn kfold_splits(indices: &[usize], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > indices.len() {
        return Err(Error::Config(format!(
            "cannot make {k} folds from {} examples",
            indices.len()
        )));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (shuffled.len() / k, shuffled.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = shuffled[start..start + size].to_vec();
        let mut train: Vec<usize> = shuffled[..start]
            .iter()
            .chain(&shuffled[start + size..])
            .copied()
            .collect();
        test.sort_unstable();
        train.sort_unstable();
        folds.push((train, test));
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_examples_ten_folds() {
        let idx: Vec<usize> = (0..100).collect();
        let folds = kfold_splits(&idx, 10, 3).unwrap();
        assert!(folds.iter().all(|(tr, te)| te.len() == 10 && tr.len() == 90));
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, te)| te.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, idx);
        assert_eq!(kfold_splits(&idx, 10, 3).unwrap(), folds);
    }

    #[test]
    fn uneven_sizes_differ_by_one() {
        let idx: Vec<usize> = (0..23).collect();
        let sizes: Vec<usize> = kfold_splits(&idx, 5, 0).unwrap().iter().map(|f| f.1.len()).collect();
        assert_eq!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap(), 1);
    }

    #[test]
    fn too_many_folds() {
        assert!(matches!(kfold_splits(&[1, 2, 3], 4, 0), Err(Error::Config(_))));
    }
}
