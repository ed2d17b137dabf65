use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Manifest, QualityLabel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Manifest,
    pub validation: Manifest,
}

/// Stratified folds over record indices. Each class is shuffled with the
/// seed and dealt round-robin; the deal position carries over between classes
/// so fold totals stay balanced too. Index lists come back sorted.
pub fn kfold_indices(labels: &[QualityLabel], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    for class in QualityLabel::ALL {
        let count = labels.iter().filter(|&&l| l == class).count();
        if count < k {
            return Err(Error::TooFewSamples {
                class: class.to_string(),
                count,
                k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in QualityLabel::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let mut val = folds[f].clone();
            val.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            (train, val)
        })
        .collect())
}

pub fn kfold_split(manifest: &Manifest, k: usize, seed: u64) -> Result<Vec<Fold>> {
    Ok(kfold_indices(&manifest.labels(), k, seed)?
        .into_iter()
        .map(|(train, val)| Fold {
            train: manifest.subset(&train),
            validation: manifest.subset(&val),
        })
        .collect())
}
