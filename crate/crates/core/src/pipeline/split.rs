//! Deterministic class-stratified partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::class_counts;
use crate::error::{Error, Result};

/// Train/validation/test index lists, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratios: (u32, u32, u32),
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` disjoint folds covering every index, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Indices of every fold except `fold`, sorted ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// Per-class index lists, each shuffled by one generator in class order.
fn shuffled_classes(labels: &[usize], seed: u64, min_per_class: usize) -> Result<Vec<Vec<usize>>> {
    let counts = class_counts(labels);
    let present = counts.iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(Error::invalid("stratification needs at least two classes"));
    }
    if let Some((class, &n)) = counts
        .iter()
        .enumerate()
        .find(|&(_, &n)| n > 0 && n < min_per_class)
    {
        return Err(Error::invalid(format!(
            "class {class} has {n} samples, at least {min_per_class} are needed"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); counts.len()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    Ok(by_class)
}

/// Shuffles each class, gives `floor(ratio * n_class / total)` to train and to
/// validation, and the remainder to test.
pub fn stratified_split(labels: &[usize], ratios: (u32, u32, u32), seed: u64) -> Result<SplitSpec> {
    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    if total == 0 || ratios.0 == 0 {
        return Err(Error::invalid(format!("invalid split ratios {ratios:?}")));
    }
    let mut spec = SplitSpec {
        seed,
        ratios,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for members in shuffled_classes(labels, seed, 3)? {
        let n = members.len();
        let n_train = ratios.0 as usize * n / total;
        let n_val = ratios.1 as usize * n / total;
        spec.train.extend_from_slice(&members[..n_train]);
        spec.val
            .extend_from_slice(&members[n_train..n_train + n_val]);
        spec.test.extend_from_slice(&members[n_train + n_val..]);
    }
    spec.train.sort_unstable();
    spec.val.sort_unstable();
    spec.test.sort_unstable();
    Ok(spec)
}

/// Deals each shuffled class round-robin over the folds. Each class starts
/// where the previous one stopped, so fold sizes differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    let classes = shuffled_classes(labels, seed, 1)?;
    if labels.len() < k {
        return Err(Error::invalid(format!(
            "{} samples cannot fill {k} folds",
            labels.len()
        )));
    }
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for members in classes {
        for (j, &i) in members.iter().enumerate() {
            folds[(offset + j) % k].push(i);
        }
        offset = (offset + members.len()) % k;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { seed, folds })
}

/// Splits `indices` into `(kept, held_out)`, holding out `floor(percent * n_class / 100)`
/// of every class (at least one when the class has two or more members).
pub fn stratified_holdout(
    indices: &[usize],
    labels: &[usize],
    percent: u32,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let local: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for members in shuffled_classes(&local, seed, 1)? {
        let n = members.len();
        let h = (percent as usize * n / 100)
            .max(usize::from(n >= 2))
            .min(n.saturating_sub(1));
        held.extend(members[..h].iter().map(|&j| indices[j]));
        kept.extend(members[h..].iter().map(|&j| indices[j]));
    }
    kept.sort_unstable();
    held.sort_unstable();
    Ok((kept, held))
}
