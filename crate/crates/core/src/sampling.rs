//! Seeded index-level splitting, batching and k-shot sampling.
//!
//! These work on record indices and labels only, so the same routines serve
//! in-memory tensors and on-disk manifests.

use alloc::vec::Vec;

use crate::error::{config_err, data_err, Result};
use crate::rng::Rng;

/// Shuffles `0..n` with `seed` and gives the first `floor(ratio * n)` indices
/// to train, the rest to test. Both halves are returned in shuffled order.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(config_err!("split ratio must be in (0, 1), got {ratio}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let cut = train_size(n, ratio);
    let test = order.split_off(cut);
    Ok((order, test))
}

/// `floor(ratio * n)`, computed so that exact products like `0.8 * 3000`
/// are not lost to rounding.
pub fn train_size(n: usize, ratio: f64) -> usize {
    let raw = ratio * n as f64;
    let nearest = num_traits::Float::round(raw);
    if (raw - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        raw as usize
    }
}

/// Index batches for one epoch. With `shuffle`, the order is a permutation
/// seeded by `seed + epoch`; without it, indices stay in order. Every index
/// appears exactly once; the last batch may be short.
pub fn batch_indices(
    n: usize,
    batch: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(config_err!("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        Rng::new(seed.wrapping_add(epoch)).shuffle(&mut order);
    }
    Ok(order.chunks(batch).map(<[usize]>::to_vec).collect())
}

/// Exactly `k` indices per class from `labels`, drawn without replacement
/// with `seed`. The result is grouped by class and sorted within each class.
/// `k = 0` gives an empty subset.
pub fn few_shot_indices(
    labels: &[usize],
    num_classes: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut by_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        let bucket = by_class
            .get_mut(l)
            .ok_or_else(|| data_err!("label {l} out of range for {num_classes} classes"))?;
        bucket.push(i);
    }
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(k * num_classes);
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < k {
            return Err(data_err!(
                "class {class} has {} training records, fewer than k = {k}",
                members.len()
            ));
        }
        rng.shuffle(&mut members);
        members.truncate(k);
        members.sort_unstable();
        out.extend(members);
    }
    Ok(out)
}
