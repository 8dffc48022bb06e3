use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded shuffle followed by a 2:1 train/validation cut, with
/// `|train| = round(2N/3)`.
pub fn split_train_valid<T: Clone>(docs: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if docs.len() < 3 {
        return Err(Error::Domain(format!(
            "need at least 3 documents to split, got {}",
            docs.len()
        )));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (2.0 * docs.len() as f64 / 3.0).round() as usize;
    let train = order[..n_train].iter().map(|&i| docs[i].clone()).collect();
    let valid = order[n_train..].iter().map(|&i| docs[i].clone()).collect();
    Ok((train, valid))
}
