use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataCube, PatchSeries};
use crate::error::{Error, Result};

/// Anything tied to a geographic location.
pub trait Located {
    fn location_key(&self) -> String;
}

impl Located for DataCube {
    fn location_key(&self) -> String {
        self.manifest.location_key()
    }
}

impl Located for PatchSeries {
    fn location_key(&self) -> String {
        self.parent.location_key()
    }
}

impl Located for String {
    fn location_key(&self) -> String {
        self.clone()
    }
}

/// Splits items into (train, validation) by location: all items sharing a
/// location land in the same partition. `round(n * ratio)` locations, clamped
/// to `[1, n - 1]`, go to training. Deterministic for a given seed.
pub fn temporal_split<T: Located + Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} not in (0, 1)")));
    }
    let locations: BTreeSet<String> = items.iter().map(Located::location_key).collect();
    if locations.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 locations to split, found {}",
            locations.len()
        )));
    }
    let mut keys: Vec<String> = locations.into_iter().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = keys.len();
    let n_train = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let train_keys: BTreeSet<&String> = keys[..n_train].iter().collect();
    let (train, val) = items
        .iter()
        .cloned()
        .partition(|item| train_keys.contains(&item.location_key()));
    Ok((train, val))
}
