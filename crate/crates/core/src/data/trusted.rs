//! Trusted-set sampling: a few labelled rows per data class and per error
//! class, drawn from the training split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CorruptedDataset, Split};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrustedSet {
    pub indices: Vec<usize>,
    /// 1 inlier, 0 outlier.
    pub labels: Vec<u8>,
}

impl TrustedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_inliers(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn num_outliers(&self) -> usize {
        self.len() - self.num_inliers()
    }
}

/// `per_class` train-split inliers of every data class (label 1) and
/// `per_class` train-split outliers of every error class (label 0).
///
/// Each class is shuffled once with its own stream and the prefix taken, so
/// sets for growing `per_class` and a fixed seed are nested.
pub fn sample_trusted_set(data: &CorruptedDataset, per_class: usize, seed: u64) -> Result<TrustedSet> {
    let train = data.indices(Split::Train);
    let mut set = TrustedSet::default();
    let mut stream = 0u64;
    let mut take = |pool: Vec<usize>, name: String, label: u8, set: &mut TrustedSet| -> Result<()> {
        let mut pool = pool;
        pool.shuffle(&mut rng::stream(seed, stream));
        stream += 1;
        if pool.len() < per_class {
            return Err(Error::InsufficientClassMembers {
                class: name,
                available: pool.len(),
                requested: per_class,
            });
        }
        for &i in &pool[..per_class] {
            set.indices.push(i);
            set.labels.push(label);
        }
        Ok(())
    };
    for class in 0..data.clean.num_classes {
        let pool = train
            .iter()
            .copied()
            .filter(|&i| data.y_true[i] == 1 && data.clean.class_id[i] == class)
            .collect();
        take(pool, format!("data class {class}"), 1, &mut set)?;
    }
    for (k, ec) in data.error_classes.iter().enumerate() {
        let pool = train
            .iter()
            .copied()
            .filter(|&i| data.error_class[i] == Some(k))
            .collect();
        take(pool, format!("error class {k} ({})", ec.describe()), 0, &mut set)?;
    }
    Ok(set)
}
