//! Seeded k-fold partitions.

use crate::rng::{substream, DESIGN_STREAM};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::BenchError;

/// Fraction of a training fold held out for selecting `sigma_x^2`.
pub const VALIDATION_FRACTION: f64 = 0.25;

/// Repeated k-fold cross validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvPlan {
    pub folds: usize,
    pub partitions: usize,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            folds: 5,
            partitions: 20,
            seed: 0,
        }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.folds < 2 {
            return Err(BenchError::InvalidPlan(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.partitions == 0 {
            return Err(BenchError::InvalidPlan("partitions must be positive".into()));
        }
        Ok(())
    }
}

/// Train and test indices of one fold, each in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One list of folds per partition.
///
/// Partition `p` shuffles `0..m` with stream `p` of `plan.seed` and cuts the
/// permutation into `folds` consecutive blocks; the first `m % folds` blocks
/// get one extra sample.
pub fn kfold_split(m: usize, plan: &CvPlan) -> Result<Vec<Vec<Fold>>, BenchError> {
    plan.validate()?;
    if m < plan.folds {
        return Err(BenchError::TooFewSamples { samples: m, folds: plan.folds });
    }
    let k = plan.folds;
    let (base, extra) = (m / k, m % k);
    let partitions = (0..plan.partitions as u64)
        .map(|p| {
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut substream(plan.seed, p));
            let mut start = 0;
            (0..k)
                .map(|f| {
                    let len = base + usize::from(f < extra);
                    let mut test = perm[start..start + len].to_vec();
                    let mut train: Vec<usize> = perm[..start].iter().chain(&perm[start + len..]).copied().collect();
                    start += len;
                    test.sort_unstable();
                    train.sort_unstable();
                    Fold { train, test }
                })
                .collect()
        })
        .collect();
    Ok(partitions)
}

/// Splits `0..len` into `(fit, validation)` positions: validation is the last
/// quarter of a seeded shuffle, with at least one sample on each side.
pub fn inner_split(len: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut substream(seed, DESIGN_STREAM));
    let n_val = ((len as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, len.saturating_sub(1).max(1));
    let mut val = perm.split_off(len - n_val);
    perm.sort_unstable();
    val.sort_unstable();
    (perm, val)
}
