//! Pre-generated pool of standard normal values.

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_SEGMENT_LEN: usize = 64;

/// A fixed pool of `N(0, 1)` values read in contiguous segments starting at
/// random offsets.
///
/// Entry `i` of the pool (before shuffling) is `Phi^-1((i + U_i) / T)` with
/// `U_i` uniform on `[0, 1)`, i.e. one draw from each of `T` equal-mass
/// strata of the normal distribution. An i.i.d. pool of `10^4` values sits
/// about `0.9 / sqrt(T)` from `N(0, 1)` in Kolmogorov distance, which is
/// larger than the sampling error of a million reads; the stratified pool is
/// within `1 / T`.
#[derive(Debug, Clone)]
pub struct GaussianTable {
    values: Vec<f64>,
}

impl GaussianTable {
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("table size must be >= 1".into()));
        }
        let normal = Normal::standard();
        let mut rng = seed::rng(seed, seed::TABLE);
        let t = size as f64;
        let mut values: Vec<f64> = (0..size)
            .map(|i| {
                // Keep the probability strictly inside (0, 1).
                let u: f64 = rng.random::<f64>().clamp(f64::EPSILON, 1.0 - f64::EPSILON);
                normal.inverse_cdf((i as f64 + u) / t)
            })
            .collect();
        values.shuffle(&mut rng);
        Ok(GaussianTable { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
