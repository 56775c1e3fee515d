//! Sources of the Gaussian noise injected by the sampler.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::table::GaussianTable;

/// A parameter row of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Row {
    User(u32),
    Item(u32),
}

/// Adds the Gaussian noise owed to a row.
///
/// `add_increment` covers the steps `(from, to]` whose variances sum to
/// `variance`; a real source adds one draw of `N(0, variance * I)` to `dst`.
/// The step range lets test sources reproduce a dense per-step schedule.
pub trait NoiseSource: Send {
    fn add_increment(&mut self, row: Row, from: u64, to: u64, variance: f64, dst: &mut [f64]);
}

/// Draws from a seeded generator.
#[derive(Debug, Clone)]
pub struct RngNoise {
    rng: ChaCha8Rng,
}

impl RngNoise {
    pub fn new(seed: u64) -> Self {
        RngNoise { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl NoiseSource for RngNoise {
    fn add_increment(&mut self, _row: Row, _from: u64, _to: u64, variance: f64, dst: &mut [f64]) {
        let sd = variance.sqrt();
        for x in dst {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x += sd * z;
        }
    }
}

/// Reads a shared [`GaussianTable`] in random contiguous segments.
#[derive(Debug, Clone)]
pub struct TableNoise {
    table: Arc<GaussianTable>,
    segment_len: usize,
    rng: ChaCha8Rng,
    pos: usize,
    left: usize,
}

impl TableNoise {
    pub fn new(table: Arc<GaussianTable>, segment_len: usize, seed: u64) -> Self {
        TableNoise {
            table,
            segment_len: segment_len.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            pos: 0,
            left: 0,
        }
    }
}

impl NoiseSource for TableNoise {
    fn add_increment(&mut self, _row: Row, _from: u64, _to: u64, variance: f64, dst: &mut [f64]) {
        let sd = variance.sqrt();
        let values = self.table.values();
        for x in dst {
            if self.left == 0 {
                self.pos = rand::Rng::random_range(&mut self.rng, 0..values.len());
                self.left = self.segment_len;
            }
            *x += sd * values[self.pos];
            self.pos += 1;
            if self.pos == values.len() {
                self.pos = 0;
            }
            self.left -= 1;
        }
    }
}

/// Boxed sources are sources too, so callers can pick one at run time.
impl NoiseSource for Box<dyn NoiseSource> {
    fn add_increment(&mut self, row: Row, from: u64, to: u64, variance: f64, dst: &mut [f64]) {
        (**self).add_increment(row, from, to, variance, dst)
    }
}
