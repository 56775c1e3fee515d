//! Bookkeeping for lazily applied noise.
//!
//! Every step owes `N(0, zeta * eta_t)` to every parameter row, but a step
//! only touches two rows. The ledger records when each row last received its
//! noise; on the next touch the owed steps are paid with a single draw whose
//! variance is the sum of the skipped per-step variances.

use std::sync::atomic::{AtomicU64, Ordering};

use super::noise::{NoiseSource, Row};

/// Steps `(start, next segment start]` all carry `per_step` variance.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    start: u64,
    base: f64,
    per_step: f64,
}

#[derive(Debug)]
pub struct NoiseLedger {
    user_last: Vec<AtomicU64>,
    item_last: Vec<AtomicU64>,
    clock: AtomicU64,
    segments: Vec<Segment>,
}

impl NoiseLedger {
    pub fn new(n_users: usize, n_items: usize) -> Self {
        NoiseLedger {
            user_last: (0..n_users).map(|_| AtomicU64::new(0)).collect(),
            item_last: (0..n_items).map(|_| AtomicU64::new(0)).collect(),
            clock: AtomicU64::new(0),
            segments: Vec::new(),
        }
    }

    /// Starts a run of steps with per-step variance `per_step` (`zeta * eta_t`).
    pub fn begin_epoch(&mut self, per_step: f64) {
        assert!(per_step >= 0.0 && per_step.is_finite(), "variance must be >= 0");
        let start = self.clock();
        let base = self.prefix(start);
        // A segment with no steps yet is simply replaced.
        if self.segments.last().is_some_and(|s| s.start == start) {
            self.segments.pop();
        }
        self.segments.push(Segment { start, base, per_step });
    }

    pub fn clock(&self) -> u64 {
        self.clock.load(Ordering::Relaxed)
    }

    /// Advances the clock and returns the new step number (the first is 1).
    pub fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed) + 1
    }

    fn segment(&self, t: u64) -> Option<&Segment> {
        // Last segment starting strictly before t owns step t.
        let idx = self.segments.partition_point(|s| s.start < t);
        idx.checked_sub(1).map(|i| &self.segments[i])
    }

    /// Total variance owed by steps `1..=t`.
    pub fn prefix(&self, t: u64) -> f64 {
        match self.segment(t) {
            Some(s) => s.base + (t - s.start) as f64 * s.per_step,
            None => 0.0,
        }
    }

    /// Variance owed by steps `(a, b]`.
    pub fn variance_between(&self, a: u64, b: u64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match (self.segment(a + 1), self.segment(b)) {
            (Some(sa), Some(sb)) if sa.start == sb.start => (b - a) as f64 * sa.per_step,
            _ => (self.prefix(b) - self.prefix(a)).max(0.0),
        }
    }

    /// Variance of the single step `t`.
    pub fn step_variance(&self, t: u64) -> f64 {
        self.segment(t).map_or(0.0, |s| s.per_step)
    }

    fn slot(&self, row: Row) -> &AtomicU64 {
        match row {
            Row::User(i) => &self.user_last[i as usize],
            Row::Item(j) => &self.item_last[j as usize],
        }
    }

    pub fn last(&self, row: Row) -> u64 {
        self.slot(row).load(Ordering::Relaxed)
    }

    /// Marks `row` as holding all noise up to step `t`. Never moves backwards.
    pub fn mark(&self, row: Row, t: u64) {
        self.slot(row).fetch_max(t, Ordering::Relaxed);
    }

    /// Pays the noise owed to `row` for steps `(last, to]` into `dst`.
    pub fn catch_up<N: NoiseSource + ?Sized>(&self, row: Row, to: u64, noise: &mut N, dst: &mut [f64]) {
        let from = self.last(row);
        if from < to {
            noise.add_increment(row, from, to, self.variance_between(from, to), dst);
            self.mark(row, to);
        }
    }

    /// Adds the noise of the single step `t` to a row just updated at `t`.
    pub fn step_noise<N: NoiseSource + ?Sized>(&self, row: Row, t: u64, noise: &mut N, dst: &mut [f64]) {
        noise.add_increment(row, t - 1, t, self.step_variance(t), dst);
        self.mark(row, t);
    }

    pub fn n_users(&self) -> usize {
        self.user_last.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_last.len()
    }
}
