//! Lock-free shared parameters for Hogwild updates.
//!
//! Every scalar is an `AtomicU64` holding `f64` bits and accessed with
//! relaxed ordering. Individual scalars never tear, but a row read while
//! another worker writes it may mix old and new coordinates; that race is
//! the accepted Hogwild noise. With a single worker the arithmetic is
//! identical to working on a plain `Vec<f64>`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::model::FactorModel;

pub(crate) struct SharedRows {
    k: usize,
    data: Vec<AtomicU64>,
}

impl SharedRows {
    fn new(k: usize, values: &[f64]) -> Self {
        SharedRows {
            k,
            data: values.iter().map(|x| AtomicU64::new(x.to_bits())).collect(),
        }
    }

    #[inline]
    pub fn load(&self, row: usize, out: &mut [f64]) {
        let base = row * self.k;
        for (d, o) in out.iter_mut().enumerate() {
            *o = f64::from_bits(self.data[base + d].load(Ordering::Relaxed));
        }
    }

    #[inline]
    pub fn store(&self, row: usize, values: &[f64]) {
        let base = row * self.k;
        for (d, v) in values.iter().enumerate() {
            self.data[base + d].store(v.to_bits(), Ordering::Relaxed);
        }
    }

    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        f64::from_bits(self.data[idx].load(Ordering::Relaxed))
    }

    #[inline]
    pub fn set(&self, idx: usize, v: f64) {
        self.data[idx].store(v.to_bits(), Ordering::Relaxed);
    }

    fn to_vec(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|a| f64::from_bits(a.load(Ordering::Relaxed)))
            .collect()
    }

    /// Hints the CPU to pull `row` into cache.
    #[inline]
    pub fn prefetch(&self, row: usize) {
        #[cfg(target_arch = "x86_64")]
        {
            let base = row * self.k;
            if base < self.data.len() {
                let ptr = self.data[base..].as_ptr() as *const i8;
                // SAFETY: prefetch is a hint and never faults; ptr is in bounds.
                unsafe {
                    std::arch::x86_64::_mm_prefetch::<{ std::arch::x86_64::_MM_HINT_T0 }>(ptr);
                }
            }
        }
        #[cfg(not(target_arch = "x86_64"))]
        let _ = row;
    }
}

pub(crate) struct SharedModel {
    pub k: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub users: SharedRows,
    pub items: SharedRows,
    pub user_bias: SharedRows,
    pub item_bias: SharedRows,
    pub global_bias: f64,
    pub bias_enabled: bool,
}

impl SharedModel {
    pub fn from_model(m: &FactorModel) -> Self {
        SharedModel {
            k: m.k(),
            n_users: m.n_users(),
            n_items: m.n_items(),
            users: SharedRows::new(m.k(), m.user_factors()),
            items: SharedRows::new(m.k(), m.item_factors()),
            user_bias: SharedRows::new(1, m.user_bias()),
            item_bias: SharedRows::new(1, m.item_bias()),
            global_bias: m.global_bias(),
            bias_enabled: m.bias_enabled(),
        }
    }

    /// Copies the current values out. Weakly consistent while workers run.
    pub fn snapshot(&self) -> FactorModel {
        let mut m = FactorModel::from_parts(
            self.n_users,
            self.n_items,
            self.k,
            self.users.to_vec(),
            self.items.to_vec(),
        )
        .expect("shapes match");
        if self.bias_enabled {
            m.set_biases(self.user_bias.to_vec(), self.item_bias.to_vec(), self.global_bias)
                .expect("shapes match");
        }
        m
    }
}
