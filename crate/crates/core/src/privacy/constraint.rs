//! The prediction-range constraint and the resample-until-valid loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BlockedDataset, RatingRange};
use crate::error::{Error, Result};
use crate::model::FactorModel;

/// Which `(user, item)` pairs the constraint is checked on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintScope {
    Observed,
    /// Observed pairs plus this many uniformly random pairs. When the matrix
    /// has no more cells than that, every pair is checked instead.
    ObservedPlusSample(usize),
    Exhaustive,
}

impl Default for ConstraintScope {
    fn default() -> Self {
        ConstraintScope::ObservedPlusSample(1_000_000)
    }
}

impl ConstraintScope {
    pub fn describe(&self, n_users: usize, n_items: usize) -> String {
        match self.effective(n_users, n_items) {
            ConstraintScope::Observed => "observed pairs".into(),
            ConstraintScope::ObservedPlusSample(n) => {
                format!("observed pairs plus {n} uniformly sampled pairs")
            }
            ConstraintScope::Exhaustive => "all pairs".into(),
        }
    }

    fn effective(self, n_users: usize, n_items: usize) -> ConstraintScope {
        match self {
            ConstraintScope::ObservedPlusSample(n) if (n_users as u128) * (n_items as u128) <= n as u128 => {
                ConstraintScope::Exhaustive
            }
            s => s,
        }
    }
}

/// A prediction outside the allowed interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub user: u32,
    pub item: u32,
    pub prediction: f64,
}

/// Returns the first pair whose `u_i . v_j` leaves `[r_min - kappa, r_max + kappa]`.
pub fn check_constraint<R: Rng + ?Sized>(
    m: &FactorModel,
    data: &BlockedDataset,
    range: RatingRange,
    kappa: f64,
    scope: ConstraintScope,
    rng: &mut R,
) -> Result<Option<Violation>> {
    let (lo, hi) = (range.min - kappa, range.max + kappa);
    let check = |i: usize, j: usize| -> Option<Violation> {
        let p = m.predict_unchecked(i, j);
        (!(lo..=hi).contains(&p)).then_some(Violation { user: i as u32, item: j as u32, prediction: p })
    };
    let (nu, ni) = (m.n_users(), m.n_items());
    let scope = scope.effective(nu, ni);
    if scope == ConstraintScope::Exhaustive {
        return Ok((0..nu).flat_map(|i| (0..ni).map(move |j| (i, j))).find_map(|(i, j)| check(i, j)));
    }
    for block in data.blocks()? {
        for t in &block?.triples {
            if let Some(v) = check(t.user as usize, t.item as usize) {
                return Ok(Some(v));
            }
        }
    }
    if let ConstraintScope::ObservedPlusSample(n) = scope {
        for _ in 0..n {
            let (i, j) = (rng.random_range(0..nu), rng.random_range(0..ni));
            if let Some(v) = check(i, j) {
                return Ok(Some(v));
            }
        }
    }
    Ok(None)
}

/// Draws until `accept` passes, allowing at most `max_retries` redraws.
/// Returns the accepted value and the number of redraws.
pub fn sample_until<T>(
    max_retries: usize,
    kappa: f64,
    mut draw: impl FnMut(usize) -> Result<T>,
    mut accept: impl FnMut(&T) -> Result<bool>,
) -> Result<(T, usize)> {
    for attempt in 0..=max_retries {
        let x = draw(attempt)?;
        if accept(&x)? {
            return Ok((x, attempt));
        }
        log::info!("sample {attempt} violates the prediction constraint; resampling");
    }
    Err(Error::RetryLimit { retries: max_retries, kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_blocks, plan_tiers, BlockOptions, RatingDataset, RatingTriple};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_pair(u: f64, v: f64) -> (FactorModel, BlockedDataset) {
        let ds = RatingDataset::from_triples(vec![RatingTriple::new(0, 0, 3.0)], 1, 1, RatingRange::default()).unwrap();
        let plan = plan_tiers(&ds, &[]).unwrap();
        let b = build_blocks(&ds, &plan, BlockOptions::default()).unwrap();
        (FactorModel::from_parts(1, 1, 1, vec![u], vec![v]).unwrap(), b)
    }

    #[test]
    fn detects_a_constructed_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // r_max + kappa + 1 = 7.
        let (m, b) = one_pair(7.0, 1.0);
        let v = check_constraint(&m, &b, RatingRange::default(), 1.0, ConstraintScope::Observed, &mut rng).unwrap();
        assert_eq!(v.unwrap().prediction, 7.0);
        let (m, b) = one_pair(6.0, 1.0);
        assert!(check_constraint(&m, &b, RatingRange::default(), 1.0, ConstraintScope::Observed, &mut rng)
            .unwrap()
            .is_none());
    }

    #[test]
    fn huge_kappa_never_triggers() {
        let mut draws = 0;
        let (_, retries) = sample_until(10, 1e9, |_| {
            draws += 1;
            Ok(1e6)
        }, |x: &f64| Ok(*x <= 5.0 + 1e9))
        .unwrap();
        assert_eq!((draws, retries), (1, 0));
    }

    #[test]
    fn gives_up_after_the_limit() {
        let mut draws = 0;
        let err = sample_until(3, 1.0, |_| {
            draws += 1;
            Ok(())
        }, |_| Ok(false))
        .unwrap_err();
        assert!(matches!(err, Error::RetryLimit { retries: 3, .. }));
        assert_eq!(draws, 4);
    }

    #[test]
    fn small_matrices_are_checked_exhaustively() {
        assert_eq!(ConstraintScope::default().effective(10, 10), ConstraintScope::Exhaustive);
        assert_eq!(
            ConstraintScope::default().effective(10_000, 10_000),
            ConstraintScope::ObservedPlusSample(1_000_000)
        );
    }
}
