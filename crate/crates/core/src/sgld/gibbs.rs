//! Conjugate Gamma updates of the diagonal prior precisions.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::model::{FactorModel, HyperParams};

/// Draws `Lu[d] ~ Gamma(alpha + n_users / 2, rate = beta + sum_i U[i,d]^2 / 2)`
/// and likewise for `Lv`. `lambda_r` is left alone.
pub fn gibbs_hyperparams<R: Rng + ?Sized>(m: &FactorModel, hp: &mut HyperParams, rng: &mut R) {
    let (alpha, beta) = (hp.alpha, hp.beta);
    hp.lambda_u = sample_precisions(rng, m.user_factors(), m.k(), m.n_users(), alpha, beta);
    hp.lambda_v = sample_precisions(rng, m.item_factors(), m.k(), m.n_items(), alpha, beta);
}

fn sample_precisions<R: Rng + ?Sized>(
    rng: &mut R,
    factors: &[f64],
    k: usize,
    rows: usize,
    alpha: f64,
    beta: f64,
) -> Vec<f64> {
    let mut sq = vec![0.0; k];
    for row in factors.chunks_exact(k) {
        for (s, x) in sq.iter_mut().zip(row) {
            *s += x * x;
        }
    }
    let shape = alpha + rows as f64 / 2.0;
    sq.into_iter()
        .map(|s| {
            let rate = beta + 0.5 * s;
            Gamma::new(shape, 1.0 / rate)
                .expect("shape and rate are positive")
                .sample(rng)
        })
        .collect()
}
