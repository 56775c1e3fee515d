//! Local second stage: each user fits their own vector against released item
//! factors by ridge regression and ranks the remaining items.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RatingDataset;
use crate::error::{Error, Result};
use crate::model::{dot, ItemFactors};

/// Solves `(lambda I + sum_j v_j v_j') u = sum_j r_j v_j` over the user's
/// `(row of v, rating)` pairs.
pub fn local_fit(v: &ItemFactors, ratings: &[(usize, f64)], lambda: f64) -> Result<Vec<f64>> {
    let k = v.k;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if ratings.is_empty() {
        return Ok(vec![0.0; k]);
    }
    let mut gram = DMatrix::<f64>::from_diagonal_element(k, k, lambda);
    let mut rhs = DVector::<f64>::zeros(k);
    for &(j, r) in ratings {
        if j >= v.n_items() {
            return Err(Error::IndexOutOfRange { kind: "item", index: j, len: v.n_items() });
        }
        let row = DVector::from_column_slice(v.row(j));
        gram.ger(1.0, &row, &row, 1.0);
        rhs.axpy(r, &row, 1.0);
    }
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::Singular(format!(
            "the {k}x{k} normal equations of {} ratings are not positive definite; use lambda > 0",
            ratings.len()
        ))
    })?;
    let mut u = chol.solve(&rhs);
    // One step of iterative refinement.
    let residual = &rhs - &gram * &u;
    u += chol.solve(&residual);
    Ok(u.as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item: u64,
    pub score: f64,
}

/// The `n` best-scoring rows of `v` not in `exclude`, by descending
/// `<u, v_j>` with ties going to the smaller original item id.
pub fn recommend_top_n(u: &[f64], v: &ItemFactors, exclude: &HashSet<usize>, n: usize) -> Vec<Recommendation> {
    let mut scored: Vec<Recommendation> = (0..v.n_items())
        .filter(|j| !exclude.contains(j))
        .map(|j| Recommendation { item: v.item_ids[j], score: dot(u, v.row(j)) })
        .collect();
    let order = |a: &Recommendation, b: &Recommendation| {
        b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(a.item.cmp(&b.item))
    };
    if n < scored.len() {
        scored.select_nth_unstable_by(n, order);
        scored.truncate(n);
    }
    scored.sort_by(order);
    scored
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEvaluation {
    pub rmse: f64,
    pub test_ratings: usize,
    pub users: usize,
    /// Test ratings on items absent from the release, left out of the RMSE.
    pub skipped: usize,
}

/// Maps each dataset item index to its row in `v` through original ids.
pub fn align_items(ds: &RatingDataset, v: &ItemFactors) -> Vec<Option<usize>> {
    let rows: HashMap<u64, usize> = v.item_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    ds.item_ids().iter().map(|id| rows.get(id).copied()).collect()
}

/// Fits every user on `train` and scores `test`. Both datasets must share
/// user indices (e.g. the two halves of [`RatingDataset::split`]).
pub fn evaluate_local(v: &ItemFactors, train: &RatingDataset, test: &RatingDataset, lambda: f64) -> Result<LocalEvaluation> {
    if train.n_users() != test.n_users() {
        return Err(Error::InvalidArgument("train and test have different users".into()));
    }
    let train_rows = align_items(train, v);
    let test_rows = align_items(test, v);
    let per_user: Vec<(f64, usize, usize)> = (0..test.n_users())
        .into_par_iter()
        .map(|i| -> Result<(f64, usize, usize)> {
            let held = test.user_ratings(i);
            if held.is_empty() {
                return Ok((0.0, 0, 0));
            }
            let own: Vec<(usize, f64)> = train
                .user_ratings(i)
                .iter()
                .filter_map(|t| train_rows[t.item as usize].map(|j| (j, t.rating as f64)))
                .collect();
            let u = local_fit(v, &own, lambda)?;
            let mut sse = 0.0;
            let mut n = 0;
            for t in held {
                if let Some(j) = test_rows[t.item as usize] {
                    let e = t.rating as f64 - dot(&u, v.row(j));
                    sse += e * e;
                    n += 1;
                }
            }
            Ok((sse, n, held.len() - n))
        })
        .collect::<Result<_>>()?;
    let sse: f64 = per_user.iter().map(|p| p.0).sum();
    let n: usize = per_user.iter().map(|p| p.1).sum();
    let skipped = per_user.iter().map(|p| p.2).sum();
    let users = (0..test.n_users()).filter(|&i| !test.user_ratings(i).is_empty()).count();
    Ok(LocalEvaluation {
        rmse: if n > 0 { (sse / n as f64).sqrt() } else { 0.0 },
        test_ratings: n,
        users,
        skipped,
    })
}
