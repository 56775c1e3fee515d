//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.
//!
//! Reference values come from oracles written here, independent of the
//! library code they check.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use dpmf::dataset::{
    build_blocks, plan_tiers, tiered_update_order, write_blocks, BlockOptions, BlockedDataset, RatingDataset,
    RatingRange, RatingTriple, TierPlan,
};
use dpmf::model::{save_model, FactorModel, HyperParams, ItemFactors};
use dpmf::preprocess::{compute_budget, prepare, BoundVariant, BudgetParams, PrivacyBudget};
use dpmf::privacy::{exp_mechanism_oracle, grid, TinyInstance};
use dpmf::recommend::local_fit;
use dpmf::sgd::{learning_rate, train, SgdConfig};
use dpmf::sgld::{
    langevin_step_size, sample, sample_with_noise, scaled_gradient, GaussianTable, GradientContext, NoiseSource,
    Row, SgldConfig, TableNoise,
};
use dpmf::synth::{low_rank, LowRankSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn triple_set(ds: &RatingDataset) -> Vec<(u64, u64, u32)> {
    let mut v: Vec<_> = ds
        .triples()
        .iter()
        .map(|t| (ds.user_ids()[t.user as usize], ds.item_ids()[t.item as usize], t.rating.to_bits()))
        .collect();
    v.sort_unstable();
    v
}

// ---------------------------------------------------------------------------
// The synthetic problem: rank 5, 200 x 300, 20% observed, noise 0.1.

const K: usize = 8;
const DATA_SEED: u64 = 1;

struct Problem {
    train: RatingDataset,
    /// Validation ratings with items in the blocked (remapped) order.
    test: RatingDataset,
    blocked: BlockedDataset,
    budget: PrivacyBudget,
    plan: TierPlan,
    noise_floor: f64,
}

fn problem() -> Problem {
    let spec = LowRankSpec::default();
    let truth = low_rank(&spec, DATA_SEED).unwrap();
    let (train, test) = truth.data.split(0.2, DATA_SEED).unwrap();
    let floor_sse: f64 = test
        .triples()
        .iter()
        .map(|t| (t.rating as f64 - spec.range.clamp(truth.truth(&spec, t.user as usize, t.item as usize))).powi(2))
        .sum();
    let noise_floor = (floor_sse / test.len() as f64).sqrt();
    let (train, budget) = prepare(&train, &BudgetParams::default(), DATA_SEED).unwrap();
    let plan = plan_tiers(&train, &TierPlan::clamp_cutoffs(&[30, 100], train.n_items())).unwrap();
    let blocked = build_blocks(&train, &plan, BlockOptions { users_per_block: 25, shuffle_seed: None }).unwrap();
    let test = plan.apply(&test).unwrap();
    Problem { train, test, blocked, budget, plan, noise_floor }
}

fn sgd_config(workers: usize) -> SgdConfig {
    SgdConfig { eta0: 0.1, gamma: 0.3, lambda: 0.01, epochs: 50, workers, eval_train: false, ..Default::default() }
}

fn sgd_model(p: &Problem, workers: usize) -> (FactorModel, f64) {
    let m = FactorModel::init(p.train.n_users(), p.train.n_items(), K, 0.01, 1).unwrap().with_biases(true);
    let out = train(m, &p.blocked, &sgd_config(workers), Some(&p.test)).unwrap();
    let rmse = out.log.last().unwrap().validation_rmse.unwrap();
    (out.model, rmse)
}

fn sgld_rmse(p: &Problem, epsilon: f64, table_size: Option<usize>, seed: u64) -> f64 {
    let budget = p.budget.with_epsilon(epsilon).unwrap();
    let cfg = SgldConfig {
        eta0: langevin_step_size(0.1, budget.scale(), p.train.len() as u64),
        gamma: 0.3,
        zeta: 0.01,
        epochs: 100,
        table_size,
        seed,
        ..Default::default()
    };
    let m = FactorModel::init(p.train.n_users(), p.train.n_items(), K, 0.01, 1).unwrap();
    let out = sample(m, &p.blocked, &budget, HyperParams::from_ridge(K, 0.3), &cfg, Some(&p.test)).unwrap();
    out.trace.last().unwrap().validation_rmse.unwrap()
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

// ---------------------------------------------------------------------------
// 1. Budget math.

fn single_heavy_user(range: RatingRange, heavy: usize) -> RatingDataset {
    let mut triples: Vec<RatingTriple> = (0..heavy as u32).map(|j| RatingTriple::new(0, j, range.max as f32)).collect();
    triples.extend((0..10u32).map(|j| RatingTriple::new(1, j, range.min as f32)));
    RatingDataset::from_triples(triples, 2, heavy, range).unwrap()
}

fn budget_math() -> Outcome {
    let ds = single_heavy_user(RatingRange::new(1.0, 5.0).unwrap(), 150);
    let (_, b) = prepare(&ds, &BudgetParams { tau: 100, kappa: 1.0, rho: 1.0, ..Default::default() }, 0).unwrap();
    ensure(b.bound == 2500.0, || format!("tau=100 on [1,5]: B = {}", b.bound))?;

    let ds = single_heavy_user(RatingRange::new(0.0, 5.0).unwrap(), 250);
    let params = BudgetParams { tau: 200, kappa: 1.0, rho: 1.0, variant: BoundVariant::FiveStar, ..Default::default() };
    let (_, five) = prepare(&ds, &params, 0).unwrap();
    ensure(five.bound == 5000.0, || format!("tau=200 five-star: B = {}", five.bound))?;
    let (_, range) = prepare(&ds, &BudgetParams { variant: BoundVariant::RatingRange, ..params }, 0).unwrap();
    ensure(range.bound == 7200.0, || format!("tau=200 on [0,5], range width: B = {}", range.bound))?;
    Ok(format!(
        "B = {} (tau 100, [1,5]); B = {} (tau 200, width 4 + kappa); range width on [0,5] gives {}",
        b.bound, five.bound, range.bound
    ))
}

// ---------------------------------------------------------------------------
// 2. Personalized accounting.

fn accounting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = LowRankSpec { n_users: 40, n_items: 60, density: 0.3, ..Default::default() };
    let base = low_rank(&spec, 2).unwrap().data;
    let mut worst = 0.0f64;
    for trial in 0..200 {
        // Uneven per-user counts.
        let triples: Vec<RatingTriple> =
            base.triples().iter().copied().filter(|t| (t.item + t.user * 7) % 5 > t.user % 5).collect();
        let ds = base.with_triples(triples).unwrap();
        let tau = rng.random_range(1..=30);
        let kappa = rng.random_range(0.1..3.0);
        let eps = rng.random_range(0.01..20.0);
        let mut weights: Vec<f64> = (0..ds.n_users()).map(|_| rng.random_range(0.0..2.0)).collect();
        if trial % 4 == 0 {
            weights[rng.random_range(0..ds.n_users())] = 0.0;
        }
        let b = compute_budget(&ds, tau, kappa, eps, &weights, BoundVariant::RatingRange).unwrap();

        let c = (ds.range().max - ds.range().min + kappa).powi(2);
        let bounds: Vec<f64> =
            (0..ds.n_users()).map(|i| (ds.user_count(i).min(tau) as f64) * weights[i] * c).collect();
        let big_b = bounds.iter().copied().fold(0.0, f64::max);
        ensure(b.bound == big_b, || format!("trial {trial}: B {} vs {}", b.bound, big_b))?;
        for (i, &b_i) in bounds.iter().enumerate() {
            let expect = eps * b_i / (2.0 * big_b);
            let err = (b.user_epsilons[i] - expect).abs();
            worst = worst.max(err);
            ensure(err <= 1e-12, || format!("trial {trial} user {i}: {} vs {expect}", b.user_epsilons[i]))?;
            ensure(b.user_bounds[i] <= b.bound, || format!("trial {trial} user {i}: B_i > B"))?;
        }
        let at4 = b.with_epsilon(4.0 * b.bound).unwrap();
        for i in 0..ds.n_users() {
            ensure(at4.user_epsilons[i] == 2.0 * at4.user_bounds[i], || {
                format!("trial {trial} user {i}: eps_i {} != 2 B_i {}", at4.user_epsilons[i], 2.0 * at4.user_bounds[i])
            })?;
        }
    }
    Ok(format!("200 random weight vectors, max |eps_i - oracle| = {worst:.1e}; eps = 4B gives eps_i = 2 B_i exactly"))
}

// ---------------------------------------------------------------------------
// 3. Exponential-mechanism oracle.

fn mechanism_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shapes = [(1usize, 1usize, 101usize), (1, 2, 41), (2, 1, 41), (2, 2, 17)];
    let mut worst_fraction = 0.0f64;
    let instances = 24;
    for trial in 0..instances {
        let (n_users, n_items, points) = shapes[trial % shapes.len()];
        let inst = TinyInstance {
            n_users,
            n_items,
            range: RatingRange::default(),
            kappa: rng.random_range(0.5..2.0),
            tau: 2,
            rho: rng.random_range(0.3..1.5),
            lambda: rng.random_range(0.01..1.0),
            grid: grid(-3.0, 3.0, points),
        };
        let eps = rng.random_range(0.1..5.0);
        let mut user_ratings = |u: u32| -> Vec<RatingTriple> {
            let m = rng.random_range(1..=n_items);
            (0..m as u32).map(|j| RatingTriple::new(u, j, rng.random_range(1.0f32..=5.0))).collect()
        };
        let smaller: Vec<RatingTriple> = (0..n_users as u32 - 1).flat_map(&mut user_ratings).collect();
        let mut larger = smaller.clone();
        larger.extend(user_ratings(n_users as u32 - 1));
        // Adding a user, then removing it again.
        for (a, b) in [(&smaller, &larger), (&larger, &smaller)] {
            let r = exp_mechanism_oracle(&inst, a, b, eps).map_err(|e| format!("trial {trial}: {e}"))?;
            worst_fraction = worst_fraction.max(r.max_log_ratio / eps);
            ensure(r.max_log_ratio <= eps + 1e-9, || {
                format!("trial {trial}: log ratio {} > eps {eps} ({inst:?})", r.max_log_ratio)
            })?;
        }
    }
    Ok(format!("{instances} instances, add and remove; largest log ratio = {worst_fraction:.3} eps"))
}

// ---------------------------------------------------------------------------
// 4. Lazy noise.

/// Deterministic value owed to `row`, coordinate `d`, at step `s`.
fn schedule(row: Row, d: usize, s: u64) -> f64 {
    let code = match row {
        Row::User(i) => 2 * i as u64,
        Row::Item(j) => 2 * j as u64 + 1,
    };
    let mut x = code.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (d as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ s;
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 29;
    ((x >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.1
}

struct ScheduleNoise;

impl NoiseSource for ScheduleNoise {
    fn add_increment(&mut self, row: Row, from: u64, to: u64, _variance: f64, dst: &mut [f64]) {
        for s in from + 1..=to {
            for (d, x) in dst.iter_mut().enumerate() {
                *x += schedule(row, d, s);
            }
        }
    }
}

struct Tiny {
    blocked: BlockedDataset,
    budget: PrivacyBudget,
    hp: HyperParams,
    cfg: SgldConfig,
    init: FactorModel,
}

fn tiny() -> Tiny {
    let spec = LowRankSpec { n_users: 10, n_items: 10, density: 0.5, ..Default::default() };
    let ds = low_rank(&spec, 4).unwrap().data;
    let (ds, budget) = prepare(&ds, &BudgetParams::default(), 4).unwrap();
    let plan = plan_tiers(&ds, &[3]).unwrap();
    let blocked = build_blocks(&ds, &plan, BlockOptions { users_per_block: 3, shuffle_seed: None }).unwrap();
    let cfg = SgldConfig {
        eta0: langevin_step_size(0.05, budget.scale(), ds.len() as u64),
        gamma: 0.5,
        zeta: 1.0,
        epochs: 2,
        table_size: None,
        ..Default::default()
    };
    let init = FactorModel::init(10, 10, 2, 0.5, 7).unwrap();
    Tiny { blocked, budget, hp: HyperParams::from_ridge(2, 0.5), cfg, init }
}

/// Dense reference: every row receives its step noise at every step.
fn eager(t: &Tiny, mut step_noise: impl FnMut(Row, u64, f64, &mut [f64])) -> FactorModel {
    let meta = t.blocked.meta();
    let ctx = GradientContext::new(t.budget.scale(), &t.hp, &t.budget.weights, &meta.user_counts, &meta.item_counts)
        .unwrap();
    let mut m = t.init.clone();
    let mut s = 0u64;
    for epoch in 1..=t.cfg.epochs {
        let eta = learning_rate(t.cfg.eta0, t.cfg.gamma, epoch);
        for block in t.blocked.blocks().unwrap() {
            let block = block.unwrap();
            for idx in tiered_update_order(&block, &meta.tier_ends) {
                let tr = block.triples[idx];
                s += 1;
                let (gu, gv) = scaled_gradient(&m, tr, &ctx).unwrap();
                let (u, v) = m.rows_mut(tr.user as usize, tr.item as usize);
                for d in 0..u.len() {
                    u[d] -= eta * gu[d];
                    v[d] -= eta * gv[d];
                }
                let var = t.cfg.zeta * eta;
                for i in 0..m.n_users() {
                    step_noise(Row::User(i as u32), s, var, m.user_mut(i));
                }
                for j in 0..m.n_items() {
                    step_noise(Row::Item(j as u32), s, var, m.item_mut(j));
                }
            }
        }
    }
    m
}

fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (mean, var, m4)
}

fn lazy_noise() -> Outcome {
    let t = tiny();
    let steps = t.blocked.meta().n_triples * t.cfg.epochs as u64;
    ensure(steps == 100, || format!("instance has {steps} steps"))?;

    let lazy = sample_with_noise(t.init.clone(), &t.blocked, &t.budget, t.hp.clone(), &t.cfg, None, |_| ScheduleNoise)
        .unwrap()
        .model;
    let dense = eager(&t, |row, s, _, dst| {
        for (d, x) in dst.iter_mut().enumerate() {
            *x += schedule(row, d, s);
        }
    });
    let bits = |m: &FactorModel| -> Vec<u64> {
        m.user_factors().iter().chain(m.item_factors()).map(|x| x.to_bits()).collect()
    };
    ensure(bits(&lazy) == bits(&dense), || "stubbed noise: lazy and eager differ".into())?;

    let runs = 1000;
    let coords = t.init.user_factors().len() + t.init.item_factors().len();
    let mut lazy_draws = vec![Vec::with_capacity(runs); coords];
    let mut eager_draws = vec![Vec::with_capacity(runs); coords];
    let flat = |m: &FactorModel| -> Vec<f64> { m.user_factors().iter().chain(m.item_factors()).copied().collect() };
    for run in 0..runs as u64 {
        let cfg = SgldConfig { seed: run, ..t.cfg.clone() };
        let m = sample(t.init.clone(), &t.blocked, &t.budget, t.hp.clone(), &cfg, None).unwrap().model;
        for (c, x) in flat(&m).into_iter().enumerate() {
            lazy_draws[c].push(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(run ^ 0xE46E);
        let m = eager(&t, |_, _, var, dst| {
            let sd = var.sqrt();
            for x in dst {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += sd * z;
            }
        });
        for (c, x) in flat(&m).into_iter().enumerate() {
            eager_draws[c].push(x);
        }
    }
    let n = runs as f64;
    let mut worst = 0.0f64;
    for c in 0..coords {
        let (ml, vl, m4l) = moments(&lazy_draws[c]);
        let (me, ve, m4e) = moments(&eager_draws[c]);
        let se_mean = (vl / n + ve / n).sqrt();
        let se_var = ((m4l - vl * vl) / n + (m4e - ve * ve) / n).sqrt();
        let (zm, zv) = ((ml - me).abs() / se_mean, (vl - ve).abs() / se_var);
        worst = worst.max(zm).max(zv);
        ensure(zm <= 5.0 && zv <= 5.0, || format!("coordinate {c}: mean z {zm:.2}, variance z {zv:.2}"))?;
    }
    Ok(format!(
        "stubbed noise bit-identical over {steps} steps; {runs} real-noise runs, {coords} coordinates, worst |z| = {worst:.2}"
    ))
}

// ---------------------------------------------------------------------------
// 5. Gradient unbiasedness.

fn unbiased_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 3;
    let mut worst = 0.0f64;
    for trial in 0..30 {
        let (nu, ni) = (rng.random_range(2..=8usize), rng.random_range(2..=6usize));
        let mut cells: HashSet<(u32, u32)> = HashSet::new();
        for i in 0..nu as u32 {
            cells.insert((i, rng.random_range(0..ni as u32)));
        }
        for j in 0..ni as u32 {
            cells.insert((rng.random_range(0..nu as u32), j));
        }
        for _ in 0..rng.random_range(0..nu * ni) {
            cells.insert((rng.random_range(0..nu as u32), rng.random_range(0..ni as u32)));
        }
        let mut cells: Vec<_> = cells.into_iter().collect();
        cells.sort_unstable();
        let triples: Vec<RatingTriple> =
            cells.iter().map(|&(i, j)| RatingTriple::new(i, j, rng.random_range(1.0f32..=5.0))).collect();
        assert!(triples.len() <= 100);
        let ds = RatingDataset::from_triples(triples, nu, ni, RatingRange::default()).unwrap();

        let weights: Vec<f64> = (0..nu).map(|_| rng.random_range(0.1..2.0)).collect();
        let hp = HyperParams {
            lambda_r: rng.random_range(0.5..2.0),
            lambda_u: (0..k).map(|_| rng.random_range(0.01..3.0)).collect(),
            lambda_v: (0..k).map(|_| rng.random_range(0.01..3.0)).collect(),
            alpha: 1.0,
            beta: 1.0,
        };
        let scale = rng.random_range(1e-3..1.0);
        let users: Vec<f64> = (0..nu * k).map(|_| rng.random_range(-1.5..1.5)).collect();
        let items: Vec<f64> = (0..ni * k).map(|_| rng.random_range(-1.5..1.5)).collect();
        let m = FactorModel::from_parts(nu, ni, k, users, items).unwrap();
        let ctx = GradientContext::new(scale, &hp, &weights, &ds.user_counts(), ds.item_counts()).unwrap();

        let n = ds.len() as f64;
        let mut avg_u = vec![0.0; nu * k];
        let mut avg_v = vec![0.0; ni * k];
        for &t in ds.triples() {
            let (gu, gv) = scaled_gradient(&m, t, &ctx).unwrap();
            for d in 0..k {
                avg_u[t.user as usize * k + d] += gu[d] / n;
                avg_v[t.item as usize * k + d] += gv[d] / n;
            }
        }

        // d/dtheta of scale * F.
        let mut full_u: Vec<f64> = (0..nu * k).map(|x| 2.0 * scale * hp.lambda_u[x % k] * m.user_factors()[x]).collect();
        let mut full_v: Vec<f64> = (0..ni * k).map(|x| 2.0 * scale * hp.lambda_v[x % k] * m.item_factors()[x]).collect();
        for &t in ds.triples() {
            let (i, j) = (t.user as usize, t.item as usize);
            let (u, v) = (m.user(i), m.item(j));
            let e = t.rating as f64 - u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            for d in 0..k {
                full_u[i * k + d] -= 2.0 * scale * hp.lambda_r * weights[i] * e * v[d];
                full_v[j * k + d] -= 2.0 * scale * hp.lambda_r * weights[i] * e * u[d];
            }
        }
        for (a, b) in avg_u.iter().chain(&avg_v).zip(full_u.iter().chain(&full_v)) {
            worst = worst.max((a - b).abs());
        }
        ensure(worst <= 1e-10, || format!("trial {trial}: max |avg - full| = {worst:e}"))?;
    }
    Ok(format!("30 datasets of <= 100 ratings, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 6. Gaussian table.

fn gaussian_table(p: &Problem) -> Outcome {
    let table = Arc::new(GaussianTable::new(10_000, 6).unwrap());
    let mut reader = TableNoise::new(table, 64, 6);
    let n = 1_000_000;
    let mut xs = vec![0.0f64; n];
    for (c, chunk) in xs.chunks_mut(8).enumerate() {
        reader.add_increment(Row::User(c as u32), 0, 1, 1.0, chunk);
    }
    xs.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
        })
        .fold(0.0, f64::max);
    // Asymptotic Kolmogorov critical value at alpha = 0.01.
    let critical = 1.6276 / (n as f64).sqrt();
    ensure(d < critical, || format!("KS statistic {d:.2e} >= {critical:.2e}"))?;

    let eps = 4.0 * p.budget.bound;
    let seeds = [1u64, 2, 3];
    let mean = |size: Option<usize>| seeds.iter().map(|&s| sgld_rmse(p, eps, size, s)).sum::<f64>() / 3.0;
    let reference = mean(None);
    let mut detail = format!("KS D = {d:.2e} < {critical:.2e}; rng RMSE {reference:.4}");
    for size in [1_000usize, 10_000, 100_000] {
        let rmse = mean(Some(size));
        let rel = (rmse - reference).abs() / reference;
        detail += &format!(", {size}: {rmse:.4} ({:+.2}%)", 100.0 * (rmse - reference) / reference);
        if size >= 10_000 {
            ensure(rel < 0.02, || format!("table {size}: RMSE {rmse:.4} vs {reference:.4}"))?;
        }
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 7. SGD convergence.

fn convergence(p: &Problem, sgd_rmse: f64) -> Outcome {
    ensure(p.noise_floor < 0.15, || format!("ground truth scores {:.4}; threshold unreachable", p.noise_floor))?;
    ensure(sgd_rmse <= 0.15, || format!("validation RMSE {sgd_rmse:.4} after 50 epochs"))?;
    Ok(format!("validation RMSE {sgd_rmse:.4} <= 0.15 after 50 epochs (ground truth scores {:.4})", p.noise_floor))
}

// ---------------------------------------------------------------------------
// 8. Privacy versus utility.

fn privacy_utility(p: &Problem, sgd_rmse: f64) -> Outcome {
    let b = p.budget.bound;
    let levels = [b / 10.0, b, 4.0 * b];
    let runs: Vec<[f64; 3]> =
        levels.iter().map(|&eps| [1u64, 2, 3].map(|s| sgld_rmse(p, eps, Some(100_000), s))).collect();
    let medians: Vec<f64> = runs.iter().map(|r| median3(*r)).collect();
    let spread = runs
        .iter()
        .map(|r| r.iter().copied().fold(f64::MIN, f64::max) - r.iter().copied().fold(f64::MAX, f64::min))
        .fold(0.0, f64::max);
    let rel = (medians[2] - sgd_rmse).abs() / sgd_rmse;
    ensure(rel <= 0.25, || format!("eps = 4B: RMSE {:.4} vs SGD {sgd_rmse:.4}", medians[2]))?;
    for w in medians.windows(2) {
        ensure(w[1] <= w[0] + spread, || format!("RMSE rises with eps: {medians:?} (seed spread {spread:.4})"))?;
    }
    Ok(format!(
        "median RMSE at B/10, B, 4B = {:.4}, {:.4}, {:.4}; 4B is {:+.1}% from SGD {sgd_rmse:.4}",
        medians[0],
        medians[1],
        medians[2],
        100.0 * (medians[2] - sgd_rmse) / sgd_rmse
    ))
}

// ---------------------------------------------------------------------------
// 9. Local recommender.

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
fn gauss_jordan(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        a[col].iter_mut().for_each(|x| *x /= p);
        b[col] /= p;
        let pivot_row = a[col].clone();
        for r in (0..n).filter(|&r| r != col) {
            let f = a[r][col];
            for (x, y) in a[r].iter_mut().zip(&pivot_row) {
                *x -= f * y;
            }
            b[r] -= f * b[col];
        }
    }
    b
}

fn local_recommender() -> Outcome {
    let hand = ItemFactors { k: 2, factors: vec![1.0, 0.0], item_ids: vec![0] };
    let u = local_fit(&hand, &[(0, 4.0)], 1.0).map_err(|e| e.to_string())?;
    ensure(u == vec![2.0, 0.0], || format!("hand case gives {u:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let k = rng.random_range(1..=6);
        let n_items = 20;
        let v = ItemFactors {
            k,
            factors: (0..n_items * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            item_ids: (0..n_items as u64).collect(),
        };
        let m = rng.random_range(1..=15);
        let ratings: Vec<(usize, f64)> =
            (0..m).map(|_| (rng.random_range(0..n_items), rng.random_range(1.0..5.0))).collect();
        let lambda = rng.random_range(0.05..2.0);

        let mut a = vec![vec![0.0; k]; k];
        let mut b = vec![0.0; k];
        for (d, row) in a.iter_mut().enumerate() {
            row[d] = lambda;
        }
        for &(j, r) in &ratings {
            let vj = v.row(j);
            for x in 0..k {
                b[x] += r * vj[x];
                for y in 0..k {
                    a[x][y] += vj[x] * vj[y];
                }
            }
        }
        let expect = gauss_jordan(a, b);
        let got = local_fit(&v, &ratings, lambda).map_err(|e| e.to_string())?;
        for (g, e) in got.iter().zip(&expect) {
            worst = worst.max((g - e).abs());
        }
        ensure(worst <= 1e-8, || format!("trial {trial}: |local_fit - oracle| = {worst:e}"))?;
    }
    Ok(format!("hand case exact; 100 random instances, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 10. Pipeline integrity.

fn pipeline_integrity(p: &Problem, single: &(FactorModel, f64)) -> Outcome {
    let meta = p.blocked.meta();
    let mut visited = Vec::with_capacity(p.train.len());
    for block in p.blocked.blocks().map_err(|e| e.to_string())? {
        let block = block.map_err(|e| e.to_string())?;
        visited.extend(tiered_update_order(&block, &meta.tier_ends).into_iter().map(|i| block.triples[i]));
    }
    let as_set = |ts: &[RatingTriple]| {
        let mut v: Vec<(u64, u64, u32)> = ts
            .iter()
            .map(|t| (meta.user_ids[t.user as usize], meta.item_ids[t.item as usize], t.rating.to_bits()))
            .collect();
        v.sort_unstable();
        v
    };
    ensure(as_set(&visited) == triple_set(&p.train), || "an epoch's visit order is not the training multiset".into())?;
    let n = p.train.len() as u64;
    let cfg = SgdConfig { epochs: 1, ..sgd_config(1) };
    let m = FactorModel::init(p.train.n_users(), p.train.n_items(), K, 0.01, 1).unwrap();
    let one = train(m, &p.blocked, &cfg, None).map_err(|e| e.to_string())?;
    ensure(one.log[0].ratings == n, || format!("SGD epoch processed {} of {n} ratings", one.log[0].ratings))?;
    let scfg = SgldConfig { epochs: 1, eta0: 1e-7, ..Default::default() };
    let m = FactorModel::init(p.train.n_users(), p.train.n_items(), K, 0.01, 1).unwrap();
    let s = sample(m, &p.blocked, &p.budget, HyperParams::from_ridge(K, 0.3), &scfg, None).map_err(|e| e.to_string())?;
    ensure(s.trace[0].ratings == n, || format!("SGLD epoch processed {} of {n} ratings", s.trace[0].ratings))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("train.blk");
    write_blocks(&p.train, &p.plan, BlockOptions { users_per_block: 25, shuffle_seed: Some(3) }, &path)
        .map_err(|e| e.to_string())?;
    let back = BlockedDataset::open(&path).and_then(|b| b.to_dataset()).map_err(|e| e.to_string())?;
    ensure(triple_set(&back) == triple_set(&p.train), || "blocked round trip changed the triples".into())?;

    let save = |m: &FactorModel, name: &str| -> Result<Vec<u8>, String> {
        let f = dir.path().join(name);
        save_model(m, Some(&meta.item_ids), &f).map_err(|e| e.to_string())?;
        std::fs::read(&f).map_err(|e| e.to_string())
    };
    let (again, _) = sgd_model(p, 1);
    ensure(save(&single.0, "a.bin")? == save(&again, "b.bin")?, || "two single-worker SGD runs differ".into())?;
    let cfg = SgldConfig { epochs: 3, eta0: langevin_step_size(0.1, p.budget.scale(), n), seed: 5, ..Default::default() };
    let draw = || {
        let m = FactorModel::init(p.train.n_users(), p.train.n_items(), K, 0.01, 2).unwrap();
        sample(m, &p.blocked, &p.budget, HyperParams::from_ridge(K, 0.3), &cfg, None).unwrap().model
    };
    ensure(save(&draw(), "c.bin")? == save(&draw(), "d.bin")?, || "two single-worker SGLD runs differ".into())?;

    let (_, multi) = sgd_model(p, 8);
    let rel = (multi - single.1).abs() / single.1;
    ensure(rel <= 0.02, || format!("8 workers {multi:.4} vs 1 worker {:.4}", single.1))?;
    Ok(format!(
        "epoch covers all {n} ratings once; round trip exact; runs byte-identical; 8 workers {multi:.4} vs 1 worker {:.4} ({:+.2}%)",
        single.1,
        100.0 * (multi - single.1) / single.1
    ))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let p = problem();
    let single = sgd_model(&p, 1);
    let sgd_rmse = single.1;
    let criteria: Vec<Criterion> = vec![
        ("budget math", Box::new(budget_math)),
        ("personalized accounting", Box::new(accounting)),
        ("exponential-mechanism oracle", Box::new(mechanism_oracle)),
        ("lazy noise", Box::new(lazy_noise)),
        ("gradient unbiasedness", Box::new(unbiased_gradient)),
        ("gaussian table", Box::new(|| gaussian_table(&p))),
        ("sgd convergence", Box::new(|| convergence(&p, sgd_rmse))),
        ("privacy vs utility", Box::new(|| privacy_utility(&p, sgd_rmse))),
        ("local recommender", Box::new(local_recommender)),
        ("pipeline integrity", Box::new(|| pipeline_integrity(&p, &single))),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1}s): {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {detail}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
