//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use optctl::costs::LinearCost;
use optctl::plant::{spectral_norm, CostTrace, DisturbanceTrace, LtiSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-r..=r))
}

pub fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-r..=r))
}

/// Uniform-direction point with norm at most `r`.
pub fn in_ball(rng: &mut ChaCha8Rng, rows: usize, cols: usize, r: f64) -> DMatrix<f64> {
    let m = rand_mat(rng, rows, cols, 1.0);
    let n = m.norm();
    if n == 0.0 {
        return m;
    }
    m * (r * rng.random_range(0.0..=1.0f64).powf(1.0 / (rows * cols) as f64) / n)
}

pub fn stable_system(rng: &mut ChaCha8Rng, d_x: usize, d_u: usize, delta: f64, w_max: f64) -> LtiSystem {
    let raw = rand_mat(rng, d_x, d_x, 1.0);
    let s = spectral_norm(&raw);
    let a = if s > 0.0 { raw * ((1.0 - delta) * rng.random_range(0.3..=1.0) / s) } else { raw };
    LtiSystem::new(a, rand_mat(rng, d_x, d_u, 1.0), delta, w_max).unwrap()
}

pub fn random_costs(rng: &mut ChaCha8Rng, horizon: usize, d_x: usize, d_u: usize, beta: f64) -> CostTrace {
    CostTrace::new(
        (0..horizon)
            .map(|_| LinearCost::new(rand_vec(rng, d_x, 1.0), rand_vec(rng, d_u, beta)))
            .collect(),
    )
}

/// Disturbances with each `||w_t|| <= w_max`.
pub fn random_disturbances(rng: &mut ChaCha8Rng, horizon: usize, d_x: usize, w_max: f64) -> DisturbanceTrace {
    let ws = (0..horizon)
        .map(|_| {
            let v = rand_vec(rng, d_x, 1.0);
            let n = v.norm().max(1e-12);
            v * (w_max * rng.random_range(0.0..=1.0) / n)
        })
        .collect();
    DisturbanceTrace::new(d_x, ws).unwrap()
}

/// `(w_{t-1}, ..., w_{t-p})` built from plain indexing; `ws[0]` is `w_1`.
pub fn past_window(ws: &[DVector<f64>], t: usize, p: usize) -> DVector<f64> {
    let d_x = ws.first().map_or(0, |w| w.len());
    let mut out = DVector::zeros(d_x * p);
    for j in 1..=p {
        if t > j && t - j <= ws.len() {
            out.rows_mut((j - 1) * d_x, d_x).copy_from(&ws[t - j - 1]);
        }
    }
    out
}

/// Exact simulation from `x_1 = 0`, with `policy(t)` giving `M_t`.
/// Returns per-slot `(x_t, u_t, cost_t)`.
pub fn simulate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    costs: &[LinearCost],
    ws: &[DVector<f64>],
    p: usize,
    mut policy: impl FnMut(usize) -> DMatrix<f64>,
) -> Vec<(DVector<f64>, DVector<f64>, f64)> {
    let mut x = DVector::zeros(a.nrows());
    let mut out = Vec::with_capacity(costs.len());
    for t in 1..=costs.len() {
        let u = policy(t) * past_window(ws, t, p);
        let c = costs[t - 1].alpha().dot(&x) + costs[t - 1].beta().dot(&u);
        let next = a * &x + b * &u + &ws[t - 1];
        out.push((x, u, c));
        x = next;
    }
    out
}

pub fn static_total_cost(system: &LtiSystem, costs: &CostTrace, ws: &DisturbanceTrace, m: &DMatrix<f64>, p: usize) -> f64 {
    let cs: Vec<_> = costs.iter().cloned().collect();
    simulate(system.a(), system.b(), &cs, ws.as_slice(), p, |_| m.clone())
        .iter()
        .map(|r| r.2)
        .sum()
}

/// Central-difference gradient of `f` at `m`.
pub fn fd_gradient(f: impl Fn(&DMatrix<f64>) -> f64, m: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(m.nrows(), m.ncols());
    for k in 0..m.len() {
        let (mut plus, mut minus) = (m.clone(), m.clone());
        plus[k] += h;
        minus[k] -= h;
        g[k] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

pub fn ftrl_objective(theta: &DMatrix<f64>, lambda: f64, m: &DMatrix<f64>) -> f64 {
    theta.dot(m) + 0.5 * lambda * m.norm_squared()
}

/// Minimizer of `theta m + lambda/2 m^2` over `[-kappa, kappa]` by bisection
/// on the derivative; falls back to the endpoints for linear objectives.
pub fn scalar_leader(theta: f64, lambda: f64, kappa: f64) -> f64 {
    let f = |m: f64| theta * m + 0.5 * lambda * m * m;
    let mut best = if f(-kappa) <= f(kappa) { -kappa } else { kappa };
    if lambda > 0.0 {
        let (mut lo, mut hi) = (-kappa, kappa);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if theta + lambda * mid > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let c = 0.5 * (lo + hi);
        if f(c) < f(best) {
            best = c;
        }
    }
    if theta == 0.0 {
        best = 0.0;
    }
    best
}

/// Plain FTRL for the memoryless case `d = 0` with no forecasts: gradients
/// `beta_t wbar_{t-1}^T`, hint errors `||G_t||`, and
/// `lambda = sqrt(5)/kappa sqrt(sum ||G_s||^2)`. Returns `M_1..M_T`.
pub fn reference_ftrl_memoryless(costs: &[LinearCost], ws: &[DVector<f64>], p: usize, kappa: f64) -> Vec<DMatrix<f64>> {
    let d_u = costs[0].beta().len();
    let d_x = ws[0].len();
    let mut theta = DMatrix::zeros(d_u, d_x * p);
    let mut sq = 0.0;
    let mut out = vec![DMatrix::zeros(d_u, d_x * p)];
    for t in 1..costs.len() {
        let g = costs[t - 1].beta() * past_window(ws, t, p).transpose();
        sq += g.norm_squared();
        theta += &g;
        let lambda = 5f64.sqrt() / kappa * sq.sqrt();
        let n = theta.norm();
        let m = if n == 0.0 {
            DMatrix::zeros(d_u, d_x * p)
        } else if lambda > 0.0 && n / lambda <= kappa {
            &theta * (-1.0 / lambda)
        } else {
            &theta * (-kappa / n)
        };
        out.push(m);
    }
    out
}
