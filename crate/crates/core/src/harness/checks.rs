//! Randomized self-checks run by `optctl test-lemmas`: gradients against
//! finite differences, gradient bounds, the truncation bound and the
//! regrouping identity.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::project_ball;
use crate::costs::{
    gradient_bound, lipschitz_bound, partial_gradient, partial_value, DisturbanceWindow, LinearCost,
    MemoryPowers,
};
use crate::dac::{compute_memory_d, truncated_state};
use crate::error::Result;
use crate::plant::{spectral_norm, LtiSystem};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-r..=r))
}

fn uniform_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-r..=r))
}

/// Vector of norm at most `r`.
fn ball_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DVector<f64> {
    let v = uniform_vec(rng, n, 1.0);
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    v * (r * rng.random_range(0.0..=1.0) / norm)
}

/// Random stable system with `d_x, d_u <= max_dim` and `||A||_op <= 1 - delta`.
pub fn random_system(rng: &mut ChaCha8Rng, max_dim: usize, delta: Option<f64>, w_max: f64) -> LtiSystem {
    let d_x = rng.random_range(1..=max_dim);
    let d_u = rng.random_range(1..=max_dim);
    let delta = delta.unwrap_or_else(|| rng.random_range(0.05..0.6));
    let raw = uniform_mat(rng, d_x, d_x, 1.0);
    let norm = spectral_norm(&raw);
    let scale = if norm > 0.0 {
        (1.0 - delta) * rng.random_range(0.5..=1.0) / norm
    } else {
        0.0
    };
    let b = uniform_mat(rng, d_x, d_u, 1.0);
    LtiSystem::new(raw * scale, b, delta, w_max).expect("generated system is stable")
}

/// Partial gradients against central differences of the partial values.
pub fn gradient_vs_finite_differences(samples: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let sys = random_system(&mut rng, 3, None, 1.0);
        let p = rng.random_range(1..=4);
        let level = rng.random_range(0..=5);
        let powers = MemoryPowers::new(&sys, 5);
        let cost = LinearCost::new(uniform_vec(&mut rng, sys.d_x(), 1.0), uniform_vec(&mut rng, sys.d_u(), 1.0));
        let window = DisturbanceWindow::new(uniform_vec(&mut rng, sys.d_x() * p, 1.0));
        let w_single = uniform_vec(&mut rng, sys.d_x(), 1.0);
        let m = uniform_mat(&mut rng, sys.d_u(), sys.d_x() * p, 0.5);
        let grad = partial_gradient(level, 0, &cost, &powers, &window)?.matrix();
        let h = 1e-5;
        let mut fd = DMatrix::zeros(m.nrows(), m.ncols());
        for idx in 0..m.len() {
            let (mut plus, mut minus) = (m.clone(), m.clone());
            plus[idx] += h;
            minus[idx] -= h;
            let fp = partial_value(level, &cost, &powers, &window, &w_single, &plus)?;
            let fm = partial_value(level, &cost, &powers, &window, &w_single, &minus)?;
            fd[idx] = (fp - fm) / (2.0 * h);
        }
        let err = (&grad - &fd).norm() / grad.norm().max(1e-8);
        worst = worst.max(err);
    }
    Ok(CheckOutcome {
        name: "partial gradients match central differences",
        passed: worst <= 1e-6,
        detail: format!("{samples} samples, worst relative error {worst:.3e}"),
    })
}

/// `||G^(i)|| <= g^(i)` on random costs and disturbances within the bounds.
pub fn gradient_bounds(samples: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut tightest = 0.0f64;
    for _ in 0..samples {
        let w_max = rng.random_range(0.1..=2.0);
        let sys = random_system(&mut rng, 3, None, w_max);
        let p = rng.random_range(1..=4);
        let level = rng.random_range(0..=5);
        let powers = MemoryPowers::new(&sys, 5);
        let (alpha_max, beta_max) = (rng.random_range(0.1..=2.0), rng.random_range(0.0..=2.0));
        let cost = LinearCost::new(ball_vec(&mut rng, sys.d_x(), alpha_max), ball_vec(&mut rng, sys.d_u(), beta_max));
        let mut stacked = DVector::zeros(sys.d_x() * p);
        for j in 0..p {
            stacked.rows_mut(j * sys.d_x(), sys.d_x()).copy_from(&ball_vec(&mut rng, sys.d_x(), w_max));
        }
        let window = DisturbanceWindow::new(stacked);
        let g = partial_gradient(level, 0, &cost, &powers, &window)?.norm();
        let bound = gradient_bound(level, &sys, alpha_max, beta_max, p);
        if g > bound * (1.0 + 1e-12) {
            violations += 1;
        }
        if bound > 0.0 {
            tightest = tightest.max(g / bound);
        }
    }
    Ok(CheckOutcome {
        name: "partial gradients within their bounds",
        passed: violations == 0,
        detail: format!("{samples} samples, {violations} violations, max ratio {tightest:.3}"),
    })
}

/// Truncated states within `eps/T` of the true ones and the cost gap within
/// `l eps`, for `d` from the memory rule.
pub fn truncation(traces: usize, horizon: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (epsilon, kappa_m) = (1.0, 1.0);
    let mut worst_state = 0.0f64;
    let mut worst_cost_ratio = 0.0f64;
    let mut passed = true;
    for _ in 0..traces {
        let w_max = rng.random_range(0.2..=1.5);
        let sys = random_system(&mut rng, 3, Some(0.1), w_max);
        let p = rng.random_range(1..=3);
        let d = compute_memory_d(&sys, kappa_m, p, horizon, epsilon)?.d;
        let powers = MemoryPowers::new(&sys, d);
        let (d_x, d_u) = (sys.d_x(), sys.d_u());
        let ws: Vec<_> = (0..horizon).map(|_| ball_vec(&mut rng, d_x, w_max)).collect();
        let mut m = project_ball(uniform_mat(&mut rng, d_u, d_x * p, 1.0), kappa_m);
        let mut policies = Vec::with_capacity(horizon);
        let (alpha_max, beta_max) = (1.0, 1.0);
        let costs: Vec<_> = (0..horizon)
            .map(|_| LinearCost::new(ball_vec(&mut rng, d_x, alpha_max), ball_vec(&mut rng, d_u, beta_max)))
            .collect();
        let mut x = DVector::zeros(d_x);
        let mut gap = 0.0;
        for t in 1..=horizon as i64 {
            m = project_ball(&m + uniform_mat(&mut rng, d_u, d_x * p, 0.2), kappa_m);
            policies.push(m.clone());
            let xhat = truncated_state(&powers, &policies, &ws, t, d, p)?;
            worst_state = worst_state.max((&xhat - &x).norm());
            let u = &m * DisturbanceWindow::ending_at(&ws, d_x, t - 1, p).as_vector();
            let cost = &costs[(t - 1) as usize];
            let mut split = 0.0;
            for i in 0..=d {
                let decision = t - i as i64;
                if decision < 1 {
                    break;
                }
                let window = DisturbanceWindow::ending_at(&ws, d_x, decision - 1, p);
                let w_single = if i >= 1 { ws[(decision - 1) as usize].clone() } else { DVector::zeros(d_x) };
                split += partial_value(i, cost, &powers, &window, &w_single, &policies[(decision - 1) as usize])?;
            }
            gap += (cost.alpha().dot(&x) + cost.beta().dot(&u) - split).abs();
            x = sys.step(&x, &u, &ws[(t - 1) as usize])?;
        }
        let l = lipschitz_bound(alpha_max, beta_max);
        worst_cost_ratio = worst_cost_ratio.max(gap / (l * epsilon));
        passed &= worst_state <= epsilon / horizon as f64 && gap <= l * epsilon;
    }
    Ok(CheckOutcome {
        name: "truncated state and cost within the truncation bound",
        passed,
        detail: format!(
            "{traces} traces of T={horizon}, max state gap {worst_state:.3e} (limit {:.3e}), max cost gap / (l eps) {worst_cost_ratio:.3e}",
            epsilon / horizon as f64
        ),
    })
}

/// `sum_t sum_i f_t^(i)(M_{t-i}) = sum_t sum_i f_{t+i}^(i)(M_t)` on random
/// instances.
pub fn regrouping_identity(instances: usize, horizon: usize, d: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let sys = random_system(&mut rng, 3, None, 1.0);
        let p = rng.random_range(1..=3);
        let powers = MemoryPowers::new(&sys, d);
        let (d_x, d_u) = (sys.d_x(), sys.d_u());
        let ws: Vec<_> = (0..horizon).map(|_| uniform_vec(&mut rng, d_x, 1.0)).collect();
        let costs: Vec<_> = (0..horizon)
            .map(|_| LinearCost::new(uniform_vec(&mut rng, d_x, 1.0), uniform_vec(&mut rng, d_u, 1.0)))
            .collect();
        let policies: Vec<_> = (0..horizon)
            .map(|_| project_ball(uniform_mat(&mut rng, d_u, d_x * p, 1.0), 1.0))
            .collect();
        let term = |t: i64, i: usize| -> Result<f64> {
            let decision = t - i as i64;
            if decision < 1 || t > horizon as i64 {
                return Ok(0.0);
            }
            let window = DisturbanceWindow::ending_at(&ws, d_x, decision - 1, p);
            let w_single = if i >= 1 { ws[(decision - 1) as usize].clone() } else { DVector::zeros(d_x) };
            partial_value(i, &costs[(t - 1) as usize], &powers, &window, &w_single, &policies[(decision - 1) as usize])
        };
        let (mut by_cost, mut by_decision) = (0.0, 0.0);
        for t in 1..=horizon as i64 {
            for i in 0..=d {
                by_cost += term(t, i)?;
                by_decision += term(t + i as i64, i)?;
            }
        }
        worst = worst.max((by_cost - by_decision).abs());
    }
    Ok(CheckOutcome {
        name: "memory costs regroup into forward functions",
        passed: worst <= 1e-9,
        detail: format!("{instances} instances of T={horizon}, d={d}, max gap {worst:.3e}"),
    })
}

/// The full suite with the default sizes.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        gradient_vs_finite_differences(1000, seed)?,
        gradient_bounds(1000, seed.wrapping_add(1))?,
        truncation(20, 500, seed.wrapping_add(2))?,
        regrouping_identity(20, 50, 3, seed.wrapping_add(3))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        assert!(gradient_vs_finite_differences(50, 1).unwrap().passed);
        assert!(gradient_bounds(200, 2).unwrap().passed);
        assert!(truncation(2, 120, 3).unwrap().passed);
        assert!(regrouping_identity(3, 20, 3, 4).unwrap().passed);
    }

    #[test]
    fn random_systems_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let sys = random_system(&mut rng, 3, None, 1.0);
            assert!(spectral_norm(sys.a()) <= 1.0 - sys.delta() + 1e-12);
        }
    }
}
