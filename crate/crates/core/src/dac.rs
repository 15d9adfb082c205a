//! Disturbance-action policies `u_t = sum_j M^[j] w_{t-j}` and the truncated
//! state used to make the cost depend on a bounded number of past decisions.

use nalgebra::{DMatrix, DVector};

use crate::costs::{DisturbanceWindow, MemoryPowers};
use crate::error::{check_dim, Error, Result};
use crate::plant::{slot_value, LtiSystem};

const BALL_SLACK: f64 = 1e-9;

/// Stacked parameters `[M^[1] | ... | M^[p]]` inside the Frobenius ball of
/// radius `kappa_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DacPolicy {
    m: DMatrix<f64>,
    p: usize,
    kappa_m: f64,
}

impl DacPolicy {
    pub fn new(m: DMatrix<f64>, p: usize, kappa_m: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::config("policy memory p must be >= 1"));
        }
        if !(kappa_m > 0.0 && kappa_m.is_finite()) {
            return Err(Error::config(format!("kappa_M must be positive, got {kappa_m}")));
        }
        if !m.ncols().is_multiple_of(p) {
            return Err(Error::config(format!(
                "policy has {} columns, not a multiple of p = {p}",
                m.ncols()
            )));
        }
        let norm = m.norm();
        if norm > kappa_m * (1.0 + BALL_SLACK) {
            return Err(Error::config(format!(
                "policy norm {norm} exceeds kappa_M = {kappa_m}"
            )));
        }
        Ok(Self { m, p, kappa_m })
    }

    pub fn zero(d_u: usize, d_x: usize, p: usize, kappa_m: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(d_u, d_x * p), p, kappa_m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kappa_m(&self) -> f64 {
        self.kappa_m
    }

    pub fn norm(&self) -> f64 {
        self.m.norm()
    }
}

/// `u_t = M_t wbar_{t-1}`.
pub fn compute_action(policy: &DacPolicy, window: &DisturbanceWindow) -> Result<DVector<f64>> {
    check_dim("policy columns vs window", policy.m.ncols(), window.len())?;
    Ok(&policy.m * window.as_vector())
}

/// Memory length and the quantities it was derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryConfig {
    pub d: usize,
    pub epsilon: f64,
    /// `w (kappa_B kappa_M p + 1)`
    pub z: f64,
}

/// Smallest `d` with `d >= (1/delta) ln(z T / (delta eps))`, where
/// `z = w (kappa_B kappa_M p + 1)`. Clamped at zero.
pub fn compute_memory_d(
    system: &LtiSystem,
    kappa_m: f64,
    p: usize,
    horizon: usize,
    epsilon: f64,
) -> Result<MemoryConfig> {
    if horizon == 0 {
        return Err(Error::config("horizon must be >= 1"));
    }
    let z = system.w_max() * (system.kappa_b() * kappa_m * p as f64 + 1.0);
    let d = memory_length(z, system.delta(), epsilon, horizon as f64)?;
    Ok(MemoryConfig { d, epsilon, z })
}

/// The raw rule behind [`compute_memory_d`].
pub fn memory_length(z: f64, delta: f64, epsilon: f64, horizon: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::config(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(horizon >= 1.0) {
        return Err(Error::config("horizon must be >= 1"));
    }
    let arg = z * horizon / (delta * epsilon);
    if !(arg > 1.0) {
        return Ok(0);
    }
    let bound = arg.ln() / delta;
    if !bound.is_finite() {
        return Err(Error::config("memory length overflows"));
    }
    Ok(bound.ceil() as usize)
}

/// `(z/delta) (1-delta)^d`: ceiling on `||xhat_t - x_t||` for memory `d`.
pub fn truncation_bound(z: f64, delta: f64, d: usize) -> f64 {
    z / delta * (1.0 - delta).powi(d as i32)
}

/// State reached at slot `t` from `x_{t-d} = 0` under the recorded policies:
///
/// `xhat_t = sum_{i<d} A^i (B M_{t-i-1} wbar_{t-i-2} + w_{t-i-1})`.
///
/// `policies[k]` is `M_{k+1}` and `disturbances[k]` is `w_{k+1}`; entries at
/// non-positive slots count as zero. `powers` must cache at least `d` powers.
pub fn truncated_state(
    powers: &MemoryPowers,
    policies: &[DMatrix<f64>],
    disturbances: &[DVector<f64>],
    t: i64,
    d: usize,
    p: usize,
) -> Result<DVector<f64>> {
    let (d_x, d_u) = (powers.d_x(), powers.d_u());
    let mut x = DVector::zeros(d_x);
    for i in 0..d {
        let a_i = powers
            .a_power(i)
            .ok_or_else(|| Error::logic(format!("A^{i} not cached")))?;
        let decision = t - i as i64 - 1;
        let mut inner = slot_value(disturbances, d_x, decision);
        if decision >= 1 {
            if let Some(m) = policies.get((decision - 1) as usize) {
                check_dim("policy rows", d_u, m.nrows())?;
                let window = DisturbanceWindow::ending_at(disturbances, d_x, decision - 1, p);
                check_dim("policy columns", window.len(), m.ncols())?;
                inner += powers.b() * (m * window.as_vector());
            }
        }
        x += a_i * inner;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn action_examples() {
        let zero = DacPolicy::zero(2, 2, 1, 1.0).unwrap();
        let win = DisturbanceWindow::new(v(&[1.0, 1.0]));
        assert_eq!(compute_action(&zero, &win).unwrap(), v(&[0.0, 0.0]));

        let id = DacPolicy::new(DMatrix::identity(2, 2), 1, 2.0).unwrap();
        assert_eq!(compute_action(&id, &win).unwrap(), v(&[1.0, 1.0]));

        let two = DacPolicy::new(DMatrix::from_row_slice(1, 2, &[0.5, 0.25]), 2, 1.0).unwrap();
        let win = DisturbanceWindow::new(v(&[1.0, 2.0]));
        assert_eq!(compute_action(&two, &win).unwrap(), v(&[1.0]));
    }

    #[test]
    fn policy_outside_ball_is_rejected() {
        assert!(DacPolicy::new(DMatrix::identity(2, 2), 1, 1.0).is_err());
        assert!(DacPolicy::new(DMatrix::zeros(1, 3), 2, 1.0).is_err());
        assert!(DacPolicy::new(DMatrix::zeros(1, 2), 2, 0.0).is_err());
    }

    #[test]
    fn memory_length_examples() {
        // z T / (delta eps) == 1
        assert_eq!(memory_length(0.1, 0.1, 1.0, 1.0).unwrap(), 0);
        let sys = LtiSystem::new(
            DMatrix::identity(2, 2) * 0.9,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            0.1,
            2f64.sqrt(),
        )
        .unwrap();
        let cfg = compute_memory_d(&sys, 1.0, 10, 1000, 1.0).unwrap();
        assert_eq!(cfg.d, 120);
        assert!((cfg.z - 2f64.sqrt() * 11.0).abs() < 1e-12);
        assert_eq!(memory_length(1.0, 0.5, 1.0, 5f64.exp()).unwrap(), 12);
        assert!(memory_length(1.0, 0.0, 1.0, 10.0).is_err());
        assert!(memory_length(1.0, 0.5, 0.0, 10.0).is_err());
    }

    #[test]
    fn truncated_state_of_zero_disturbance_is_zero() {
        let sys = LtiSystem::reference(1.0);
        let pw = MemoryPowers::new(&sys, 5);
        let ws = vec![DVector::zeros(2); 8];
        let ms = vec![DMatrix::from_element(2, 4, 0.3); 8];
        let x = truncated_state(&pw, &ms, &ws, 8, 5, 2).unwrap();
        assert_eq!(x, DVector::zeros(2));
    }

    #[test]
    fn truncated_state_matches_rollout_before_truncation() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.4]),
            DMatrix::from_row_slice(2, 1, &[1.0, -0.5]),
            0.3,
            2.0,
        )
        .unwrap();
        let (p, d) = (2, 4);
        let pw = MemoryPowers::new(&sys, d);
        let ws: Vec<_> = (0..6).map(|k| v(&[(k as f64).sin(), (k as f64 * 0.7).cos()])).collect();
        let ms: Vec<_> = (0..6)
            .map(|k| DMatrix::from_fn(1, 4, |_, j| 0.1 * (k + j) as f64 - 0.2))
            .collect();
        let mut x = DVector::zeros(2);
        for t in 1..=(d as i64 + 1) {
            let xhat = truncated_state(&pw, &ms, &ws, t, d, p).unwrap();
            assert!((&xhat - &x).norm() < 1e-12, "t={t}");
            let win = DisturbanceWindow::ending_at(&ws, 2, t - 1, p);
            let u = &ms[(t - 1) as usize] * win.as_vector();
            x = sys.step(&x, &u, &ws[(t - 1) as usize]).unwrap();
        }
    }
}
