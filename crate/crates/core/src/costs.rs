//! Linear costs and their decomposition into memoryless partial functions.
//!
//! Under a disturbance-action policy the state is linear in the past
//! parameter matrices, so the cost paid at slot `t` splits into terms
//! `f_t^(i)(M_{t-i})`, one per memory offset `i`:
//!
//! ```text
//! f_t^(0)(M) = <beta_t,  M wbar_{t-1}>
//! f_t^(i)(M) = <alpha_t, A^(i-1) (B M wbar_{t-i-1} + w_{t-i})>      i >= 1
//! ```
//!
//! where `wbar_k = (w_k, w_{k-1}, ..., w_{k-p+1})`. Every partial gradient is
//! therefore an outer product `coef * wbar^T`, which is how
//! [`PartialGradient`] stores it.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::plant::LtiSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCost {
    alpha: DVector<f64>,
    beta: DVector<f64>,
}

impl LinearCost {
    pub fn new(alpha: DVector<f64>, beta: DVector<f64>) -> Self {
        Self { alpha, beta }
    }

    pub fn zero(d_x: usize, d_u: usize) -> Self {
        Self::new(DVector::zeros(d_x), DVector::zeros(d_u))
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }
}

/// `<alpha, x> + <beta, u>`.
pub fn eval_cost(cost: &LinearCost, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_dim("cost alpha vs state", cost.alpha.len(), x.len())?;
    check_dim("cost beta vs action", cost.beta.len(), u.len())?;
    Ok(cost.alpha.dot(x) + cost.beta.dot(u))
}

/// Lipschitz constant of a linear cost bounded by `alpha_max`, `beta_max`.
pub fn lipschitz_bound(alpha_max: f64, beta_max: f64) -> f64 {
    alpha_max.hypot(beta_max)
}

/// Stacked disturbances `(w_k, w_{k-1}, ..., w_{k-p+1})`, zero-padded for
/// non-positive slots.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceWindow(DVector<f64>);

impl DisturbanceWindow {
    pub fn new(stacked: DVector<f64>) -> Self {
        Self(stacked)
    }

    /// Window ending at slot `end`, read from a 1-based history
    /// (`history[0]` is `w_1`).
    pub fn ending_at(history: &[DVector<f64>], d_x: usize, end: i64, p: usize) -> Self {
        let mut stacked = DVector::zeros(d_x * p);
        for j in 0..p {
            let slot = end - j as i64;
            if slot < 1 {
                break;
            }
            if let Some(w) = history.get((slot - 1) as usize) {
                stacked.rows_mut(j * d_x, d_x).copy_from(w);
            }
        }
        Self(stacked)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Cached powers `A^k` and gains `B^T (A^k)^T` for `k < max_level`.
#[derive(Debug, Clone)]
pub struct MemoryPowers {
    b: DMatrix<f64>,
    powers: Vec<DMatrix<f64>>,
    gains: Vec<DMatrix<f64>>,
}

impl MemoryPowers {
    /// Supports partial functions of level `0..=max_level`.
    pub fn new(system: &LtiSystem, max_level: usize) -> Self {
        let d_x = system.d_x();
        let mut powers = Vec::with_capacity(max_level);
        let mut cur = DMatrix::identity(d_x, d_x);
        for _ in 0..max_level {
            let next = system.a() * &cur;
            powers.push(std::mem::replace(&mut cur, next));
        }
        let bt = system.b().transpose();
        let gains = powers.iter().map(|ak| &bt * ak.transpose()).collect();
        Self {
            b: system.b().clone(),
            powers,
            gains,
        }
    }

    pub fn max_level(&self) -> usize {
        self.powers.len()
    }

    pub fn d_x(&self) -> usize {
        self.b.nrows()
    }

    pub fn d_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `A^k` for `k < max_level`.
    pub fn a_power(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.powers.get(k)
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level > self.max_level() {
            return Err(Error::logic(format!(
                "partial level {level} exceeds cached memory {}",
                self.max_level()
            )));
        }
        Ok(())
    }
}

/// `f_t^(level)(M)`; `w_single` is `w_{t-level}` and is ignored at level 0.
pub fn partial_value(
    level: usize,
    cost: &LinearCost,
    powers: &MemoryPowers,
    window: &DisturbanceWindow,
    w_single: &DVector<f64>,
    m: &DMatrix<f64>,
) -> Result<f64> {
    powers.check_level(level)?;
    check_dim("policy rows", powers.d_u(), m.nrows())?;
    check_dim("policy columns vs window", window.len(), m.ncols())?;
    let action = m * window.as_vector();
    if level == 0 {
        check_dim("cost beta", powers.d_u(), cost.beta.len())?;
        return Ok(cost.beta.dot(&action));
    }
    check_dim("cost alpha", powers.d_x(), cost.alpha.len())?;
    check_dim("single disturbance", powers.d_x(), w_single.len())?;
    let inner = &powers.b * action + w_single;
    Ok(cost.alpha.dot(&(&powers.powers[level - 1] * inner)))
}

/// `d f_t^(level) / dM`, stored as `coefficient * window^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialGradient {
    pub level: usize,
    pub slot: i64,
    coefficient: DVector<f64>,
    window: DVector<f64>,
}

impl PartialGradient {
    pub fn coefficient(&self) -> &DVector<f64> {
        &self.coefficient
    }

    pub fn window(&self) -> &DVector<f64> {
        &self.window
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.coefficient * self.window.transpose()
    }

    /// Frobenius norm; exact for a rank-one matrix.
    pub fn norm(&self) -> f64 {
        self.coefficient.norm() * self.window.norm()
    }

    pub fn add_to(&self, acc: &mut DMatrix<f64>) {
        acc.ger(1.0, &self.coefficient, &self.window, 1.0);
    }
}

/// Row factor of the partial gradient: `beta` at level 0, otherwise
/// `B^T (A^(level-1))^T alpha`.
pub fn partial_coefficient(
    level: usize,
    cost: &LinearCost,
    powers: &MemoryPowers,
) -> Result<DVector<f64>> {
    powers.check_level(level)?;
    if level == 0 {
        check_dim("cost beta", powers.d_u(), cost.beta.len())?;
        Ok(cost.beta.clone())
    } else {
        check_dim("cost alpha", powers.d_x(), cost.alpha.len())?;
        Ok(&powers.gains[level - 1] * &cost.alpha)
    }
}

/// Gradient of `f_slot^(level)`; `window` must be `wbar_{slot-level-1}`.
pub fn partial_gradient(
    level: usize,
    slot: i64,
    cost: &LinearCost,
    powers: &MemoryPowers,
    window: &DisturbanceWindow,
) -> Result<PartialGradient> {
    Ok(PartialGradient {
        level,
        slot,
        coefficient: partial_coefficient(level, cost, powers)?,
        window: window.as_vector().clone(),
    })
}

/// `g^(0) = beta p w`, `g^(i) = alpha kappa_B p w (1-delta)^(i-1)`.
pub fn gradient_bound(level: usize, system: &LtiSystem, alpha_max: f64, beta_max: f64, p: usize) -> f64 {
    let pw = p as f64 * system.w_max();
    if level == 0 {
        beta_max * pw
    } else {
        alpha_max * system.kappa_b() * pw * (1.0 - system.delta()).powi(level as i32 - 1)
    }
}

/// `sum_{i=0}^{d} g^(i)`, a bound on the full forward gradient.
pub fn forward_gradient_bound(d: usize, system: &LtiSystem, alpha_max: f64, beta_max: f64, p: usize) -> f64 {
    (0..=d)
        .map(|i| gradient_bound(i, system, alpha_max, beta_max, p))
        .sum()
}

/// Worst-case per-slot hint error `2 beta p w + 2 (1+delta) alpha kappa_B p w / delta^2`.
pub fn hint_error_ceiling(system: &LtiSystem, alpha_max: f64, beta_max: f64, p: usize) -> f64 {
    let pw = p as f64 * system.w_max();
    let delta = system.delta();
    2.0 * beta_max * pw + 2.0 * (1.0 + delta) * alpha_max * system.kappa_b() * pw / (delta * delta)
}

/// `G_t = sum_i G^(i)_{t+i}`. Expects levels `0..=d` in order.
pub fn forward_gradient(
    partials: &[Option<PartialGradient>],
    d_u: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    if partials.is_empty() {
        return Err(Error::logic("forward gradient needs at least the level-0 term"));
    }
    let mut acc = DMatrix::zeros(d_u, cols);
    for (i, g) in partials.iter().enumerate() {
        let g = g
            .as_ref()
            .ok_or_else(|| Error::logic(format!("missing partial gradient at level {i}")))?;
        if g.level != i {
            return Err(Error::logic(format!(
                "partial at position {i} has level {}",
                g.level
            )));
        }
        check_dim("partial rows", d_u, g.coefficient.len())?;
        check_dim("partial columns", cols, g.window.len())?;
        g.add_to(&mut acc);
    }
    Ok(acc)
}
