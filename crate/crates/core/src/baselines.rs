//! Gradient perturbation controller and the best static policy in hindsight.

use nalgebra::{DMatrix, DVector};

use crate::costs::{eval_cost, partial_coefficient, DisturbanceWindow, LinearCost, MemoryPowers};
use crate::error::{check_dim, Error, Result, Stage};
use crate::harness::{Controller, SlotFeedback, SlotOutcome};
use crate::oracle::Forecaster;
use crate::plant::{CostTrace, DisturbanceTrace, LtiSystem};

/// Euclidean projection onto the Frobenius ball of radius `kappa_m`.
pub fn project_ball(m: DMatrix<f64>, kappa_m: f64) -> DMatrix<f64> {
    let norm = m.norm();
    if norm > kappa_m {
        m * (kappa_m / norm)
    } else {
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpcState {
    pub m: DMatrix<f64>,
    pub eta: f64,
    /// Gradient bound the step size was tuned with.
    pub g_max: f64,
    pub kappa_m: f64,
}

impl GpcState {
    /// `eta = kappa_M / (g_max sqrt(T))`, times `scale`.
    pub fn tuned(m: DMatrix<f64>, kappa_m: f64, g_max: f64, horizon: usize, scale: f64) -> Result<Self> {
        if !(g_max > 0.0) {
            return Err(Error::config(format!("GPC gradient bound must be positive, got {g_max}")));
        }
        if !(scale > 0.0) {
            return Err(Error::config("GPC step scale must be positive"));
        }
        let eta = scale * kappa_m / (g_max * (horizon.max(1) as f64).sqrt());
        Ok(Self {
            m,
            eta,
            g_max,
            kappa_m,
        })
    }
}

/// One projected gradient step.
pub fn gpc_step(state: GpcState, gradient: &DMatrix<f64>) -> GpcState {
    let m = project_ball(state.m - gradient * state.eta, state.kappa_m);
    GpcState { m, ..state }
}

#[derive(Debug, Clone)]
pub struct GpcController {
    system: LtiSystem,
    powers: MemoryPowers,
    d: usize,
    p: usize,
    state: GpcState,
    disturbances: Vec<DVector<f64>>,
    slot: usize,
}

impl GpcController {
    /// Uses the surrogate loss truncated at memory `d`.
    pub fn new(system: &LtiSystem, d: usize, p: usize, state: GpcState) -> Result<Self> {
        check_dim("GPC policy rows", system.d_u(), state.m.nrows())?;
        check_dim("GPC policy columns", system.d_x() * p, state.m.ncols())?;
        Ok(Self {
            system: system.clone(),
            powers: MemoryPowers::new(system, d),
            d,
            p,
            state,
            disturbances: Vec::new(),
            slot: 1,
        })
    }

    pub fn state(&self) -> &GpcState {
        &self.state
    }

    /// Gradient at the current `M` of `c_t` evaluated on the truncated state
    /// with `M` held fixed over the memory: `sum_i G^(i)_t`.
    pub fn surrogate_gradient(&self, t: usize, cost: &LinearCost) -> Result<DMatrix<f64>> {
        let d_x = self.system.d_x();
        let mut g = DMatrix::zeros(self.system.d_u(), d_x * self.p);
        for i in 0..=self.d {
            let coef = partial_coefficient(i, cost, &self.powers)?;
            let window =
                DisturbanceWindow::ending_at(&self.disturbances, d_x, t as i64 - i as i64 - 1, self.p);
            g.ger(1.0, &coef, window.as_vector(), 1.0);
        }
        Ok(g)
    }
}

impl Controller for GpcController {
    fn name(&self) -> String {
        "gpc".into()
    }

    fn policy(&self) -> &DMatrix<f64> {
        &self.state.m
    }

    fn act(&self, t: usize) -> Result<DVector<f64>> {
        if t != self.slot {
            return Err(Error::logic(format!("GPC at slot {}, asked to act at {t}", self.slot)).at(t, Stage::Act));
        }
        let window = DisturbanceWindow::ending_at(&self.disturbances, self.system.d_x(), t as i64 - 1, self.p);
        Ok(&self.state.m * window.as_vector())
    }

    fn end_slot(
        &mut self,
        t: usize,
        feedback: &SlotFeedback<'_>,
        _forecaster: &mut dyn Forecaster,
    ) -> Result<SlotOutcome> {
        if t != self.slot {
            return Err(Error::logic(format!("GPC at slot {}, got feedback for {t}", self.slot))
                .at(t, Stage::ObserveCost));
        }
        let grad = self
            .surrogate_gradient(t, feedback.cost)
            .map_err(|e| e.at(t, Stage::ObserveCost))?;
        let w = self
            .system
            .recover_disturbance(feedback.x, feedback.u, feedback.x_next)
            .map_err(|e| e.at(t, Stage::RecordDisturbance))?;
        self.disturbances.push(w);
        self.state = gpc_step(self.state.clone(), &grad);
        self.slot += 1;
        Ok(SlotOutcome::default())
    }
}

/// Plays one fixed matrix forever.
#[derive(Debug, Clone)]
pub struct StaticController {
    label: String,
    d_x: usize,
    p: usize,
    m: DMatrix<f64>,
    system: LtiSystem,
    disturbances: Vec<DVector<f64>>,
}

impl StaticController {
    pub fn new(label: impl Into<String>, system: &LtiSystem, p: usize, m: DMatrix<f64>) -> Result<Self> {
        check_dim("static policy rows", system.d_u(), m.nrows())?;
        check_dim("static policy columns", system.d_x() * p, m.ncols())?;
        Ok(Self {
            label: label.into(),
            d_x: system.d_x(),
            p,
            m,
            system: system.clone(),
            disturbances: Vec::new(),
        })
    }
}

impl Controller for StaticController {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn policy(&self) -> &DMatrix<f64> {
        &self.m
    }

    fn act(&self, t: usize) -> Result<DVector<f64>> {
        let window = DisturbanceWindow::ending_at(&self.disturbances, self.d_x, t as i64 - 1, self.p);
        Ok(&self.m * window.as_vector())
    }

    fn end_slot(
        &mut self,
        t: usize,
        feedback: &SlotFeedback<'_>,
        _forecaster: &mut dyn Forecaster,
    ) -> Result<SlotOutcome> {
        let w = self
            .system
            .recover_disturbance(feedback.x, feedback.u, feedback.x_next)
            .map_err(|e| e.at(t, Stage::RecordDisturbance))?;
        self.disturbances.push(w);
        Ok(SlotOutcome::default())
    }
}

/// Per-slot costs of the exact rollout from `x_1 = 0` under a static `m`.
///
/// The controller sees the disturbances themselves rather than recovering
/// them from states, so this is also an independent check on the harness.
pub fn static_rollout_costs(
    system: &LtiSystem,
    costs: &CostTrace,
    disturbances: &DisturbanceTrace,
    m: &DMatrix<f64>,
    p: usize,
) -> Result<Vec<f64>> {
    check_dim("trace lengths", costs.len(), disturbances.len())?;
    let d_x = system.d_x();
    let ws = disturbances.as_slice();
    let mut x = DVector::zeros(d_x);
    let mut out = Vec::with_capacity(costs.len());
    for (k, cost) in costs.iter().enumerate() {
        let t = k as i64 + 1;
        let window = DisturbanceWindow::ending_at(ws, d_x, t - 1, p);
        let u = m * window.as_vector();
        out.push(eval_cost(cost, &x, &u)?);
        x = system.step(&x, &u, &ws[k])?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPolicy {
    pub m: DMatrix<f64>,
    /// Linear coefficient of the total cost: `J(M) = <theta, M> + J(0)`.
    pub theta: DMatrix<f64>,
    pub total_cost: f64,
}

/// Linear coefficient of the exact total cost of a static policy.
///
/// `u_s` reaches every later state through `A^(t-1-s) B`, so with the
/// backward costate `q_s = alpha_{s+1} + A^T q_{s+1}` (`q_T = 0`) the
/// coefficient is `sum_s (beta_s + B^T q_s) wbar_{s-1}^T`.
pub fn static_cost_coefficient(
    system: &LtiSystem,
    costs: &CostTrace,
    disturbances: &DisturbanceTrace,
    p: usize,
) -> Result<DMatrix<f64>> {
    check_dim("trace lengths", costs.len(), disturbances.len())?;
    let (d_x, d_u) = (system.d_x(), system.d_u());
    let ws = disturbances.as_slice();
    let a_t = system.a().transpose();
    let b_t = system.b().transpose();
    let mut theta = DMatrix::zeros(d_u, d_x * p);
    let mut q = DVector::zeros(d_x);
    let horizon = costs.len() as i64;
    for s in (1..=horizon).rev() {
        let cost = costs.get(s).expect("slot within horizon");
        check_dim("cost alpha", d_x, cost.alpha().len())?;
        check_dim("cost beta", d_u, cost.beta().len())?;
        let coef = cost.beta() + &b_t * &q;
        let window = DisturbanceWindow::ending_at(ws, d_x, s - 1, p);
        theta.ger(1.0, &coef, window.as_vector(), 1.0);
        q = cost.alpha() + &a_t * q;
    }
    Ok(theta)
}

/// Best static policy in hindsight over the ball of radius `kappa_m`.
pub fn optimal_static_policy(
    system: &LtiSystem,
    costs: &CostTrace,
    disturbances: &DisturbanceTrace,
    kappa_m: f64,
    p: usize,
) -> Result<BenchmarkPolicy> {
    if !(kappa_m > 0.0) {
        return Err(Error::config(format!("kappa_M must be positive, got {kappa_m}")));
    }
    let theta = static_cost_coefficient(system, costs, disturbances, p)?;
    let norm = theta.norm();
    let m = if norm > 0.0 {
        &theta * (-kappa_m / norm)
    } else {
        DMatrix::zeros(theta.nrows(), theta.ncols())
    };
    let total_cost = static_rollout_costs(system, costs, disturbances, &m, p)?.iter().sum();
    Ok(BenchmarkPolicy {
        m,
        theta,
        total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn gpc_step_examples() {
        let s = GpcState {
            m: m1(0.3),
            eta: 0.1,
            g_max: 1.0,
            kappa_m: 1.0,
        };
        assert_eq!(gpc_step(s.clone(), &m1(0.0)).m, m1(0.3));
        let s0 = GpcState { m: m1(0.0), ..s };
        assert!((gpc_step(s0.clone(), &m1(1.0)).m[(0, 0)] + 0.1).abs() < 1e-15);
        let s1 = GpcState { eta: 1.0, ..s0 };
        assert_eq!(gpc_step(s1, &m1(5.0)).m, m1(-1.0));
    }

    #[test]
    fn gpc_tuning() {
        let s = GpcState::tuned(m1(0.0), 1.0, 300.0, 1000, 1.0).unwrap();
        assert!((s.eta - 1.0 / (300.0 * 1000f64.sqrt())).abs() < 1e-18);
        assert!(GpcState::tuned(m1(0.0), 1.0, 0.0, 10, 1.0).is_err());
    }

    fn scalar_trace(alphas: &[f64], ws: &[f64]) -> (CostTrace, DisturbanceTrace) {
        let costs = alphas
            .iter()
            .map(|&a| LinearCost::new(DVector::from_element(1, a), DVector::zeros(1)))
            .collect();
        let ws = ws.iter().map(|&w| DVector::from_element(1, w)).collect();
        (CostTrace::new(costs), DisturbanceTrace::new(1, ws).unwrap())
    }

    #[test]
    fn zero_costs_give_zero_benchmark() {
        let sys = LtiSystem::new(m1(0.5), m1(1.0), 0.5, 1.0).unwrap();
        let (c, w) = scalar_trace(&[0.0; 5], &[1.0; 5]);
        let bench = optimal_static_policy(&sys, &c, &w, 1.0, 1).unwrap();
        assert_eq!(bench.m, m1(0.0));
        assert_eq!(bench.total_cost, 0.0);
    }

    #[test]
    fn coefficient_matches_rollout_differences() {
        let sys = LtiSystem::new(m1(0.5), m1(2.0), 0.5, 1.0).unwrap();
        let (c, w) = scalar_trace(&[1.0, -0.5, 0.3, 0.8], &[0.4, -1.0, 0.7, 0.2]);
        let theta = static_cost_coefficient(&sys, &c, &w, 1).unwrap();
        let j = |m: f64| -> f64 { static_rollout_costs(&sys, &c, &w, &m1(m), 1).unwrap().iter().sum() };
        let slope = j(1.0) - j(0.0);
        assert!((theta[(0, 0)] - slope).abs() < 1e-12);
    }
}
