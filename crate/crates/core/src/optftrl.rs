//! Optimistic follow-the-regularized-leader controller.
//!
//! The cost paid at slot `t` depends on the last `d + 1` decisions. Regrouping
//! the partial functions by the decision they depend on turns the problem into
//! a memoryless one whose feedback arrives `d` slots late: the forward
//! gradient `G_t = sum_j G^(j)_{t+j}` is only fully known at slot `t + d`.
//!
//! At the end of slot `t` the controller
//!
//! 1. records `G_{t-d}` (now fully observed) into the running sum `G_{1:t-d}`;
//! 2. compares the hint `H_{t-d}` it played earlier with the realised
//!    `G_{t-2d:t-d}` and feeds the error into the regularizer;
//! 3. builds `H_{t+1}`, an estimate of `G_{t+1-d:t+1}` that uses every
//!    partial gradient already observed and forecasts for the rest;
//! 4. plays `M_{t+1} = argmin_{||M|| <= kappa_M} <G_{1:t-d} + H_{t+1}, M> + lambda/2 ||M||^2`.
//!
//! The regularizer strength is
//! `lambda = (4/kappa_M) max_j Delta_{j-d+1:j} + (sqrt 5/kappa_M) sqrt(sum_i Delta_i^2)`,
//! so perfect hints leave the leader unregularized.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::costs::{partial_coefficient, DisturbanceWindow, LinearCost, MemoryPowers};
use crate::error::{check_dim, Error, Result, Stage};
use crate::harness::{Controller, SlotFeedback, SlotOutcome};
use crate::oracle::{Forecaster, PredictionBatch};
use crate::plant::LtiSystem;

/// Exact minimizer of `<theta, M> + lambda/2 ||M||^2` over the Frobenius ball
/// of radius `kappa_m`.
///
/// With `lambda = 0` the objective is linear and the minimizer sits on the
/// boundary, opposite `theta`; `theta = 0` yields `M = 0`.
pub fn regularized_leader(theta: &DMatrix<f64>, lambda: f64, kappa_m: f64) -> DMatrix<f64> {
    let norm = theta.norm();
    if norm == 0.0 {
        return DMatrix::zeros(theta.nrows(), theta.ncols());
    }
    if lambda > 0.0 && norm / lambda <= kappa_m {
        return theta * (-1.0 / lambda);
    }
    theta * (-kappa_m / norm)
}

/// The update with `theta = aggregate + hint`.
pub fn ftrl_step(
    aggregate: &DMatrix<f64>,
    hint: &DMatrix<f64>,
    lambda: f64,
    kappa_m: f64,
) -> Result<DMatrix<f64>> {
    check_dim("hint rows", aggregate.nrows(), hint.nrows())?;
    check_dim("hint columns", aggregate.ncols(), hint.ncols())?;
    if !(lambda >= 0.0) {
        return Err(Error::logic(format!("negative regularization {lambda}")));
    }
    Ok(regularized_leader(&(aggregate + hint), lambda, kappa_m))
}

/// Error of a forecasted partial gradient that entered a hint.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTerm {
    pub slot: i64,
    pub level: usize,
    coefficient: DVector<f64>,
    window_norm: f64,
}

/// `H_slot`, an estimate of `G_{slot-d:slot}`, together with the forecasted
/// terms it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct HintMatrix {
    pub slot: i64,
    pub matrix: DMatrix<f64>,
    pub predicted: Vec<PredictedTerm>,
}

/// Enumerates the `(decision slot, cost slot, level)` triples that make up
/// `G_{target-d:target}`, grouped by decision slot. Terms whose decision slot
/// is before 1 are dropped.
fn hint_layout(target: i64, d: usize) -> impl Iterator<Item = (i64, impl Iterator<Item = (i64, usize)>)> {
    (0..=d).filter_map(move |i| {
        let decision = target - d as i64 + i as i64;
        (decision >= 1).then(|| (decision, (0..=d).map(move |j| (decision + j as i64, j))))
    })
}

/// Everything the controller has seen: costs `c_1..c_t` (with their partial
/// coefficients at every level) and disturbances `w_1..w_t`.
#[derive(Debug, Clone)]
struct History {
    d_x: usize,
    p: usize,
    costs: Vec<LinearCost>,
    coefficients: Vec<Vec<DVector<f64>>>,
    disturbances: Vec<DVector<f64>>,
}

impl History {
    fn window(&self, end: i64) -> DisturbanceWindow {
        DisturbanceWindow::ending_at(&self.disturbances, self.d_x, end, self.p)
    }

    fn observed_coefficient(&self, slot: i64, level: usize) -> Result<&DVector<f64>> {
        if slot < 1 {
            return Err(Error::logic(format!("cost slot {slot} precedes the horizon")));
        }
        self.coefficients
            .get((slot - 1) as usize)
            .map(|levels| &levels[level])
            .ok_or_else(|| Error::logic(format!("cost of slot {slot} has not been observed")))
    }

    fn observed_slots(&self) -> i64 {
        self.costs.len() as i64
    }
}

/// Builds `H_target` from observed costs (slots `< target`) and `forecast`
/// (slots `>= target`). Fails if a needed observation or forecast is missing.
pub fn build_hint(
    target: i64,
    d: usize,
    powers: &MemoryPowers,
    observed_costs: &[LinearCost],
    disturbances: &[DVector<f64>],
    p: usize,
    forecast: &PredictionBatch,
) -> Result<HintMatrix> {
    let history = History {
        d_x: powers.d_x(),
        p,
        costs: observed_costs.to_vec(),
        coefficients: observed_costs
            .iter()
            .map(|c| (0..=d).map(|j| partial_coefficient(j, c, powers)).collect())
            .collect::<Result<_>>()?,
        disturbances: disturbances.to_vec(),
    };
    build_hint_from(target, d, powers, &history, forecast)
}

fn build_hint_from(
    target: i64,
    d: usize,
    powers: &MemoryPowers,
    history: &History,
    forecast: &PredictionBatch,
) -> Result<HintMatrix> {
    let d_u = powers.d_u();
    let cols = powers.d_x() * history.p;
    if history.observed_slots() < target - 1 {
        return Err(Error::logic(format!(
            "hint for slot {target} needs costs up to {}, have {}",
            target - 1,
            history.observed_slots()
        )));
    }
    let mut matrix = DMatrix::zeros(d_u, cols);
    let mut predicted = Vec::new();
    for (decision, terms) in hint_layout(target, d) {
        let window = history.window(decision - 1);
        let window_norm = window.norm();
        let mut row = DVector::zeros(d_u);
        for (slot, level) in terms {
            if slot < target {
                row += history.observed_coefficient(slot, level)?;
            } else {
                let cost = forecast.get(slot).ok_or_else(|| {
                    Error::logic(format!("no forecast for slot {slot} (hint for {target})"))
                })?;
                let coefficient = partial_coefficient(level, cost, powers)?;
                row += &coefficient;
                predicted.push(PredictedTerm {
                    slot,
                    level,
                    coefficient,
                    window_norm,
                });
            }
        }
        matrix.ger(1.0, &row, window.as_vector(), 1.0);
    }
    Ok(HintMatrix {
        slot: target,
        matrix,
        predicted,
    })
}

/// Hint errors witnessed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub slot: i64,
    /// `Delta_slot = ||G_{slot-d:slot} - H_slot||`
    pub delta: f64,
    /// Sum of the partial errors of every forecasted term in `H_slot`; the
    /// triangle inequality gives `delta <= partial_error_sum`.
    pub partial_error_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorLedger {
    d: usize,
    entries: Vec<LedgerEntry>,
    window: VecDeque<f64>,
    window_sum: f64,
    max_window: f64,
    sum_sq: f64,
    level_max: Vec<f64>,
}

impl ErrorLedger {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            entries: Vec::new(),
            window: VecDeque::with_capacity(d + 1),
            window_sum: 0.0,
            max_window: 0.0,
            sum_sq: 0.0,
            level_max: vec![0.0; d + 1],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Number of recorded slots; the next entry must be for slot `len + 1`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `max_{j <= n-1} Delta_{j-d+1:j}` where `n` is the latest slot.
    pub fn max_window_sum(&self) -> f64 {
        self.max_window
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.sum_sq
    }

    /// Largest partial error seen at each level.
    pub fn level_max(&self) -> &[f64] {
        &self.level_max
    }

    /// Appends `Delta_slot`. Slots must arrive in order starting at 1.
    pub fn record(&mut self, entry: LedgerEntry) -> Result<()> {
        let expected = self.entries.len() as i64 + 1;
        if entry.slot != expected {
            return Err(Error::logic(format!(
                "hint error for slot {} arrived, expected slot {expected}",
                entry.slot
            )));
        }
        if !(entry.delta >= 0.0) {
            return Err(Error::logic(format!("invalid hint error {}", entry.delta)));
        }
        // window_sum currently holds Delta_{n-d:n-1}, the window ending at n-1
        self.max_window = self.max_window.max(self.window_sum);
        if self.d > 0 {
            self.window.push_back(entry.delta);
            self.window_sum += entry.delta;
            if self.window.len() > self.d {
                let old = self.window.pop_front().unwrap_or(0.0);
                self.window_sum -= old;
            }
            // recompute to keep the running sum from drifting
            if self.entries.len() % 1024 == 1023 {
                self.window_sum = self.window.iter().sum();
            }
        }
        self.sum_sq += entry.delta * entry.delta;
        self.entries.push(entry);
        Ok(())
    }

    /// Appends a list of hint errors for slots `1, 2, ...` (used in tests and
    /// by the CLI checks).
    pub fn from_deltas(d: usize, deltas: &[f64]) -> Result<Self> {
        let mut ledger = Self::new(d);
        for (k, &delta) in deltas.iter().enumerate() {
            ledger.record(LedgerEntry {
                slot: k as i64 + 1,
                delta,
                partial_error_sum: delta,
            })?;
        }
        Ok(ledger)
    }

    fn note_level(&mut self, level: usize, err: f64) {
        if let Some(m) = self.level_max.get_mut(level) {
            *m = m.max(err);
        }
    }
}

/// Regularizer strength after the ledger's latest entry.
pub fn update_lambda(ledger: &ErrorLedger, kappa_m: f64) -> Result<f64> {
    if !(kappa_m > 0.0) {
        return Err(Error::config(format!("kappa_M must be positive, got {kappa_m}")));
    }
    Ok(4.0 / kappa_m * ledger.max_window_sum() + 5f64.sqrt() / kappa_m * ledger.sum_of_squares().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptFtrlParams {
    /// Memory / feedback delay.
    pub d: usize,
    /// Policy memory.
    pub p: usize,
    pub kappa_m: f64,
}

#[derive(Debug, Clone)]
pub struct OptFtrlController {
    system: LtiSystem,
    powers: MemoryPowers,
    params: OptFtrlParams,
    history: History,
    policy: DMatrix<f64>,
    /// `G_{1:t-d}`
    aggregate: DMatrix<f64>,
    /// `G_tau` for the decision slots still needed by pending hint checks.
    recent: VecDeque<(i64, DMatrix<f64>)>,
    pending: VecDeque<HintMatrix>,
    ledger: ErrorLedger,
    lambda: f64,
    lambdas: Vec<f64>,
    slot: i64,
}

impl OptFtrlController {
    pub fn new(system: &LtiSystem, params: OptFtrlParams) -> Result<Self> {
        if params.p == 0 {
            return Err(Error::config("policy memory p must be >= 1"));
        }
        if !(params.kappa_m > 0.0 && params.kappa_m.is_finite()) {
            return Err(Error::config(format!(
                "kappa_M must be positive, got {}",
                params.kappa_m
            )));
        }
        let (d_x, d_u) = (system.d_x(), system.d_u());
        let cols = d_x * params.p;
        // H_1 only involves windows before slot 1, which are all zero
        let first_hint = HintMatrix {
            slot: 1,
            matrix: DMatrix::zeros(d_u, cols),
            predicted: Vec::new(),
        };
        Ok(Self {
            system: system.clone(),
            powers: MemoryPowers::new(system, params.d),
            params,
            history: History {
                d_x,
                p: params.p,
                costs: Vec::new(),
                coefficients: Vec::new(),
                disturbances: Vec::new(),
            },
            policy: DMatrix::zeros(d_u, cols),
            aggregate: DMatrix::zeros(d_u, cols),
            recent: VecDeque::new(),
            pending: VecDeque::from([first_hint]),
            ledger: ErrorLedger::new(params.d),
            lambda: 0.0,
            lambdas: Vec::new(),
            slot: 1,
        })
    }

    pub fn params(&self) -> OptFtrlParams {
        self.params
    }

    pub fn ledger(&self) -> &ErrorLedger {
        &self.ledger
    }

    /// `lambda_{t+1}` for every completed slot `t`.
    pub fn lambda_history(&self) -> &[f64] {
        &self.lambdas
    }

    /// `G_{1:t-d}` after the latest completed slot.
    pub fn aggregate_gradient(&self) -> &DMatrix<f64> {
        &self.aggregate
    }

    /// Hints played but not yet checked against the truth.
    pub fn pending_hints(&self) -> impl Iterator<Item = &HintMatrix> {
        self.pending.iter()
    }

    /// `u_t = M_t wbar_{t-1}`.
    pub fn act(&self, t: i64) -> Result<DVector<f64>> {
        self.expect_slot(t)?;
        let window = self.history.window(t - 1);
        Ok(&self.policy * window.as_vector())
    }

    fn expect_slot(&self, t: i64) -> Result<()> {
        if t != self.slot {
            return Err(Error::logic(format!(
                "controller is at slot {}, got feedback for slot {t}",
                self.slot
            )));
        }
        Ok(())
    }

    /// Records `c_t` and, once its last contribution is known, `G_{t-d}`.
    pub fn observe_cost(&mut self, t: i64, cost: &LinearCost) -> Result<()> {
        self.expect_slot(t)?;
        if self.history.observed_slots() != t - 1 {
            return Err(Error::logic(format!("cost for slot {t} already recorded")));
        }
        check_dim("cost alpha", self.system.d_x(), cost.alpha().len())?;
        check_dim("cost beta", self.system.d_u(), cost.beta().len())?;
        let levels = (0..=self.params.d)
            .map(|j| partial_coefficient(j, cost, &self.powers))
            .collect::<Result<Vec<_>>>()?;
        self.history.costs.push(cost.clone());
        self.history.coefficients.push(levels);

        let decision = t - self.params.d as i64;
        if decision >= 1 {
            let g = self.forward_gradient(decision)?;
            self.aggregate += &g;
            self.recent.push_back((decision, g));
            let keep_from = decision - self.params.d as i64;
            while self.recent.front().is_some_and(|(s, _)| *s < keep_from) {
                self.recent.pop_front();
            }
        }
        Ok(())
    }

    /// `G_decision`, built in the same order as the hints so that a perfect
    /// forecast reproduces it bit for bit.
    fn forward_gradient(&self, decision: i64) -> Result<DMatrix<f64>> {
        let mut row = DVector::zeros(self.system.d_u());
        for j in 0..=self.params.d {
            row += self.history.observed_coefficient(decision + j as i64, j)?;
        }
        let window = self.history.window(decision - 1);
        let mut g = DMatrix::zeros(row.len(), window.len());
        g.ger(1.0, &row, window.as_vector(), 1.0);
        Ok(g)
    }

    /// Records `w_t` recovered from the observed transition.
    pub fn record_transition(
        &mut self,
        t: i64,
        x: &DVector<f64>,
        u: &DVector<f64>,
        x_next: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.expect_slot(t)?;
        if self.history.disturbances.len() as i64 != t - 1 {
            return Err(Error::logic(format!("disturbance for slot {t} already recorded")));
        }
        let w = self.system.recover_disturbance(x, u, x_next)?;
        self.history.disturbances.push(w.clone());
        Ok(w)
    }

    /// Checks `H_{t-d}` against the realised gradients and refreshes lambda.
    /// Returns the new ledger entry, if any.
    pub fn record_feedback(&mut self, t: i64) -> Result<Option<LedgerEntry>> {
        self.expect_slot(t)?;
        let slot = t - self.params.d as i64;
        if slot < 1 {
            return Ok(None);
        }
        let hint = self
            .pending
            .pop_front()
            .ok_or_else(|| Error::logic(format!("no pending hint for slot {slot}")))?;
        if hint.slot != slot {
            return Err(Error::logic(format!(
                "pending hint is for slot {}, feedback is for slot {slot}",
                hint.slot
            )));
        }
        let mut truth = DMatrix::zeros(hint.matrix.nrows(), hint.matrix.ncols());
        for (decision, _) in hint_layout(slot, self.params.d) {
            let g = self
                .recent
                .iter()
                .find(|(s, _)| *s == decision)
                .map(|(_, g)| g)
                .ok_or_else(|| Error::logic(format!("gradient of slot {decision} not retained")))?;
            truth += g;
        }
        let delta = (&truth - &hint.matrix).norm();

        let mut partial_error_sum = 0.0;
        for term in &hint.predicted {
            let actual = self.history.observed_coefficient(term.slot, term.level)?;
            let err = (actual - &term.coefficient).norm() * term.window_norm;
            partial_error_sum += err;
            self.ledger.note_level(term.level, err);
        }
        let entry = LedgerEntry {
            slot,
            delta,
            partial_error_sum,
        };
        self.ledger.record(entry.clone())?;
        self.lambda = update_lambda(&self.ledger, self.params.kappa_m)?;
        Ok(Some(entry))
    }

    /// Builds `H_{t+1}` from `forecast` and solves for `M_{t+1}`.
    pub fn plan(&mut self, t: i64, forecast: &PredictionBatch) -> Result<()> {
        self.expect_slot(t)?;
        let hint = build_hint_from(t + 1, self.params.d, &self.powers, &self.history, forecast)
            .map_err(|e| e.at(t as usize, Stage::BuildHint))?;
        self.policy = ftrl_step(&self.aggregate, &hint.matrix, self.lambda, self.params.kappa_m)
            .map_err(|e| e.at(t as usize, Stage::SolveUpdate))?;
        let norm = self.policy.norm();
        if !(norm <= self.params.kappa_m * (1.0 + 1e-9)) {
            return Err(Error::logic(format!(
                "update left the ball: ||M|| = {norm}, kappa_M = {}",
                self.params.kappa_m
            ))
            .at(t as usize, Stage::SolveUpdate));
        }
        self.pending.push_back(hint);
        self.lambdas.push(self.lambda);
        self.slot += 1;
        Ok(())
    }
}

impl Controller for OptFtrlController {
    fn name(&self) -> String {
        "optftrl".into()
    }

    fn policy(&self) -> &DMatrix<f64> {
        &self.policy
    }

    fn lambda(&self) -> Option<f64> {
        Some(self.lambda)
    }

    fn act(&self, t: usize) -> Result<DVector<f64>> {
        OptFtrlController::act(self, t as i64).map_err(|e| e.at(t, Stage::Act))
    }

    fn end_slot(
        &mut self,
        t: usize,
        feedback: &SlotFeedback<'_>,
        forecaster: &mut dyn Forecaster,
    ) -> Result<SlotOutcome> {
        let ti = t as i64;
        self.observe_cost(ti, feedback.cost)
            .map_err(|e| e.at(t, Stage::ObserveCost))?;
        self.record_transition(ti, feedback.x, feedback.u, feedback.x_next)
            .map_err(|e| e.at(t, Stage::RecordDisturbance))?;
        let entry = self
            .record_feedback(ti)
            .map_err(|e| e.at(t, Stage::UpdateRegularizer))?;
        let batch = forecaster
            .forecast(ti + 1, self.params.d + 1)
            .map_err(|e| e.at(t, Stage::ReceivePredictions))?;
        let hits = batch.hits().iter().filter(|&&h| h).count();
        let hit_rate = hits as f64 / batch.len().max(1) as f64;
        self.plan(ti, &batch)?;
        Ok(SlotOutcome {
            delta: entry.map(|e| e.delta),
            hit_rate: Some(hit_rate),
        })
    }
}
