//! Rollouts, policy regret and multi-seed experiments.

mod config;
pub mod checks;
mod report;

pub use config::{CustomScenario, FileConfig, MemorySetting, OracleChoice, RunSettings};
pub use report::{emit_report, read_csv, render_plot, render_summary, write_csv};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{optimal_static_policy, GpcController, GpcState, StaticController};
use crate::costs::{eval_cost, forward_gradient_bound, LinearCost};
use crate::dac::compute_memory_d;
use crate::error::{Error, Result};
use crate::optftrl::{OptFtrlController, OptFtrlParams};
use crate::oracle::{Forecaster, Oracle, OracleKind, PredictionBatch, TraceForecaster};
use crate::plant::{scenario_trace, CostTrace, DisturbanceTrace, LtiSystem, ScenarioConfig, ScenarioId};

/// What a controller observes at the end of slot `t`.
#[derive(Debug, Clone, Copy)]
pub struct SlotFeedback<'a> {
    pub cost: &'a LinearCost,
    pub x: &'a DVector<f64>,
    pub u: &'a DVector<f64>,
    pub x_next: &'a DVector<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlotOutcome {
    /// Hint error that became measurable this slot.
    pub delta: Option<f64>,
    /// Fraction of the forecasts received this slot that matched the truth.
    pub hit_rate: Option<f64>,
}

/// An online disturbance-action controller.
pub trait Controller {
    fn name(&self) -> String;

    /// Parameters `M_t` used for the current slot.
    fn policy(&self) -> &DMatrix<f64>;

    /// Regularization behind the current policy, when the controller has one.
    fn lambda(&self) -> Option<f64> {
        None
    }

    fn act(&self, t: usize) -> Result<DVector<f64>>;

    /// Consumes the slot's feedback and commits `M_{t+1}`.
    fn end_slot(
        &mut self,
        t: usize,
        feedback: &SlotFeedback<'_>,
        forecaster: &mut dyn Forecaster,
    ) -> Result<SlotOutcome>;
}

/// Forecaster for controllers that ignore forecasts.
pub struct NoForecast;

impl Forecaster for NoForecast {
    fn forecast(&mut self, first_slot: i64, _len: usize) -> Result<PredictionBatch> {
        PredictionBatch::new(first_slot, Vec::new(), Vec::new())
    }
}

/// Per-slot trajectory of one controller.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub costs: Vec<f64>,
    pub lambdas: Vec<Option<f64>>,
    pub deltas: Vec<Option<f64>>,
    pub policy_norms: Vec<f64>,
    pub hit_rates: Vec<Option<f64>>,
    pub final_policy: Option<DMatrix<f64>>,
}

/// Runs `controller` on the plant from `x_1 = 0`.
pub fn rollout(
    system: &LtiSystem,
    costs: &CostTrace,
    disturbances: &DisturbanceTrace,
    controller: &mut dyn Controller,
    forecaster: &mut dyn Forecaster,
) -> Result<Rollout> {
    if costs.len() != disturbances.len() {
        return Err(Error::config(format!(
            "cost trace has {} slots, disturbance trace {}",
            costs.len(),
            disturbances.len()
        )));
    }
    let horizon = costs.len();
    let mut out = Rollout {
        costs: Vec::with_capacity(horizon),
        lambdas: Vec::with_capacity(horizon),
        deltas: Vec::with_capacity(horizon),
        policy_norms: Vec::with_capacity(horizon),
        hit_rates: Vec::with_capacity(horizon),
        final_policy: None,
    };
    let mut x = DVector::zeros(system.d_x());
    for t in 1..=horizon {
        let cost = costs.get(t as i64).expect("slot within horizon");
        out.policy_norms.push(controller.policy().norm());
        out.lambdas.push(controller.lambda());
        let u = controller.act(t)?;
        out.costs.push(eval_cost(cost, &x, &u)?);
        let w = disturbances.get(t as i64);
        let x_next = system.step(&x, &u, &w)?;
        let feedback = SlotFeedback {
            cost,
            x: &x,
            u: &u,
            x_next: &x_next,
        };
        let outcome = controller.end_slot(t, &feedback, forecaster)?;
        out.deltas.push(outcome.delta);
        out.hit_rates.push(outcome.hit_rate);
        x = x_next;
    }
    out.final_policy = Some(controller.policy().clone());
    Ok(out)
}

/// Prefix sums `R_t` of the cost gap and the averages `R_t / t`.
pub fn policy_regret(learner: &[f64], benchmark: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if learner.len() != benchmark.len() {
        return Err(Error::logic(format!(
            "learner has {} costs, benchmark {}",
            learner.len(),
            benchmark.len()
        )));
    }
    let mut acc = 0.0;
    let regret: Vec<f64> = learner
        .iter()
        .zip(benchmark)
        .map(|(l, b)| {
            acc += l - b;
            acc
        })
        .collect();
    let avg = regret
        .iter()
        .enumerate()
        .map(|(k, r)| r / (k + 1) as f64)
        .collect();
    Ok((regret, avg))
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: usize,
    pub cost_learner: f64,
    pub cost_benchmark: f64,
    pub regret: f64,
    pub avg_regret: f64,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    #[serde(rename = "M_norm")]
    pub m_norm: f64,
}

/// Builds the CSV rows for a rollout measured against `benchmark` costs.
pub fn slot_records(run: &Rollout, benchmark: &[f64]) -> Result<Vec<SlotRecord>> {
    let (regret, avg) = policy_regret(&run.costs, benchmark)?;
    Ok((0..run.costs.len())
        .map(|k| SlotRecord {
            t: k + 1,
            cost_learner: run.costs[k],
            cost_benchmark: benchmark[k],
            regret: regret[k],
            avg_regret: avg[k],
            lambda: run.lambdas[k],
            delta: run.deltas[k],
            m_norm: run.policy_norms[k],
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerSpec {
    /// Uses the experiment's oracle unless one is given.
    OptFtrl(Option<OracleKind>),
    Gpc,
    /// Replays the best static policy in hindsight.
    Optimal,
}

impl ControllerSpec {
    pub fn label(&self, default_oracle: OracleKind) -> String {
        match self {
            ControllerSpec::OptFtrl(kind) => match kind.unwrap_or(default_oracle) {
                OracleKind::Bernoulli { rho } => format!("optftrl(rho={rho})"),
                other => format!("optftrl({other})"),
            },
            ControllerSpec::Gpc => "gpc".into(),
            ControllerSpec::Optimal => "optimal".into(),
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl std::str::FromStr for ControllerSpec {
    type Err = Error;

    /// `gpc`, `optimal`, `optftrl` or `optftrl:<oracle>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "gpc" => Ok(ControllerSpec::Gpc),
            "optimal" => Ok(ControllerSpec::Optimal),
            "optftrl" => Ok(ControllerSpec::OptFtrl(None)),
            _ => match s.strip_prefix("optftrl:") {
                Some(oracle) => Ok(ControllerSpec::OptFtrl(Some(oracle.parse()?))),
                None => Err(Error::config(format!("unknown controller `{s}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub controllers: Vec<ControllerSpec>,
    pub oracle: OracleKind,
    pub memory: MemorySetting,
    pub p: usize,
    pub kappa_m: f64,
    pub epsilon: f64,
    /// Seeds run are `seed, seed + 1, ...`.
    pub replications: usize,
    /// Gradient bound for tuning GPC; `None` picks the reference value in
    /// reference scenarios with a fixed memory, and the analytic bound otherwise.
    pub gpc_gradient_bound: Option<f64>,
    pub gpc_step_scale: f64,
}

/// Gradient bound quoted for the reference experiments.
pub const REFERENCE_GRADIENT_BOUND: f64 = 300.0;

impl ExperimentConfig {
    /// Reference setup: `p = d = 10`, `kappa_M = 1`, five seeds.
    pub fn reference(scenario: ScenarioId, horizon: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            scenario: ScenarioConfig::reference(scenario, horizon, seed)?,
            controllers: vec![
                ControllerSpec::Gpc,
                ControllerSpec::OptFtrl(None),
                ControllerSpec::Optimal,
            ],
            oracle: OracleKind::Bernoulli { rho: 0.9 },
            memory: MemorySetting::Fixed(10),
            p: 10,
            kappa_m: 1.0,
            epsilon: 1.0,
            replications: 5,
            gpc_gradient_bound: None,
            gpc_step_scale: 1.0,
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replications as u64)
            .map(|k| self.scenario.seed.wrapping_add(k))
            .collect()
    }

    pub fn memory_d(&self, system: &LtiSystem) -> Result<usize> {
        match self.memory {
            MemorySetting::Fixed(d) => Ok(d),
            MemorySetting::Auto => Ok(compute_memory_d(
                system,
                self.kappa_m,
                self.p,
                self.scenario.horizon.max(1),
                self.epsilon,
            )?
            .d),
        }
    }

    fn reference_mode(&self) -> bool {
        self.scenario.scenario != ScenarioId::Custom && matches!(self.memory, MemorySetting::Fixed(_))
    }

    pub fn gpc_bound(&self, system: &LtiSystem, d: usize) -> f64 {
        match self.gpc_gradient_bound {
            Some(g) => g,
            None if self.reference_mode() => REFERENCE_GRADIENT_BOUND,
            None => forward_gradient_bound(
                d,
                system,
                self.scenario.alpha_max(),
                self.scenario.beta_max(),
                self.p,
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.oracle.validate()?;
        if self.controllers.is_empty() {
            return Err(Error::config("no controllers requested"));
        }
        if self.p == 0 {
            return Err(Error::config("p must be >= 1"));
        }
        if !(self.kappa_m > 0.0 && self.kappa_m.is_finite()) {
            return Err(Error::config("kappa_M must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.replications == 0 {
            return Err(Error::config("at least one replication is required"));
        }
        Ok(())
    }
}

/// Outcome of one controller on one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRun {
    pub label: String,
    pub seed: u64,
    pub records: Vec<SlotRecord>,
    pub hit_rates: Vec<Option<f64>>,
    pub total_cost: f64,
    pub final_policy: Option<DMatrix<f64>>,
    pub failure: Option<String>,
}

impl ControllerRun {
    /// Negative accumulated cost.
    pub fn reward(&self) -> f64 {
        -self.total_cost
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.records.last().map(|r| r.regret)
    }

    pub fn final_avg_regret(&self) -> Option<f64> {
        self.records.last().map(|r| r.avg_regret)
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub config: ExperimentConfig,
    pub d: usize,
    pub gpc_gradient_bound: f64,
    /// Total cost of the static benchmark, per seed.
    pub benchmark_costs: Vec<(u64, f64)>,
    pub runs: Vec<ControllerRun>,
}

impl RegretReport {
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = Vec::new();
        for r in &self.runs {
            if !labels.contains(&r.label) {
                labels.push(r.label.clone());
            }
        }
        labels
    }

    pub fn runs_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a ControllerRun> + 'a {
        self.runs.iter().filter(move |r| r.label == label)
    }

    /// Median accumulated reward over the successful seeds.
    pub fn median_reward(&self, label: &str) -> Option<f64> {
        median(self.runs_for(label).filter(|r| !r.failed()).map(ControllerRun::reward).collect())
    }

    pub fn median_final_avg_regret(&self, label: &str) -> Option<f64> {
        median(
            self.runs_for(label)
                .filter(|r| !r.failed())
                .filter_map(ControllerRun::final_avg_regret)
                .collect(),
        )
    }

    pub fn any_failed(&self) -> bool {
        self.runs.iter().any(ControllerRun::failed)
    }
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Seed for the oracle of controller `index` on replication `seed`.
fn oracle_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn build_controller(
    spec: ControllerSpec,
    cfg: &ExperimentConfig,
    system: &LtiSystem,
    d: usize,
    gpc_bound: f64,
    benchmark: &DMatrix<f64>,
) -> Result<Box<dyn Controller>> {
    let (d_u, cols) = (system.d_u(), system.d_x() * cfg.p);
    Ok(match spec {
        ControllerSpec::OptFtrl(_) => Box::new(OptFtrlController::new(
            system,
            OptFtrlParams {
                d,
                p: cfg.p,
                kappa_m: cfg.kappa_m,
            },
        )?),
        ControllerSpec::Gpc => {
            let state = GpcState::tuned(
                DMatrix::zeros(d_u, cols),
                cfg.kappa_m,
                gpc_bound,
                cfg.scenario.horizon,
                cfg.gpc_step_scale,
            )?;
            Box::new(GpcController::new(system, d, cfg.p, state)?)
        }
        ControllerSpec::Optimal => Box::new(StaticController::new("optimal", system, cfg.p, benchmark.clone())?),
    })
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(f64, Vec<ControllerRun>)> {
    let mut scenario = cfg.scenario.clone();
    scenario.seed = seed;
    let (costs, disturbances) = scenario_trace(&scenario)?;
    let system = scenario.lti_system()?;
    let d = cfg.memory_d(&system)?;
    let gpc_bound = cfg.gpc_bound(&system, d);
    let bench = optimal_static_policy(&system, &costs, &disturbances, cfg.kappa_m, cfg.p)?;
    let mut replay = StaticController::new("optimal", &system, cfg.p, bench.m.clone())?;
    let bench_costs = rollout(&system, &costs, &disturbances, &mut replay, &mut NoForecast)?.costs;

    let mut runs = Vec::with_capacity(cfg.controllers.len());
    for (index, spec) in cfg.controllers.iter().enumerate() {
        let label = spec.label(cfg.oracle);
        let kind = match spec {
            ControllerSpec::OptFtrl(k) => k.unwrap_or(cfg.oracle),
            _ => OracleKind::Zero,
        };
        let mut oracle = Oracle::new(
            kind,
            oracle_seed(seed, index),
            scenario.alpha_range,
            scenario.beta_range,
            system.d_x(),
            system.d_u(),
        )?;
        let mut forecaster = TraceForecaster::new(&mut oracle, &costs);
        let result = build_controller(*spec, cfg, &system, d, gpc_bound, &bench.m).and_then(|mut c| {
            let run = rollout(&system, &costs, &disturbances, c.as_mut(), &mut forecaster)?;
            let records = slot_records(&run, &bench_costs)?;
            Ok((run, records))
        });
        runs.push(match result {
            Ok((run, records)) => ControllerRun {
                label,
                seed,
                total_cost: run.costs.iter().sum(),
                records,
                hit_rates: run.hit_rates,
                final_policy: run.final_policy,
                failure: None,
            },
            Err(e) => ControllerRun {
                label,
                seed,
                records: Vec::new(),
                hit_rates: Vec::new(),
                total_cost: f64::NAN,
                final_policy: None,
                failure: Some(e.to_string()),
            },
        });
    }
    Ok((bench_costs.iter().sum(), runs))
}

/// Runs every controller on every seed. All controllers of one seed see the
/// same cost and disturbance trace; seeds run in parallel.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RegretReport> {
    cfg.validate()?;
    let system = cfg.scenario.lti_system()?;
    let d = cfg.memory_d(&system)?;
    let gpc_gradient_bound = cfg.gpc_bound(&system, d);
    let per_seed = cfg
        .seeds()
        .into_par_iter()
        .map(|seed| run_seed(cfg, seed).map(|r| (seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut benchmark_costs = Vec::with_capacity(per_seed.len());
    let mut runs = Vec::new();
    for (seed, (bench, seed_runs)) in per_seed {
        benchmark_costs.push((seed, bench));
        runs.extend(seed_runs);
    }
    Ok(RegretReport {
        config: cfg.clone(),
        d,
        gpc_gradient_bound,
        benchmark_costs,
        runs,
    })
}
