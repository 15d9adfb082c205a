//! Linear time-invariant plant and the adversarial cost/disturbance traces
//! used by the experiments.
//!
//! Slots are 1-based throughout the crate. Disturbances at slots `t <= 0` are
//! zero and the initial state is `x_1 = 0`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::LinearCost;
use crate::error::{check_dim, Error, Result};

/// Slack allowed when validating norm bounds computed in floating point.
const NORM_SLACK: f64 = 1e-12;

/// `x_{t+1} = A x_t + B u_t + w_t` with `||A||_op <= 1 - delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    delta: f64,
    kappa_b: f64,
    w_max: f64,
}

impl LtiSystem {
    /// Builds a system, taking `kappa_B = ||B||_F`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, delta: f64, w_max: f64) -> Result<Self> {
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::config("state and action dimensions must be >= 1"));
        }
        check_dim("A must be square", a.nrows(), a.ncols())?;
        check_dim("rows of B", a.nrows(), b.nrows())?;
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::config(format!(
                "stability margin delta must lie in (0, 1], got {delta}"
            )));
        }
        if !(w_max >= 0.0 && w_max.is_finite()) {
            return Err(Error::config(format!("invalid disturbance bound {w_max}")));
        }
        let op = spectral_norm(&a);
        if op > 1.0 - delta + NORM_SLACK {
            return Err(Error::config(format!(
                "system is not intrinsically stable: ||A||_op = {op} > 1 - delta = {}",
                1.0 - delta
            )));
        }
        let kappa_b = b.norm();
        Ok(Self {
            a,
            b,
            delta,
            kappa_b,
            w_max,
        })
    }

    /// Replaces the bound on `||B||_F` with a looser one.
    pub fn with_kappa_b(mut self, kappa_b: f64) -> Result<Self> {
        if kappa_b + NORM_SLACK < self.b.norm() {
            return Err(Error::config(format!(
                "kappa_B = {kappa_b} is below ||B||_F = {}",
                self.b.norm()
            )));
        }
        self.kappa_b = kappa_b;
        Ok(self)
    }

    /// The two-dimensional system used in the reference experiments:
    /// `A = 0.9 I`, `B = I`, `delta = 0.1`.
    pub fn reference(w_max: f64) -> Self {
        Self::new(
            DMatrix::identity(2, 2) * 0.9,
            DMatrix::identity(2, 2),
            0.1,
            w_max,
        )
        .expect("reference system is valid")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kappa_b(&self) -> f64 {
        self.kappa_b
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn d_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_u(&self) -> usize {
        self.b.ncols()
    }

    /// One transition of the dynamics.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.d_x(), x.len())?;
        check_dim("action", self.d_u(), u.len())?;
        check_dim("disturbance", self.d_x(), w.len())?;
        Ok(&self.a * x + &self.b * u + w)
    }

    /// Inverts one transition: `w_t = x_{t+1} - A x_t - B u_t`.
    pub fn recover_disturbance(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        x_next: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("state", self.d_x(), x.len())?;
        check_dim("action", self.d_u(), u.len())?;
        check_dim("next state", self.d_x(), x_next.len())?;
        Ok(x_next - &self.a * x - &self.b * u)
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Disturbances `w_1..w_T`; anything outside that range reads as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceTrace {
    d_x: usize,
    w: Vec<DVector<f64>>,
}

impl DisturbanceTrace {
    pub fn new(d_x: usize, w: Vec<DVector<f64>>) -> Result<Self> {
        for v in &w {
            check_dim("disturbance", d_x, v.len())?;
        }
        Ok(Self { d_x, w })
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[DVector<f64>] {
        &self.w
    }

    /// `w_t`, zero outside `1..=T`.
    pub fn get(&self, t: i64) -> DVector<f64> {
        slot_value(&self.w, self.d_x, t)
    }

    pub fn max_norm(&self) -> f64 {
        self.w.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Costs `c_1..c_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTrace {
    costs: Vec<LinearCost>,
}

impl CostTrace {
    pub fn new(costs: Vec<LinearCost>) -> Self {
        Self { costs }
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    /// `c_t` for `1 <= t <= T`.
    pub fn get(&self, t: i64) -> Option<&LinearCost> {
        if t < 1 {
            return None;
        }
        self.costs.get((t - 1) as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LinearCost> {
        self.costs.iter()
    }
}

pub(crate) fn slot_value(history: &[DVector<f64>], dim: usize, t: i64) -> DVector<f64> {
    if t < 1 {
        return DVector::zeros(dim);
    }
    history
        .get((t - 1) as usize)
        .cloned()
        .unwrap_or_else(|| DVector::zeros(dim))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    A,
    B,
    C,
    Custom,
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(ScenarioId::A),
            "b" => Ok(ScenarioId::B),
            "c" => Ok(ScenarioId::C),
            "custom" => Ok(ScenarioId::Custom),
            other => Err(Error::config(format!("unknown scenario `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioId::A => "a",
            ScenarioId::B => "b",
            ScenarioId::C => "c",
            ScenarioId::Custom => "custom",
        })
    }
}

/// Cost and disturbance parameters held for one phase of a piecewise-constant
/// trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
    pub w: Vec<f64>,
}

/// Row-major system description, as found in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub delta: f64,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            a: vec![vec![0.9, 0.0], vec![0.0, 0.9]],
            b: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            delta: 0.1,
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(format!("matrix {what} must be a non-empty rectangle")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// A piecewise-constant scenario: phase `k` is active on slots
/// `(k-1)*period + 1 ..= k*period` and the phases cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioId,
    pub horizon: usize,
    pub period: usize,
    pub phases: Vec<Phase>,
    /// Componentwise range `[-r, r]` declared for `alpha_t` (and used for
    /// random forecasts).
    pub alpha_range: f64,
    pub beta_range: f64,
    /// Componentwise uniform jitter added to each phase disturbance.
    #[serde(default)]
    pub disturbance_noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub system: SystemSpec,
}

impl ScenarioConfig {
    /// One of the three reference scenarios.
    pub fn reference(scenario: ScenarioId, horizon: usize, seed: u64) -> Result<Self> {
        let phase = |a: f64, w: f64| Phase {
            alpha: vec![a, a],
            beta: vec![0.0, 0.0],
            w: vec![w, w],
        };
        let (period, phases) = match scenario {
            ScenarioId::A => (50, vec![phase(1.0, 1.0)]),
            ScenarioId::B => (50, vec![phase(1.0, 1.0), phase(-0.5, 1.0)]),
            ScenarioId::C => (50, vec![phase(0.1, 0.1), phase(-0.5, 0.1)]),
            ScenarioId::Custom => {
                return Err(Error::config("custom scenarios must be given explicitly"))
            }
        };
        Ok(Self {
            scenario,
            horizon,
            period,
            phases,
            alpha_range: 1.0,
            beta_range: 0.0,
            disturbance_noise: 0.0,
            seed,
            system: SystemSpec::default(),
        })
    }

    pub fn d_x(&self) -> usize {
        self.system.a.len()
    }

    pub fn d_u(&self) -> usize {
        self.system.b.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::config("period must be >= 1"));
        }
        if self.phases.is_empty() {
            return Err(Error::config("at least one phase is required"));
        }
        for (name, v) in [
            ("alpha_range", self.alpha_range),
            ("beta_range", self.beta_range),
            ("disturbance_noise", self.disturbance_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        let (d_x, d_u) = (self.d_x(), self.d_u());
        for (k, ph) in self.phases.iter().enumerate() {
            check_dim("phase alpha", d_x, ph.alpha.len())?;
            check_dim("phase w", d_x, ph.w.len())?;
            if !ph.beta.is_empty() {
                check_dim("phase beta", d_u, ph.beta.len())?;
            }
            if ph.alpha.iter().any(|a| a.abs() > self.alpha_range) {
                return Err(Error::config(format!(
                    "phase {k}: alpha outside [-{0}, {0}]",
                    self.alpha_range
                )));
            }
            if ph.beta.iter().any(|b| b.abs() > self.beta_range) {
                return Err(Error::config(format!(
                    "phase {k}: beta outside [-{0}, {0}]",
                    self.beta_range
                )));
            }
        }
        self.lti_system().map(|_| ())
    }

    /// `alpha` bound implied by the declared componentwise range.
    pub fn alpha_max(&self) -> f64 {
        self.alpha_range * (self.d_x() as f64).sqrt()
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_range * (self.d_u() as f64).sqrt()
    }

    /// Largest disturbance norm any phase can emit.
    pub fn w_max(&self) -> f64 {
        self.phases
            .iter()
            .map(|ph| {
                ph.w.iter()
                    .map(|w| (w.abs() + self.disturbance_noise).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn lti_system(&self) -> Result<LtiSystem> {
        let a = matrix_from_rows(&self.system.a, "a")?;
        let b = matrix_from_rows(&self.system.b, "b")?;
        LtiSystem::new(a, b, self.system.delta, self.w_max())
    }

    fn phase_at(&self, t: usize) -> &Phase {
        &self.phases[((t - 1) / self.period) % self.phases.len()]
    }
}

/// Generates the cost and disturbance sequences for `t = 1..=T`.
pub fn scenario_trace(config: &ScenarioConfig) -> Result<(CostTrace, DisturbanceTrace)> {
    config.validate()?;
    let (d_x, d_u) = (config.d_x(), config.d_u());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = config.disturbance_noise;
    let mut costs = Vec::with_capacity(config.horizon);
    let mut ws = Vec::with_capacity(config.horizon);
    for t in 1..=config.horizon {
        let ph = config.phase_at(t);
        let beta = if ph.beta.is_empty() {
            DVector::zeros(d_u)
        } else {
            DVector::from_column_slice(&ph.beta)
        };
        costs.push(LinearCost::new(DVector::from_column_slice(&ph.alpha), beta));
        let mut w = DVector::from_column_slice(&ph.w);
        if noise > 0.0 {
            for wi in w.iter_mut() {
                *wi += rng.random_range(-noise..=noise);
            }
        }
        ws.push(w);
    }
    Ok((CostTrace::new(costs), DisturbanceTrace::new(d_x, ws)?))
}
