//! Forecasts of upcoming cost parameters.
//!
//! Each call produces a fresh batch, so forecasts for the same slot may
//! differ between issues.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costs::LinearCost;
use crate::error::{Error, Result};
use crate::plant::CostTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleKind {
    /// Reports the true costs.
    Perfect,
    /// Reports all-zero costs, i.e. no forecast at all.
    Zero,
    /// Truth with probability `rho`, otherwise uniform noise over the declared
    /// cost ranges. The coin is flipped independently for every forecast
    /// entry.
    Bernoulli { rho: f64 },
}

impl OracleKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OracleKind::Bernoulli { rho } if !(0.0..=1.0).contains(&rho) => Err(Error::config(
                format!("oracle accuracy rho must lie in [0, 1], got {rho}"),
            )),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for OracleKind {
    type Err = Error;

    /// `perfect`, `zero`, `bernoulli:<rho>` or a bare `<rho>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let kind = match s.as_str() {
            "perfect" => OracleKind::Perfect,
            "zero" | "none" => OracleKind::Zero,
            _ => {
                let rho = s.strip_prefix("bernoulli:").unwrap_or(&s);
                let rho: f64 = rho
                    .parse()
                    .map_err(|_| Error::config(format!("unknown oracle `{s}`")))?;
                OracleKind::Bernoulli { rho }
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl std::fmt::Display for OracleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleKind::Perfect => f.write_str("perfect"),
            OracleKind::Zero => f.write_str("zero"),
            OracleKind::Bernoulli { rho } => write!(f, "bernoulli:{rho}"),
        }
    }
}

/// Forecasts for the consecutive slots `first_slot, first_slot + 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    first_slot: i64,
    costs: Vec<LinearCost>,
    hits: Vec<bool>,
}

impl PredictionBatch {
    pub fn new(first_slot: i64, costs: Vec<LinearCost>, hits: Vec<bool>) -> Result<Self> {
        if costs.len() != hits.len() {
            return Err(Error::logic("forecast and hit flag counts differ"));
        }
        Ok(Self {
            first_slot,
            costs,
            hits,
        })
    }

    pub fn first_slot(&self) -> i64 {
        self.first_slot
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    /// Forecast for `slot`, if the batch covers it.
    pub fn get(&self, slot: i64) -> Option<&LinearCost> {
        let offset = slot - self.first_slot;
        if offset < 0 {
            return None;
        }
        self.costs.get(offset as usize)
    }

    pub fn costs(&self) -> &[LinearCost] {
        &self.costs
    }

    /// Whether each entry reproduced the truth.
    pub fn hits(&self) -> &[bool] {
        &self.hits
    }
}

/// Source of forecasts used by a controller.
pub trait Forecaster {
    /// Forecasts for slots `first_slot .. first_slot + len`.
    fn forecast(&mut self, first_slot: i64, len: usize) -> Result<PredictionBatch>;
}

#[derive(Debug, Clone)]
pub struct Oracle {
    kind: OracleKind,
    rng: ChaCha8Rng,
    alpha_range: f64,
    beta_range: f64,
    d_x: usize,
    d_u: usize,
}

impl Oracle {
    /// `alpha_range` / `beta_range` are the componentwise ranges noise is
    /// drawn from on a miss.
    pub fn new(
        kind: OracleKind,
        seed: u64,
        alpha_range: f64,
        beta_range: f64,
        d_x: usize,
        d_u: usize,
    ) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
            alpha_range,
            beta_range,
            d_x,
            d_u,
        })
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    fn noise(&mut self, dim: usize, range: f64) -> DVector<f64> {
        if range > 0.0 {
            DVector::from_fn(dim, |_, _| self.rng.random_range(-range..=range))
        } else {
            DVector::zeros(dim)
        }
    }

    /// Slots past the end of `truth` carry zero cost.
    pub fn predict(&mut self, first_slot: i64, len: usize, truth: &CostTrace) -> PredictionBatch {
        let mut costs = Vec::with_capacity(len);
        let mut hits = Vec::with_capacity(len);
        for k in 0..len {
            let slot = first_slot + k as i64;
            let actual = truth
                .get(slot)
                .cloned()
                .unwrap_or_else(|| LinearCost::zero(self.d_x, self.d_u));
            let (cost, hit) = match self.kind {
                OracleKind::Perfect => (actual, true),
                OracleKind::Zero => (LinearCost::zero(self.d_x, self.d_u), false),
                OracleKind::Bernoulli { rho } => {
                    if self.rng.random_bool(rho) {
                        (actual, true)
                    } else {
                        let alpha = self.noise(self.d_x, self.alpha_range);
                        let beta = self.noise(self.d_u, self.beta_range);
                        (LinearCost::new(alpha, beta), false)
                    }
                }
            };
            costs.push(cost);
            hits.push(hit);
        }
        PredictionBatch {
            first_slot,
            costs,
            hits,
        }
    }
}

/// An [`Oracle`] bound to the true cost sequence it forecasts.
pub struct TraceForecaster<'a> {
    oracle: &'a mut Oracle,
    truth: &'a CostTrace,
}

impl<'a> TraceForecaster<'a> {
    pub fn new(oracle: &'a mut Oracle, truth: &'a CostTrace) -> Self {
        Self { oracle, truth }
    }
}

impl Forecaster for TraceForecaster<'_> {
    fn forecast(&mut self, first_slot: i64, len: usize) -> Result<PredictionBatch> {
        Ok(self.oracle.predict(first_slot, len, self.truth))
    }
}
