//! Run settings and the TOML file that overrides them.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{ControllerSpec, ExperimentConfig};
use crate::error::{Error, Result};
use crate::oracle::OracleKind;
use crate::plant::{Phase, ScenarioConfig, ScenarioId, SystemSpec};

/// Cost memory `d`: fixed, or derived from the truncation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemorySetting {
    Fixed(usize),
    Auto,
}

impl std::str::FromStr for MemorySetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(MemorySetting::Auto);
        }
        s.parse()
            .map(MemorySetting::Fixed)
            .map_err(|_| Error::config(format!("d must be an integer or `auto`, got `{s}`")))
    }
}

impl std::fmt::Display for MemorySetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MemorySetting::Fixed(d) => write!(f, "{d}"),
            MemorySetting::Auto => f.write_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for MemorySetting {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Int(d) => Ok(MemorySetting::Fixed(d)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleChoice {
    Perfect,
    Zero,
    Bernoulli,
}

impl std::str::FromStr for OracleChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "perfect" => Ok(OracleChoice::Perfect),
            "zero" | "none" => Ok(OracleChoice::Zero),
            "bernoulli" => Ok(OracleChoice::Bernoulli),
            other => Err(Error::config(format!("unknown oracle `{other}`"))),
        }
    }
}

impl OracleChoice {
    pub fn with_rho(self, rho: f64) -> Result<OracleKind> {
        let kind = match self {
            OracleChoice::Perfect => OracleKind::Perfect,
            OracleChoice::Zero => OracleKind::Zero,
            OracleChoice::Bernoulli => OracleKind::Bernoulli { rho },
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Everything the `run` command needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub scenario: ScenarioId,
    pub horizon: usize,
    pub rho: f64,
    pub oracle: OracleChoice,
    pub controllers: Vec<ControllerSpec>,
    pub memory: MemorySetting,
    pub p: usize,
    pub kappa_m: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub replications: usize,
    pub out: PathBuf,
    pub plot: bool,
    pub gpc_gradient_bound: Option<f64>,
    pub gpc_step_scale: f64,
    pub custom: Option<CustomScenario>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            scenario: ScenarioId::A,
            horizon: 1000,
            rho: 0.9,
            oracle: OracleChoice::Bernoulli,
            controllers: vec![
                ControllerSpec::Gpc,
                ControllerSpec::OptFtrl(None),
                ControllerSpec::Optimal,
            ],
            memory: MemorySetting::Fixed(10),
            p: 10,
            kappa_m: 1.0,
            epsilon: 1.0,
            seed: 0,
            replications: 5,
            out: PathBuf::from("out"),
            plot: true,
            gpc_gradient_bound: None,
            gpc_step_scale: 1.0,
            custom: None,
        }
    }
}

impl RunSettings {
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let scenario = match self.scenario {
            ScenarioId::Custom => self
                .custom
                .as_ref()
                .ok_or_else(|| Error::config("scenario `custom` needs a [custom] table in the config file"))?
                .scenario(self.horizon, self.seed),
            id => ScenarioConfig::reference(id, self.horizon, self.seed)?,
        };
        let cfg = ExperimentConfig {
            scenario,
            controllers: self.controllers.clone(),
            oracle: self.oracle.with_rho(self.rho)?,
            memory: self.memory,
            p: self.p,
            kappa_m: self.kappa_m,
            epsilon: self.epsilon,
            replications: self.replications,
            gpc_gradient_bound: self.gpc_gradient_bound,
            gpc_step_scale: self.gpc_step_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Shape of a user-defined scenario. Horizon and seed come from the run.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomScenario {
    pub period: usize,
    pub phases: Vec<Phase>,
    #[serde(default = "unit_range")]
    pub alpha_range: f64,
    #[serde(default)]
    pub beta_range: f64,
    #[serde(default)]
    pub disturbance_noise: f64,
    #[serde(default)]
    pub system: SystemSpec,
}

fn unit_range() -> f64 {
    1.0
}

impl CustomScenario {
    pub fn scenario(&self, horizon: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            scenario: ScenarioId::Custom,
            horizon,
            period: self.period,
            phases: self.phases.clone(),
            alpha_range: self.alpha_range,
            beta_range: self.beta_range,
            disturbance_noise: self.disturbance_noise,
            seed,
            system: self.system.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum ControllerList {
    Joined(String),
    Items(Vec<String>),
}

/// Settings read from a TOML file; every present key wins over the flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    scenario: Option<ScenarioId>,
    #[serde(rename = "T", alias = "horizon")]
    horizon: Option<usize>,
    rho: Option<f64>,
    oracle: Option<OracleChoice>,
    controllers: Option<ControllerList>,
    d: Option<MemorySetting>,
    p: Option<usize>,
    kappa_m: Option<f64>,
    epsilon: Option<f64>,
    seed: Option<u64>,
    replications: Option<usize>,
    out: Option<PathBuf>,
    plot: Option<bool>,
    gpc_gradient_bound: Option<f64>,
    gpc_step_scale: Option<f64>,
    custom: Option<CustomScenario>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn apply(&self, s: &mut RunSettings) -> Result<()> {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut s.scenario, &self.scenario);
        set(&mut s.horizon, &self.horizon);
        set(&mut s.rho, &self.rho);
        set(&mut s.oracle, &self.oracle);
        set(&mut s.memory, &self.d);
        set(&mut s.p, &self.p);
        set(&mut s.kappa_m, &self.kappa_m);
        set(&mut s.epsilon, &self.epsilon);
        set(&mut s.seed, &self.seed);
        set(&mut s.replications, &self.replications);
        set(&mut s.out, &self.out);
        set(&mut s.plot, &self.plot);
        set(&mut s.gpc_step_scale, &self.gpc_step_scale);
        if self.gpc_gradient_bound.is_some() {
            s.gpc_gradient_bound = self.gpc_gradient_bound;
        }
        if self.custom.is_some() {
            s.custom = self.custom.clone();
        }
        match &self.controllers {
            Some(ControllerList::Joined(list)) => s.controllers = ControllerSpec::parse_list(list)?,
            Some(ControllerList::Items(items)) => {
                s.controllers = items.iter().map(|c| c.parse()).collect::<Result<_>>()?
            }
            None => {}
        }
        Ok(())
    }
}
