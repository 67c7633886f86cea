//! Scenario configuration file (TOML).
//!
//! Every section and field has a default, so a partial file is filled in
//! from the shipped default scenario. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use mismatch_core::attack::{AttackScenario, EveMeasurementModel, HonestChannel, ScramblingPolicy};
use mismatch_core::optimizer::{
    ConstraintMode, OptimizerConfig, OptimizerError, StrategySpace, SweepSetup,
};
use mismatch_core::receiver::{ClickModel, EfficiencyMap, ReceiverParams};
use mismatch_core::ModelError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "MISMATCH_CONFIG";

pub const DEFAULT_CONFIG_TOML: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub receiver: ReceiverSection,
    pub eve: EveSection,
    pub scrambling: ScramblingSection,
    pub channel: ChannelSection,
    pub optimizer: OptimizerSection,
    pub validation: ValidationSection,
}

/// Per-detector values, keyed h, v, d, a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerDetector<T> {
    pub h: T,
    pub v: T,
    pub d: T,
    pub a: T,
}

impl<T: Copy> PerDetector<T> {
    fn to_array(self) -> [T; 4] {
        [self.h, self.v, self.d, self.a]
    }

    fn from_array(x: [T; 4]) -> Self {
        Self { h: x[0], v: x[1], d: x[2], a: x[3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverSection {
    pub click_model: ClickModel,
    pub fidelity: f64,
    pub dark_counts: PerDetector<f64>,
    /// `eta.<detector> = [at angle h, v, d, a]`.
    pub eta: PerDetector<[f64; 4]>,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        let params = ReceiverParams::default();
        let map = EfficiencyMap::default();
        Self {
            click_model: params.click_model(),
            fidelity: params.fidelity(),
            dark_counts: PerDetector::from_array(params.dark_counts()),
            eta: PerDetector::from_array(map.table()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EveSection {
    pub p_correct: f64,
    pub p_wrong: f64,
    pub p_noncompat: f64,
}

impl Default for EveSection {
    fn default() -> Self {
        let eve = EveMeasurementModel::default();
        Self {
            p_correct: eve.p_correct(),
            p_wrong: eve.p_wrong(),
            p_noncompat: eve.p_noncompat(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScramblingSection {
    /// Probabilities of rotating by 0°, 45°, 90° and 135°.
    pub weights: [f64; 4],
}

impl Default for ScramblingSection {
    fn default() -> Self {
        Self {
            weights: ScramblingPolicy::uniform().weights(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    /// Line loss used by `attack-eval` and `optimize`.
    pub loss_db: f64,
    /// Loss range `A:B:STEP` used by `baseline` and `sweep` when no flag is given.
    pub losses: LossRange,
    pub alice_mu: f64,
    /// Efficiency Bob assumes for every detector when predicting the honest rate.
    pub nominal_eta: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            loss_db: 6.0,
            losses: LossRange { start: 0.0, stop: 20.0, step: 1.0 },
            alice_mu: HonestChannel::DEFAULT_ALICE_MU,
            nominal_eta: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpaceName {
    #[serde(rename = "restricted_4")]
    Restricted4,
    #[default]
    #[serde(rename = "generalized_32")]
    Generalized32,
}

impl From<SpaceName> for StrategySpace {
    fn from(s: SpaceName) -> Self {
        match s {
            SpaceName::Restricted4 => StrategySpace::Restricted4,
            SpaceName::Generalized32 => StrategySpace::Generalized32,
        }
    }
}

impl SpaceName {
    pub fn as_str(self) -> &'static str {
        match self {
            SpaceName::Restricted4 => "restricted_4",
            SpaceName::Generalized32 => "generalized_32",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintName {
    #[default]
    TotalRate,
    PerChannelRate,
}

impl From<ConstraintName> for ConstraintMode {
    fn from(c: ConstraintName) -> Self {
        match c {
            ConstraintName::TotalRate => ConstraintMode::TotalRate,
            ConstraintName::PerChannelRate => ConstraintMode::PerChannelRate,
        }
    }
}

impl ConstraintName {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintName::TotalRate => "total_rate",
            ConstraintName::PerChannelRate => "per_channel_rate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub space: SpaceName,
    pub constraint: ConstraintName,
    pub restarts: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_rounds: usize,
    pub inner_tol: f64,
    pub inner_max_evals: usize,
    pub feasibility_tol: f64,
    pub mu_max: f64,
    pub seed: u64,
    /// Start each sweep point from the previous point's solution.
    pub warm_start: bool,
    pub match_honest_per_polarization: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let c = OptimizerConfig::default();
        Self {
            space: SpaceName::default(),
            constraint: ConstraintName::default(),
            restarts: c.restarts,
            penalty_init: c.penalty_init,
            penalty_growth: c.penalty_growth,
            penalty_rounds: c.penalty_rounds,
            inner_tol: c.inner_tol,
            inner_max_evals: c.inner_max_evals,
            feasibility_tol: c.feasibility_tol,
            mu_max: c.mu_max,
            seed: c.seed,
            warm_start: true,
            match_honest_per_polarization: c.match_honest_per_polarization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    /// Number of randomized scenarios in the Monte Carlo suite.
    pub scenarios: usize,
    /// Seed that draws the scenarios (trials are seeded separately).
    pub suite_seed: u64,
    pub click_model: ClickModel,
    pub z_threshold: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            scenarios: 100,
            suite_seed: 1,
            click_model: ClickModel::ExactComplement,
            z_threshold: mismatch_core::oracle::DEFAULT_Z_THRESHOLD,
        }
    }
}

/// Inclusive loss range; point `i` is `start + i * step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl LossRange {
    pub fn single(loss: f64) -> Self {
        Self { start: loss, stop: loss, step: 1.0 }
    }

    pub fn points(&self) -> Vec<f64> {
        // small slack so that e.g. 0:1:0.1 includes 1
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }

    fn check(&self) -> Result<(), String> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.step.is_finite()) {
            return Err("bounds and step must be finite".into());
        }
        if self.start < 0.0 {
            return Err("losses must be non-negative".into());
        }
        if self.stop < self.start {
            return Err("stop must not be below start".into());
        }
        if !(self.step > 0.0) {
            return Err("step must be positive".into());
        }
        if (self.stop - self.start) / self.step > 1e6 {
            return Err("too many points".into());
        }
        Ok(())
    }
}

impl FromStr for LossRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}"));
        let range = match parts.as_slice() {
            [x] => Self::single(num(x)?),
            [a, b, step] => Self {
                start: num(a)?,
                stop: num(b)?,
                step: num(step)?,
            },
            _ => return Err(format!("expected A:B:STEP or a single value, got `{s}`")),
        };
        range.check()?;
        Ok(range)
    }
}

impl fmt::Display for LossRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{:?}:{:?}", self.start, self.stop, self.step)
    }
}

impl Serialize for LossRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LossRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Core model objects built from a validated config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub attack: AttackScenario,
    pub policy: ScramblingPolicy,
    pub alice_mu: f64,
    pub nominal_eta: f64,
    pub optimizer: OptimizerConfig,
    pub space: StrategySpace,
    pub mode: ConstraintMode,
    pub warm_start: bool,
}

impl Scenario {
    pub fn sweep_setup(&self) -> SweepSetup {
        SweepSetup {
            space: self.space,
            mode: self.mode,
            policy: self.policy,
            scenario: self.attack,
            alice_mu: self.alice_mu,
            nominal_eta: self.nominal_eta,
            warm_start: self.warm_start,
        }
    }

    pub fn channel(&self, loss_db: f64) -> Result<HonestChannel, CliError> {
        HonestChannel::new(loss_db, self.alice_mu).map_err(|e| config_error("", e))
    }
}

fn config_error(prefix: &str, e: ModelError) -> CliError {
    let msg = e.to_string();
    CliError::Config(format!("{prefix}{msg}"))
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner().message().trim()))
        })?;
        cfg.build()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// `--config`, else the environment variable, else the shipped default.
    pub fn resolve(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Self::parse(DEFAULT_CONFIG_TOML),
            },
        }
    }

    /// Normalized form: every field spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build(&self) -> Result<Scenario, CliError> {
        let r = &self.receiver;
        let params = ReceiverParams::new(r.dark_counts.to_array(), r.fidelity, r.click_model)
            .map_err(|e| config_error("receiver.", e))?;
        let map = EfficiencyMap::new(r.eta.to_array()).map_err(|e| config_error("receiver.", e))?;
        let eve = EveMeasurementModel::new(self.eve.p_correct, self.eve.p_wrong, self.eve.p_noncompat)
            .map_err(|e| config_error("", e))?;
        let policy = ScramblingPolicy::new(self.scrambling.weights).map_err(|e| config_error("", e))?;

        let c = &self.channel;
        HonestChannel::new(c.loss_db, c.alice_mu).map_err(|e| config_error("", e))?;
        if !(0.0..=1.0).contains(&c.nominal_eta) {
            return Err(CliError::Config(format!(
                "channel.nominal_eta: value {} outside [0, 1]",
                c.nominal_eta
            )));
        }
        c.losses
            .check()
            .map_err(|m| CliError::Config(format!("channel.losses: {m}")))?;

        let o = &self.optimizer;
        let optimizer = OptimizerConfig {
            restarts: o.restarts,
            penalty_init: o.penalty_init,
            penalty_growth: o.penalty_growth,
            penalty_rounds: o.penalty_rounds,
            inner_tol: o.inner_tol,
            inner_max_evals: o.inner_max_evals,
            feasibility_tol: o.feasibility_tol,
            mu_max: o.mu_max,
            seed: o.seed,
            match_honest_per_polarization: o.match_honest_per_polarization,
        };
        if let Err(OptimizerError::InvalidConfig(m)) = optimizer.validate() {
            return Err(CliError::Config(format!("optimizer.{m}")));
        }

        let v = &self.validation;
        if v.scenarios == 0 {
            return Err(CliError::Config("validation.scenarios: must be positive".into()));
        }
        if !(v.z_threshold > 0.0) {
            return Err(CliError::Config("validation.z_threshold: must be positive".into()));
        }

        Ok(Scenario {
            attack: AttackScenario { params, map, eve },
            policy,
            alice_mu: c.alice_mu,
            nominal_eta: c.nominal_eta,
            optimizer,
            space: o.space.into(),
            mode: o.constraint.into(),
            warm_start: o.warm_start,
        })
    }
}
