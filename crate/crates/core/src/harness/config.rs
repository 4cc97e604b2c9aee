//! Run configuration. Serialized as TOML with one table per section.

use serde::{Deserialize, Serialize};

use crate::optimizer::AdamHyper;
use crate::recovery::{DEFAULT_EPS_COL, DEFAULT_ZETA};
use crate::subspace::SubspaceStrategy;

use super::task::Task;

/// Environment variable consulted when `run.seed` is not set.
pub const SEED_ENV: &str = "GRASSOPT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub task: Task,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub subspace: SubspaceSection,
    #[serde(default)]
    pub recovery: RecoverySection,
    #[serde(default)]
    pub run: RunSection,
}

/// What happens to the moments at a basis change when AO is off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AoOff {
    /// Moments keep their old coordinates.
    #[default]
    Stale,
    /// `M ← R M`, `V ← (R∘R) V`.
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub bias_correction: bool,
    pub use_ao: bool,
    pub ao_off: AoOff,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let h = AdamHyper::default();
        Self {
            lr: 3e-3,
            beta1: h.beta1,
            beta2: h.beta2,
            eps: h.eps,
            bias_correction: h.bias_correction,
            use_ao: true,
            ao_off: AoOff::Stale,
        }
    }
}

impl OptimizerSection {
    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            bias_correction: self.bias_correction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Svd,
    GrassWalk,
    GrassJump,
    Frozen,
}

impl StrategyName {
    pub const ALL: [StrategyName; 4] = [
        StrategyName::Svd,
        StrategyName::GrassWalk,
        StrategyName::GrassJump,
        StrategyName::Frozen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::Svd => "svd",
            StrategyName::GrassWalk => "grass_walk",
            StrategyName::GrassJump => "grass_jump",
            StrategyName::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisInit {
    /// Leading left singular vectors of the first gradient.
    #[default]
    Svd,
    /// First `r` canonical unit vectors.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubspaceSection {
    pub strategy: StrategyName,
    /// Defaults to `max(4, min(m, n) / 8)` per parameter when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub interval: usize,
    pub eta: f64,
    /// Skip the horizontal projection of the random tangent.
    pub raw_tangent: bool,
    pub init: BasisInit,
}

impl Default for SubspaceSection {
    fn default() -> Self {
        Self {
            strategy: StrategyName::GrassWalk,
            rank: None,
            interval: 100,
            eta: 0.1,
            raw_tangent: false,
            init: BasisInit::Svd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverySection {
    pub use_rs: bool,
    pub zeta: f64,
    pub eps_col: f64,
}

impl Default for RecoverySection {
    fn default() -> Self {
        Self {
            use_rs: true,
            zeta: DEFAULT_ZETA,
            eps_col: DEFAULT_EPS_COL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    /// Step 0 and every interval boundary.
    #[default]
    Boundaries,
    EveryStep,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Linear warmup length in steps; 0 disables.
    pub warmup: usize,
    pub diagnostics: Cadence,
    pub spectrum_k: usize,
    /// A metrics record is written every `log_every` steps and after the
    /// last step.
    pub log_every: usize,
    /// Wall time breaks byte-identical reruns, so it is opt-in.
    pub record_wall_time: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            seed: None,
            warmup: 100,
            diagnostics: Cadence::Boundaries,
            spectrum_k: crate::diagnostics::DEFAULT_SPECTRUM_K,
            log_every: 1,
            record_wall_time: false,
        }
    }
}

impl RunConfig {
    pub fn strategy(&self) -> SubspaceStrategy {
        match self.subspace.strategy {
            StrategyName::Svd => SubspaceStrategy::SvdUpdate,
            StrategyName::GrassWalk => SubspaceStrategy::GrassWalk {
                eta: self.subspace.eta,
            },
            StrategyName::GrassJump => SubspaceStrategy::GrassJump,
            StrategyName::Frozen => SubspaceStrategy::Frozen,
        }
    }

    /// `run.seed`, else `GRASSOPT_SEED`, else 0.
    pub fn resolved_seed(&self) -> Result<u64, String> {
        if let Some(s) = self.run.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
            Err(_) => Ok(0),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.task.validate()?;
        self.optimizer
            .hyper()
            .validate()
            .map_err(|e| e.to_string())?;
        if self.subspace.interval == 0 {
            return Err("subspace.interval must be >= 1".into());
        }
        if self.subspace.rank == Some(0) {
            return Err("subspace.rank must be >= 1".into());
        }
        if self.subspace.strategy == StrategyName::GrassWalk
            && !(self.subspace.eta.is_finite() && self.subspace.eta > 0.0)
        {
            return Err(format!(
                "subspace.eta must be positive, got {}",
                self.subspace.eta
            ));
        }
        if self.subspace.strategy == StrategyName::Frozen && self.optimizer.use_ao {
            return Err("optimizer.use_ao must be false for the frozen strategy".into());
        }
        if !(self.recovery.zeta.is_finite() && self.recovery.zeta > 1.0) {
            return Err(format!(
                "recovery.zeta must be > 1, got {}",
                self.recovery.zeta
            ));
        }
        if !(self.recovery.eps_col.is_finite() && self.recovery.eps_col > 0.0) {
            return Err("recovery.eps_col must be positive".into());
        }
        if self.run.log_every == 0 {
            return Err("run.log_every must be >= 1".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `section.key=value`. The value is parsed as a TOML literal,
    /// falling back to a bare string.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), String> {
        let (path, raw) = spec
            .split_once('=')
            .ok_or_else(|| format!("override {spec:?} is not section.key=value"))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.len() != 2 || keys.iter().any(|k| k.is_empty()) {
            return Err(format!("override key {path:?} must be section.key"));
        }
        let value = parse_literal(raw.trim());
        let mut doc = toml::Value::try_from(&*self).map_err(|e| e.to_string())?;
        let table = doc.as_table_mut().expect("config is a table");
        let section = table
            .entry(keys[0].to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        let section = section
            .as_table_mut()
            .ok_or_else(|| format!("{} is not a section", keys[0]))?;
        section.insert(keys[1].to_string(), value);
        *self = doc.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}
