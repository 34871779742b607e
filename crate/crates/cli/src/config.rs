//! Scenario configuration file: strict JSON with library defaults.
//!
//! Unknown keys are rejected; every field is optional and defaults to the
//! homogeneous nine-follower platoon, the standard leader profile and noise
//! model, distance-proportional communication costs, and a gain bound of 10.
//! The JSON Schema published at `schemas/scenario.schema.json` documents the
//! format.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use platoon_codesign::codesign::{CostRule, CostSpec, DesignMode};
use platoon_codesign::platoon::{Formulation, VehicleParams};
use platoon_codesign::sim::{Event, EventKind, LeaderProfile, NoiseSpec, Scenario, SimError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("configuration schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn schema<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Schema(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParamsConfig {
    pub mass: f64,
    pub tau: f64,
    pub frontal_area: f64,
    pub drag_coeff: f64,
    pub rolling_coeff: f64,
    pub air_density: f64,
    pub length: f64,
    pub gap: f64,
}

impl Default for VehicleParamsConfig {
    fn default() -> Self {
        let p = VehicleParams::default();
        Self {
            mass: p.mass,
            tau: p.tau,
            frontal_area: p.frontal_area,
            drag_coeff: p.drag_coeff,
            rolling_coeff: p.rolling_coeff,
            air_density: p.air_density,
            length: p.length,
            gap: p.gap,
        }
    }
}

impl VehicleParamsConfig {
    pub fn to_params(&self) -> VehicleParams {
        VehicleParams {
            mass: self.mass,
            tau: self.tau,
            frontal_area: self.frontal_area,
            drag_coeff: self.drag_coeff,
            rolling_coeff: self.rolling_coeff,
            air_density: self.air_density,
            length: self.length,
            gap: self.gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehiclesConfig {
    pub count: Option<usize>,
    pub params: Option<VehicleParamsConfig>,
    pub per_vehicle: Option<Vec<VehicleParamsConfig>>,
}

impl Default for VehiclesConfig {
    fn default() -> Self {
        Self {
            count: Some(9),
            params: None,
            per_vehicle: None,
        }
    }
}

impl VehiclesConfig {
    pub fn followers(&self) -> Result<Vec<VehicleParams>, ConfigError> {
        match (&self.per_vehicle, self.count) {
            (Some(list), None) => {
                if list.is_empty() {
                    return schema("per_vehicle must not be empty");
                }
                Ok(list.iter().map(VehicleParamsConfig::to_params).collect())
            }
            (Some(_), Some(_)) => schema("give either count or per_vehicle, not both"),
            (None, count) => {
                let n = count.unwrap_or(9);
                if n == 0 {
                    return schema("vehicle count must be positive");
                }
                let p = self.params.clone().unwrap_or_default().to_params();
                Ok(vec![p; n])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum CostRuleConfig {
    AbsDistance,
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostsConfig {
    pub rule: CostRuleConfig,
    pub gain_weight: f64,
    pub local_weights: Option<Vec<f64>>,
    pub mismatch_weights: Option<Vec<f64>>,
}

impl Default for CostsConfig {
    fn default() -> Self {
        Self {
            rule: CostRuleConfig::AbsDistance,
            gain_weight: 1.0,
            local_weights: None,
            mismatch_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum MultiplierConfig {
    Uniform,
    Explicit(Vec<f64>),
}

impl Default for MultiplierConfig {
    fn default() -> Self {
        Self::Uniform
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub seed: u64,
    pub mean_range: [f64; 2],
    pub std_range: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            mean_range: [-0.5, 0.5],
            std_range: [0.0, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderConfig {
    /// Velocity breakpoints `(t, v)`, linearly interpolated.
    pub breakpoints: Vec<(f64, f64)>,
}

impl Default for LeaderConfig {
    fn default() -> Self {
        Self {
            breakpoints: vec![
                (0.0, 0.0),
                (2.0, 30.0),
                (4.0, 40.0),
                (6.0, 40.0),
                (8.0, 20.0),
                (10.0, 20.0),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeEventConfig {
    pub position: usize,
    #[serde(default)]
    pub params: VehicleParamsConfig,
    /// Prespecified multiplier for the new vehicle's local design.
    #[serde(default = "default_merge_p")]
    pub p_scalar: f64,
}

fn default_merge_p() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEventConfig {
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub time: f64,
    #[serde(default)]
    pub merge: Option<MergeEventConfig>,
    #[serde(default)]
    pub split: Option<SplitEventConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub initial_jitter: bool,
    pub leader_start: f64,
    pub leader_length: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            horizon: 10.0,
            initial_jitter: true,
            leader_start: 0.0,
            leader_length: VehicleParams::default().length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeConfig {
    Centralized,
    Decentralized,
}

impl From<ModeConfig> for DesignMode {
    fn from(m: ModeConfig) -> Self {
        match m {
            ModeConfig::Centralized => DesignMode::Centralized,
            ModeConfig::Decentralized => DesignMode::Decentralized,
        }
    }
}

/// Top-level scenario configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub vehicles: VehiclesConfig,
    pub formulation: Formulation,
    pub mode: ModeConfig,
    pub costs: CostsConfig,
    pub gamma_bar: f64,
    pub multipliers: MultiplierConfig,
    pub noise: NoiseConfig,
    pub leader: LeaderConfig,
    pub events: Vec<EventConfig>,
    pub sim: SimConfig,
    pub output_dir: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            vehicles: VehiclesConfig::default(),
            formulation: Formulation::I,
            mode: ModeConfig::Centralized,
            costs: CostsConfig::default(),
            gamma_bar: 10.0,
            multipliers: MultiplierConfig::default(),
            noise: NoiseConfig::default(),
            leader: LeaderConfig::default(),
            events: Vec::new(),
            sim: SimConfig::default(),
            output_dir: "out".to_string(),
        }
    }
}

impl ScenarioConfig {
    /// Strict parse; unknown keys are schema errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let followers = self.vehicles.followers()?;
        for (i, p) in followers.iter().enumerate() {
            p.validate()
                .map_err(|e| ConfigError::Schema(format!("vehicle {i}: {e}")))?;
        }
        if !(self.gamma_bar > 0.0) {
            return schema("gamma_bar must be positive");
        }
        if let MultiplierConfig::Explicit(p) = &self.multipliers {
            if p.len() != followers.len() {
                return schema(format!(
                    "multipliers list has {} entries for {} vehicles",
                    p.len(),
                    followers.len()
                ));
            }
            if p.iter().any(|v| *v <= 0.0) {
                return schema("multipliers must be positive");
            }
        }
        if let CostRuleConfig::Matrix(rows) = &self.costs.rule {
            let n = followers.len();
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return schema(format!("cost matrix must be {n}x{n}"));
            }
        }
        for (k, e) in self.events.iter().enumerate() {
            match (&e.merge, &e.split) {
                (Some(_), Some(_)) | (None, None) => {
                    return schema(format!("event {k} must be exactly one of merge or split"));
                }
                _ => {}
            }
        }
        if !(self.sim.step > 0.0) || !(self.sim.horizon > 0.0) {
            return schema("sim.step and sim.horizon must be positive");
        }
        // The leader profile must parse and cover the horizon.
        let profile = LeaderProfile::from_breakpoints(&self.leader.breakpoints)?;
        let (lo, hi) = profile.domain();
        if lo > 0.0 || hi + 1e-12 < self.sim.horizon {
            return schema(format!(
                "leader profile domain [{lo}, {hi}] does not cover the horizon {}",
                self.sim.horizon
            ));
        }
        Ok(())
    }

    pub fn followers(&self) -> Vec<VehicleParams> {
        self.vehicles.followers().expect("validated")
    }

    pub fn n(&self) -> usize {
        self.followers().len()
    }

    pub fn cost_spec(&self) -> CostSpec {
        let n = self.n();
        let rule = match &self.costs.rule {
            CostRuleConfig::AbsDistance => CostRule::AbsDistance,
            CostRuleConfig::Matrix(rows) => {
                CostRule::Matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        };
        CostSpec {
            rule,
            gain_weight: self.costs.gain_weight,
            local_weights: self
                .costs
                .local_weights
                .clone()
                .unwrap_or_else(|| vec![1.0; n]),
            mismatch_weights: self
                .costs
                .mismatch_weights
                .clone()
                .unwrap_or_else(|| vec![1.0; n]),
            gamma_bar: self.gamma_bar,
        }
    }

    pub fn multiplier_values(&self) -> Vec<f64> {
        match &self.multipliers {
            MultiplierConfig::Uniform => {
                platoon_codesign::codesign::uniform_multipliers(self.n())
            }
            MultiplierConfig::Explicit(p) => p.clone(),
        }
    }

    pub fn scenario(&self, seed_override: Option<u64>) -> Result<Scenario, ConfigError> {
        let leader = LeaderProfile::from_breakpoints(&self.leader.breakpoints)?;
        let events = self
            .events
            .iter()
            .map(|e| {
                let kind = if let Some(m) = &e.merge {
                    EventKind::Merge {
                        params: m.params.to_params(),
                        position: m.position,
                        p_scalar: m.p_scalar,
                    }
                } else {
                    EventKind::Split {
                        position: e.split.as_ref().expect("validated").position,
                    }
                };
                Event { time: e.time, kind }
            })
            .collect();
        Ok(Scenario {
            followers: self.followers(),
            leader,
            leader_start: self.sim.leader_start,
            leader_length: self.sim.leader_length,
            noise: NoiseSpec {
                seed: seed_override.unwrap_or(self.noise.seed),
                mean_range: (self.noise.mean_range[0], self.noise.mean_range[1]),
                std_range: (self.noise.std_range[0], self.noise.std_range[1]),
            },
            events,
            step: self.sim.step,
            horizon: self.sim.horizon,
            initial_jitter: self.sim.initial_jitter,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_round_trip() {
        let cfg = ScenarioConfig::parse("{}").unwrap();
        assert_eq!(cfg.n(), 9);
        assert_eq!(cfg.gamma_bar, 10.0);
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let again = ScenarioConfig::parse(&json).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            ScenarioConfig::parse(r#"{"unknown_field": 1}"#),
            Err(ConfigError::Schema(_))
        ));
        assert!(matches!(
            ScenarioConfig::parse(r#"{"sim": {"step": 0.001, "bogus": 2}}"#),
            Err(ConfigError::Schema(_))
        ));
    }

    #[test]
    fn events_must_be_exactly_one_kind() {
        let text = r#"{"events": [{"time": 5.0}]}"#;
        assert!(matches!(
            ScenarioConfig::parse(text),
            Err(ConfigError::Schema(_))
        ));
        let ok = r#"{"events": [{"time": 5.0, "split": {"position": 3}}]}"#;
        assert!(ScenarioConfig::parse(ok).is_ok());
    }

    #[test]
    fn leader_profile_must_cover_horizon() {
        let text = r#"{"leader": {"breakpoints": [[0.0, 0.0], [5.0, 10.0]]}}"#;
        assert!(matches!(
            ScenarioConfig::parse(text),
            Err(ConfigError::Schema(_))
        ));
    }
}
