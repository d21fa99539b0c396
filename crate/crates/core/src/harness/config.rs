use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::AgentConfig;
use crate::coordination::CoordinationConfig;
use crate::roadnet::SyntheticSpec;
use crate::simulator::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedTime,
    MaxPressure,
    Iql,
    GammaReward,
    GammaAttentionReward,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::FixedTime,
        Method::MaxPressure,
        Method::Iql,
        Method::GammaReward,
        Method::GammaAttentionReward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FixedTime => "fixed_time",
            Method::MaxPressure => "max_pressure",
            Method::Iql => "iql",
            Method::GammaReward => "gamma_reward",
            Method::GammaAttentionReward => "gamma_attention_reward",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::Iql | Method::GammaReward | Method::GammaAttentionReward)
    }

    pub fn uses_attention(self) -> bool {
        self == Method::GammaAttentionReward
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}")))
    }
}

/// Either a pair of scenario files or a generated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioConfig {
    Files { roadnet: PathBuf, flow: PathBuf },
    Synthetic(SyntheticSpec),
}

/// Optional artefacts written next to the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub audit: bool,
    pub scores: bool,
    pub trace: bool,
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            audit: false,
            scores: true,
            trace: true,
            checkpoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::episodes")]
    pub episodes: usize,
    /// Simulated seconds per episode.
    #[serde(default = "defaults::episode_seconds")]
    pub episode_seconds: f64,
    /// Seconds between decisions.
    #[serde(default = "defaults::action_interval")]
    pub action_interval: f64,
    /// Simulator tick inside one action interval.
    #[serde(default = "defaults::tick")]
    pub tick: f64,
    /// Worker threads; results do not depend on it.
    #[serde(default = "defaults::threads")]
    pub threads: usize,
    /// Green seconds per phase for the fixed-time controller.
    #[serde(default = "defaults::fixed_green")]
    pub fixed_time_green: f64,
    #[serde(default)]
    pub coordination: CoordinationConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

mod defaults {
    pub fn episodes() -> usize {
        30
    }
    pub fn episode_seconds() -> f64 {
        3600.0
    }
    pub fn action_interval() -> f64 {
        10.0
    }
    pub fn tick() -> f64 {
        1.0
    }
    pub fn threads() -> usize {
        1
    }
    pub fn fixed_green() -> f64 {
        30.0
    }
}

impl ExperimentConfig {
    pub fn new(method: Method, scenario: ScenarioConfig) -> Self {
        ExperimentConfig {
            method,
            scenario,
            seed: 0,
            episodes: defaults::episodes(),
            episode_seconds: defaults::episode_seconds(),
            action_interval: defaults::action_interval(),
            tick: defaults::tick(),
            threads: defaults::threads(),
            fixed_time_green: defaults::fixed_green(),
            coordination: CoordinationConfig::default(),
            agent: AgentConfig::default(),
            sim: SimConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn synthetic(method: Method, spec: SyntheticSpec) -> Self {
        Self::new(method, ScenarioConfig::Synthetic(spec))
    }

    /// Parses TOML; relative scenario paths resolve against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self, HarnessError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let (Some(base), ScenarioConfig::Files { roadnet, flow }) = (base, &mut cfg.scenario) {
            for p in [roadnet, flow] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Decision steps per episode.
    pub fn steps_per_episode(&self) -> usize {
        (self.episode_seconds / self.action_interval).ceil() as usize
    }

    /// Ticks per decision step.
    pub fn ticks_per_step(&self) -> usize {
        (self.action_interval / self.tick).round() as usize
    }

    /// The configuration actually trained: the independent learner runs the
    /// coordinated pipeline with a zero spatial discount.
    pub fn resolved(&self) -> Self {
        if self.method == Method::Iql {
            crate::baselines::iql_mode(self)
        } else {
            self.clone()
        }
    }

    pub fn coordination_enabled(&self) -> bool {
        matches!(self.method, Method::GammaReward | Method::GammaAttentionReward) && self.coordination.gamma > 0.0
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        for (name, v) in [
            ("episode_seconds", self.episode_seconds),
            ("action_interval", self.action_interval),
            ("tick", self.tick),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let ratio = self.action_interval / self.tick;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!(
                "action_interval {} is not a multiple of tick {}",
                self.action_interval, self.tick
            ));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        let s = &self.sim;
        if !(s.saturation_rate > 0.0 && s.lost_time >= 0.0 && s.min_green >= 0.0 && s.lane_capacity > 0) {
            return bad(format!("invalid simulator settings {s:?}"));
        }
        if self.method == Method::FixedTime && !(self.fixed_time_green >= s.min_green) {
            return bad(format!(
                "fixed_time_green {} is below min_green {}",
                self.fixed_time_green, s.min_green
            ));
        }
        self.coordination.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.agent.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if let ScenarioConfig::Files { roadnet, flow } = &self.scenario {
            for p in [roadnet, flow] {
                if !p.is_file() {
                    return bad(format!("scenario file {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("gamma-reward".parse::<Method>().unwrap(), Method::GammaReward);
        assert!("colight".parse::<Method>().is_err());
    }

    #[test]
    fn toml_with_synthetic_scenario() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            method = "gamma_reward"
            seed = 3
            episodes = 2
            [scenario]
            type = "grid"
            rows = 3
            cols = 3
            two_way = true
            [coordination]
            gamma = 0.3
            "#,
            None,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.coordination.gamma, 0.3);
        assert_eq!(cfg.coordination.n, 1);
        assert_eq!(cfg.steps_per_episode(), 360);
        assert_eq!(cfg.scenario, ScenarioConfig::Synthetic(SyntheticSpec::grid(3, 3, true)));
        let again = ExperimentConfig::from_toml(&cfg.to_toml(), None).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let cfg = ExperimentConfig::from_toml(
            "method = \"max_pressure\"\n[scenario]\nroadnet = \"a.json\"\nflow = \"b.json\"\n",
            Some(Path::new("/data")),
        )
        .unwrap();
        assert_eq!(
            cfg.scenario,
            ScenarioConfig::Files {
                roadnet: "/data/a.json".into(),
                flow: "/data/b.json".into()
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml(
            "method = \"iql\"\nepisodez = 3\n[scenario]\ntype = \"arterial\"\nlength = 6\n",
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn iql_resolves_to_zero_gamma() {
        let cfg = ExperimentConfig::synthetic(Method::Iql, SyntheticSpec::arterial(6));
        assert_eq!(cfg.resolved().coordination.gamma, 0.0);
        assert!(!cfg.resolved().coordination_enabled());
    }
}
