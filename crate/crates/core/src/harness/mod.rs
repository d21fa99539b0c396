//! Experiment orchestration: configuration, training runs, evaluation,
//! the spatial-discount sweep and method comparison.

mod config;
pub mod output;
mod run;

use std::path::Path;

use log::info;
use thiserror::Error;

pub use config::{ExperimentConfig, Method, OutputConfig, ScenarioConfig};
pub use output::{CompareRow, MetricsRow, RunManifest, RunStatus, ScoreRow, SweepRow, TraceRow};
pub use run::{evaluate, load_scenario, train, train_full, Scenario, TrainOutcome};

use crate::agent::AgentError;
use crate::baselines::PlanError;
use crate::coordination::CoordinationError;
use crate::roadnet::RoadnetError;
use crate::simulator::{Census, SimError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Roadnet(#[from] RoadnetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("vehicle conservation violated in episode {episode}: {census:?}")]
    Conservation { episode: usize, census: Census },
}

impl HarnessError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Csv(_) => "csv",
            HarnessError::Roadnet(_) => "roadnet",
            HarnessError::Sim(_) => "simulator",
            HarnessError::Agent(_) => "agent",
            HarnessError::Coordination(_) => "coordination",
            HarnessError::Plan(_) => "plan",
            HarnessError::Conservation { .. } => "conservation",
        }
    }
}

/// One training run per spatial discount.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSeries {
    pub gamma: f64,
    pub manifest: RunManifest,
}

fn check_gammas(values: &[f64]) -> Result<(), HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("gamma sweep needs at least one value".into()));
    }
    for (k, &g) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&g) {
            return Err(HarnessError::Config(format!("gamma {g} outside [0, 1]")));
        }
        if values[..k].contains(&g) {
            return Err(HarnessError::Config(format!("duplicate gamma {g}")));
        }
    }
    Ok(())
}

/// Trains once per value with a shared seed. Rule-based and independent
/// methods are swept as the plain coordinated learner. With `out`, each run
/// writes to `gamma_<value>/` and the long-form table goes to `sweep.csv`.
pub fn sweep_gamma(config: &ExperimentConfig, values: &[f64], out: Option<&Path>) -> Result<Vec<SweepSeries>, HarnessError> {
    check_gammas(values)?;
    let mut series = Vec::with_capacity(values.len());
    for &gamma in values {
        let mut cfg = config.clone();
        if !matches!(cfg.method, Method::GammaReward | Method::GammaAttentionReward) {
            cfg.method = Method::GammaReward;
        }
        cfg.coordination.gamma = gamma;
        let dir = out.map(|o| o.join(format!("gamma_{gamma}")));
        info!("sweep: gamma {gamma}");
        let manifest = train(&cfg, dir.as_deref())?;
        series.push(SweepSeries { gamma, manifest });
    }
    if let Some(o) = out {
        output::write_csv(&o.join("sweep.csv"), &output::SWEEP_HEADER, &sweep_rows(&series))?;
    }
    Ok(series)
}

pub fn sweep_rows(series: &[SweepSeries]) -> Vec<SweepRow> {
    series
        .iter()
        .flat_map(|s| {
            s.manifest.episodes.iter().map(move |m| SweepRow {
                gamma: s.gamma,
                episode: m.episode,
                avg_travel_time_s: m.avg_travel_time_s,
            })
        })
        .collect()
}

/// Trains every method on the configured scenario and tabulates the final
/// greedy metrics. With `out`, runs go to `<method>/` and the table to
/// `compare.csv`.
pub fn compare(config: &ExperimentConfig, methods: &[Method], out: Option<&Path>) -> Result<Vec<CompareRow>, HarnessError> {
    if methods.is_empty() {
        return Err(HarnessError::Config("compare needs at least one method".into()));
    }
    for (k, m) in methods.iter().enumerate() {
        if methods[..k].contains(m) {
            return Err(HarnessError::Config(format!("duplicate method {m}")));
        }
    }
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut cfg = config.clone();
        cfg.method = method;
        let dir = out.map(|o| o.join(method.name()));
        let manifest = train(&cfg, dir.as_deref())?;
        let m = manifest
            .final_metrics()
            .ok_or_else(|| HarnessError::Config("run produced no metrics".into()))?;
        rows.push(CompareRow {
            method: method.to_string(),
            scenario: manifest.scenario.clone(),
            avg_travel_time_s: m.avg_travel_time_s,
            throughput: m.throughput,
            mean_queue: m.mean_queue,
        });
    }
    if let Some(o) = out {
        output::write_csv(&o.join("compare.csv"), &output::COMPARE_HEADER, &rows)?;
    }
    Ok(rows)
}
