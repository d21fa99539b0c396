//! Rule-based controllers and the uncoordinated learning ablation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{ExperimentConfig, Method};
use crate::simulator::SimState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("fixed-time plan has no phases")]
    Empty,
    #[error("green time {green} s of phase {phase} is below the minimum {min_green} s")]
    TooShort { phase: usize, green: f64, min_green: f64 },
}

/// Cyclic phase plan: `(phase index, green seconds)` in service order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedTimePlan {
    pub stages: Vec<(usize, f64)>,
}

impl FixedTimePlan {
    pub fn new(stages: Vec<(usize, f64)>, min_green: f64) -> Result<Self, PlanError> {
        if stages.is_empty() {
            return Err(PlanError::Empty);
        }
        for &(phase, green) in &stages {
            if !(green >= min_green) {
                return Err(PlanError::TooShort { phase, green, min_green });
            }
        }
        Ok(FixedTimePlan { stages })
    }

    /// Every phase in index order with the same green time.
    pub fn equal_split(phases: usize, green: f64, min_green: f64) -> Result<Self, PlanError> {
        Self::new((0..phases).map(|p| (p, green)).collect(), min_green)
    }

    pub fn cycle_length(&self) -> f64 {
        self.stages.iter().map(|s| s.1).sum()
    }
}

pub fn fixed_time_act(plan: &FixedTimePlan, clock: f64) -> usize {
    let mut t = clock.rem_euclid(plan.cycle_length());
    for &(phase, green) in &plan.stages {
        if t < green {
            return phase;
        }
        t -= green;
    }
    plan.stages[plan.stages.len() - 1].0
}

/// Pressure of every phase of one intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureSnapshot {
    pub pressures: Vec<f64>,
}

impl PressureSnapshot {
    /// Sum over each phase's movements of entering-lane queue minus
    /// exiting-lane queue.
    pub fn capture(state: &SimState, intersection: usize) -> Self {
        let inter = &state.network().intersections[intersection];
        let pressures = inter
            .phases
            .iter()
            .map(|p| {
                p.movements
                    .iter()
                    .map(|m| state.queued(m.entering) as f64 - state.queued(m.exiting) as f64)
                    .sum()
            })
            .collect();
        PressureSnapshot { pressures }
    }

    pub fn best(&self) -> usize {
        crate::agent::greedy(&self.pressures)
    }
}

/// Phase with the highest pressure, lowest index on ties. The simulator's
/// minimum-green hold decides when a change actually takes effect.
pub fn max_pressure_act(state: &SimState, intersection: usize) -> usize {
    PressureSnapshot::capture(state, intersection).best()
}

/// The coordinated pipeline with the spatial discount switched off and no
/// attention: independent learners trained through the same code path.
pub fn iql_mode(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    c.method = Method::Iql;
    c.coordination.gamma = 0.0;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_time_cycles_by_cumulative_green() {
        let plan = FixedTimePlan::equal_split(2, 30.0, 10.0).unwrap();
        assert_eq!(fixed_time_act(&plan, 0.0), 0);
        assert_eq!(fixed_time_act(&plan, 29.9), 0);
        assert_eq!(fixed_time_act(&plan, 45.0), 1);
        assert_eq!(fixed_time_act(&plan, 60.0), 0);
        assert_eq!(fixed_time_act(&plan, 95.0), 1);
    }

    #[test]
    fn plan_rejects_short_greens() {
        assert_eq!(
            FixedTimePlan::equal_split(2, 5.0, 10.0),
            Err(PlanError::TooShort {
                phase: 0,
                green: 5.0,
                min_green: 10.0
            })
        );
        assert_eq!(FixedTimePlan::new(vec![], 10.0), Err(PlanError::Empty));
    }
}
