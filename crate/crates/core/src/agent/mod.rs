//! Per-intersection dueling double deep Q-learning.

mod adam;
pub mod checkpoint;
pub(crate) mod nn;
mod qnet;

use std::borrow::Borrow;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamConfig, OptimizerState};
pub use nn::{ParamLayout, TensorSpec};
pub use qnet::{QArch, QFunction, TargetQFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid architecture {0}")]
    Architecture(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty training batch")]
    EmptyBatch,
    #[error("action {action} out of range for {actions} actions")]
    InvalidAction { action: usize, actions: usize },
    #[error("discount {0} outside [0, 1)")]
    InvalidDiscount(f64),
    #[error("epsilon {0} outside [0, 1]")]
    InvalidEpsilon(f64),
    #[error("non-finite training loss {0}")]
    NonFiniteLoss(f64),
    #[error("network has no attention layer")]
    NoAttention,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for AgentError {
    fn from(e: std::io::Error) -> Self {
        AgentError::Io(e.to_string())
    }
}

/// Observations an agent is allowed to see: its own first, then its
/// neighbours' in a fixed order. Plain networks read only the first slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalView {
    pub slots: Vec<Arc<[f64]>>,
}

impl LocalView {
    pub fn single(o: Vec<f64>) -> Self {
        LocalView { slots: vec![o.into()] }
    }

    pub fn new(slots: Vec<Arc<[f64]>>) -> Self {
        LocalView { slots }
    }

    pub fn own(&self) -> &[f64] {
        &self.slots[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: LocalView,
    pub action: usize,
    pub reward: f64,
    pub next: LocalView,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Target networks are refreshed every this many training rounds.
    pub target_sync_rounds: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all training steps over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Vehicle counts are divided by this before entering the network.
    pub count_scale: f64,
    /// Temporal-difference discount.
    pub gamma_prime: f64,
    pub attention_dim: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![64, 64],
            adam: AdamConfig::default(),
            batch_size: 32,
            buffer_capacity: 10_000,
            target_sync_rounds: 5,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            count_scale: 40.0,
            gamma_prime: 0.8,
            attention_dim: 32,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..1.0).contains(&self.gamma_prime) {
            return Err(AgentError::InvalidDiscount(self.gamma_prime));
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(AgentError::InvalidEpsilon(e));
            }
        }
        let bad = |what: &str| Err(AgentError::Architecture(what.to_string()));
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_sync_rounds == 0 {
            return bad("batch size, buffer capacity and sync period must be positive");
        }
        if self.hidden.contains(&0) || self.attention_dim == 0 {
            return bad("layer widths must be positive");
        }
        if !(self.count_scale > 0.0) || !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("count scale must be positive and decay fraction in [0, 1]");
        }
        Ok(())
    }
}

/// Linear annealing from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

pub fn q_values(qf: &QFunction, view: &LocalView) -> Result<Vec<f64>, AgentError> {
    Ok(qf.forward(view)?.q)
}

/// Index of the largest value, lowest index on ties.
pub fn greedy(q: &[f64]) -> usize {
    nn::argmax(q)
}

/// Epsilon-greedy action. Exactly one uniform draw decides between
/// exploring and exploiting; exploring draws a second number for the phase.
pub fn act(qf: &QFunction, view: &LocalView, epsilon: f64, rng: &mut impl Rng) -> Result<usize, AgentError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(AgentError::InvalidEpsilon(epsilon));
    }
    if rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..qf.arch().actions))
    } else {
        Ok(greedy(&q_values(qf, view)?))
    }
}

/// Double-DQN target: the eval network picks the next action, the target
/// network scores it.
pub fn td_target(
    tq: &TargetQFunction,
    qf: &QFunction,
    r: f64,
    next: &LocalView,
    gamma_prime: f64,
    terminal: bool,
) -> Result<f64, AgentError> {
    if !(0.0..1.0).contains(&gamma_prime) {
        return Err(AgentError::InvalidDiscount(gamma_prime));
    }
    if terminal || gamma_prime == 0.0 {
        return Ok(r);
    }
    let a = greedy(&q_values(qf, next)?);
    let q = q_values(tq.as_q(), next)?;
    Ok(r + gamma_prime * q[a])
}

/// One regression sample: view, action and the target value for `Q(view, action)`.
pub type Regression = (LocalView, usize, f64);

/// Mean squared error `mean_b (y_b - Q(o_b, a_b))^2` and its gradient.
pub fn loss_and_gradient<T: Borrow<Regression>>(qf: &QFunction, batch: &[T]) -> Result<(f64, Vec<f64>), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let actions = qf.arch().actions;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; qf.params().len()];
    let mut loss = 0.0;
    let mut dq = vec![0.0; actions];
    for item in batch {
        let (view, action, y) = item.borrow();
        if *action >= actions {
            return Err(AgentError::InvalidAction {
                action: *action,
                actions,
            });
        }
        let cache = qf.forward(view)?;
        let err = y - cache.q[*action];
        loss += scale * err * err;
        dq.fill(0.0);
        dq[*action] = -2.0 * scale * err;
        qf.backward(&cache, view, &dq, &mut grad);
    }
    Ok((loss, grad))
}

/// Loss only, for finite-difference checks.
pub fn loss<T: Borrow<Regression>>(qf: &QFunction, batch: &[T]) -> Result<f64, AgentError> {
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;
    for item in batch {
        let (view, action, y) = item.borrow();
        let err = y - q_values(qf, view)?[*action];
        total += scale * err * err;
    }
    Ok(total)
}

/// Regresses `Q(o, a)` towards the double-DQN target of each transition and
/// applies one Adam update. Returns the loss before the update.
pub fn train_step<T: Borrow<Transition>>(
    qf: &mut QFunction,
    tq: &TargetQFunction,
    opt: &mut OptimizerState,
    batch: &[T],
    gamma_prime: f64,
) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let regression = batch
        .iter()
        .map(|t| {
            let t = t.borrow();
            let y = td_target(tq, qf, t.reward, &t.next, gamma_prime, t.terminal)?;
            Ok((t.obs.clone(), t.action, y))
        })
        .collect::<Result<Vec<Regression>, AgentError>>()?;
    let (loss, grad) = loss_and_gradient(qf, &regression)?;
    if !loss.is_finite() {
        return Err(AgentError::NonFiniteLoss(loss));
    }
    opt.apply(qf.params_mut(), &grad);
    Ok(loss)
}

/// Hard copy of every eval parameter into the target network.
pub fn sync_target(qf: &QFunction, tq: &mut TargetQFunction) -> Result<(), AgentError> {
    tq.sync(qf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn small(seed: u64) -> QFunction {
        QFunction::random(QArch::plain(3, vec![5, 4], 3), &mut stream(seed, "init")).unwrap()
    }

    fn view(x: &[f64]) -> LocalView {
        LocalView::single(x.to_vec())
    }

    #[test]
    fn zero_network_outputs_zero() {
        let qf = QFunction::zeros(QArch::plain(3, vec![4], 2)).unwrap();
        assert_eq!(q_values(&qf, &view(&[1.0, 2.0, 3.0])).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn equal_advantages_collapse_to_value() {
        let mut qf = small(3);
        qf.tensor_mut("advantage.weight").unwrap().fill(0.0);
        qf.tensor_mut("advantage.bias").unwrap().fill(1.7);
        qf.tensor_mut("value.bias").unwrap()[0] = 0.4;
        let q = q_values(&qf, &view(&[0.2, -0.1, 0.5])).unwrap();
        let mut vq = QFunction::clone(&qf);
        vq.tensor_mut("advantage.bias").unwrap().fill(0.0);
        let v = q_values(&vq, &view(&[0.2, -0.1, 0.5])).unwrap()[0];
        for x in q {
            assert!((x - v).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_dimension_is_rejected() {
        let qf = small(1);
        assert_eq!(
            q_values(&qf, &view(&[1.0])),
            Err(AgentError::Dimension { expected: 3, got: 1 })
        );
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let s = EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 100,
        };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(100), 0.05);
        assert_eq!(s.value(1000), 0.05);
    }

    #[test]
    fn terminal_and_zero_discount_targets_are_the_reward() {
        let qf = small(4);
        let tq = TargetQFunction::from_eval(&qf);
        let o = view(&[1.0, 1.0, 1.0]);
        assert_eq!(td_target(&tq, &qf, -4.0, &o, 0.9, true).unwrap(), -4.0);
        assert_eq!(td_target(&tq, &qf, 2.5, &o, 0.0, false).unwrap(), 2.5);
        assert!(td_target(&tq, &qf, 0.0, &o, 1.0, false).is_err());
    }

    #[test]
    fn sync_is_idempotent_and_matches_eval() {
        let qf = small(5);
        let mut tq = TargetQFunction::from_eval(&small(6));
        sync_target(&qf, &mut tq).unwrap();
        let once = tq.clone();
        sync_target(&qf, &mut tq).unwrap();
        assert_eq!(once, tq);
        let o = view(&[0.3, 0.6, -0.2]);
        assert_eq!(q_values(&qf, &o).unwrap(), q_values(tq.as_q(), &o).unwrap());
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut qf = small(7);
        let tq = TargetQFunction::from_eval(&qf);
        let mut opt = OptimizerState::new(qf.params().len(), AdamConfig::default());
        let batch: Vec<Transition> = Vec::new();
        assert_eq!(
            train_step(&mut qf, &tq, &mut opt, &batch, 0.5),
            Err(AgentError::EmptyBatch)
        );
    }
}
