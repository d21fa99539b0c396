//! Neighbour-aware reward correction and the replay-buffer amendment that
//! applies it once a step's delayed neighbour outcome is known.

mod buffer;
mod message;

use std::collections::HashMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffer::{AmendedBuffer, RawBuffer, RawEntry};
pub use message::{exchange_neighbor_rewards, Inbox, NeighborMessage, ScoreMessage, ScoreSource, UnitWeights};

use crate::agent::Transition;

/// Below this magnitude a neighbour's present reward counts as zero.
pub const ZERO_REWARD_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordinationError {
    #[error("invalid coordination config: {0}")]
    Config(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("negative neighbour weight {0}")]
    NegativeWeight(f64),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinationConfig {
    /// Spatial discount.
    pub gamma: f64,
    /// Delay span in decision steps.
    pub n: usize,
    /// Neutral neighbour reward ratio.
    pub c: f64,
    /// Agent-steps between amendment rounds, not counting `n`.
    pub min_steps_per_update: usize,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        CoordinationConfig {
            gamma: 0.5,
            n: 1,
            c: 0.8,
            min_steps_per_update: 100,
        }
    }
}

impl CoordinationConfig {
    pub fn validate(&self) -> Result<(), CoordinationError> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(CoordinationError::Config(format!("gamma {} must be finite and >= 0", self.gamma)));
        }
        if self.n < 1 {
            return Err(CoordinationError::Config("delay span n must be >= 1".into()));
        }
        if !self.c.is_finite() || self.c <= 0.0 {
            return Err(CoordinationError::Config(format!("threshold c {} must be > 0", self.c)));
        }
        Ok(())
    }
}

/// One neighbour's contribution: its corrected reward `n` steps ahead, its raw
/// reward now, and the weight of its term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborTerm {
    pub future: f64,
    pub present: f64,
    pub weight: f64,
}

/// `future / present`, or `c` when the present reward is zero.
pub fn neighbor_ratio(term: &NeighborTerm, c: f64) -> f64 {
    if term.present.abs() < ZERO_REWARD_EPS {
        c
    } else {
        term.future / term.present
    }
}

/// `r * (1 + gamma * tanh(sum_j w_j (R_j / r_j - c)))`.
pub fn spatial_differentiation(
    r: f64,
    terms: &[NeighborTerm],
    cfg: &CoordinationConfig,
) -> Result<f64, CoordinationError> {
    cfg.validate()?;
    if !r.is_finite() {
        return Err(CoordinationError::NonFinite(format!("reward {r}")));
    }
    let mut sum = 0.0;
    for t in terms {
        if !(t.future.is_finite() && t.present.is_finite() && t.weight.is_finite()) {
            return Err(CoordinationError::NonFinite(format!("{t:?}")));
        }
        if t.weight < 0.0 {
            return Err(CoordinationError::NegativeWeight(t.weight));
        }
        sum += t.weight * (neighbor_ratio(t, cfg.c) - cfg.c);
    }
    let out = r * (1.0 + cfg.gamma * sum.tanh());
    if !out.is_finite() {
        return Err(CoordinationError::NonFinite(format!("corrected reward from {terms:?}")));
    }
    Ok(out)
}

/// Per-neighbour detail of one amended entry. `neighbor` is `None` for an
/// agent without neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub agent: usize,
    pub t: u64,
    pub episode: u32,
    pub raw: f64,
    pub amended: f64,
    pub neighbor: Option<usize>,
    pub ratio: Option<f64>,
    pub weight: Option<f64>,
    /// The neighbour's future reward had not been amended yet.
    pub stale: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AmendReport {
    pub amended: usize,
    /// Entries whose own or neighbour data had been evicted.
    pub skipped_missing: usize,
    /// Entries whose delayed step falls in the next episode.
    pub skipped_boundary: usize,
    pub stale_terms: usize,
    pub audit: Vec<AuditRow>,
}

impl AmendReport {
    fn merge(mut self, other: AmendReport) -> AmendReport {
        self.amended += other.amended;
        self.skipped_missing += other.skipped_missing;
        self.skipped_boundary += other.skipped_boundary;
        self.stale_terms += other.stale_terms;
        self.audit.extend(other.audit);
        self
    }
}

/// Amends every agent's steps in `(watermark, latest - n]` and copies them
/// into the amended buffers. Steps are processed newest first in lockstep:
/// every agent amends step `t` in parallel, then sends the corrected value to
/// its neighbours, so step `t - n` already sees it. Neighbour outcomes beyond
/// the window are still raw and are flagged stale.
pub fn amend(
    raw: &mut [RawBuffer],
    amended: &mut [AmendedBuffer],
    neighbors: &[Vec<usize>],
    cfg: &CoordinationConfig,
    scores: &dyn ScoreSource,
    audit: bool,
) -> Result<AmendReport, CoordinationError> {
    cfg.validate()?;
    if amended.len() != raw.len() {
        return Err(CoordinationError::Contract(format!(
            "{} raw buffers but {} amended buffers",
            raw.len(),
            amended.len()
        )));
    }
    let n = cfg.n as u64;
    let inboxes = exchange_neighbor_rewards(raw, neighbors, n, scores)?;
    let weighted = scores.weighted();
    let mut rounds: Vec<AgentRound> = raw
        .iter()
        .zip(inboxes)
        .enumerate()
        .map(|(i, (r, inbox))| AgentRound::new(i, r, &inbox, n))
        .collect();
    let top = rounds.iter().filter_map(|r| r.window.map(|w| w.1)).max();
    let bottom = rounds.iter().filter_map(|r| r.window.map(|w| w.0)).min();
    if let (Some(bottom), Some(top)) = (bottom, top) {
        for t in (bottom..=top).rev() {
            let sent = raw
                .par_iter_mut()
                .zip(amended.par_iter_mut())
                .zip(rounds.par_iter_mut())
                .map(|((raw_i, amended_i), round)| {
                    round.amend_step(t, raw_i, amended_i, &neighbors[round.agent], cfg, weighted, audit)
                })
                .collect::<Result<Vec<_>, _>>()?;
            for (j, value) in sent.into_iter().enumerate() {
                let Some(value) = value else { continue };
                for &i in &neighbors[j] {
                    if let Some(r) = rounds.get_mut(i) {
                        r.fresh.insert((j as u32, t), value);
                    }
                }
            }
        }
    }
    for (round, raw_i) in rounds.iter().zip(raw.iter_mut()) {
        if let Some((_, upper)) = round.window {
            raw_i.set_watermark(upper);
        }
    }
    Ok(rounds
        .into_iter()
        .map(|r| r.report)
        .fold(AmendReport::default(), AmendReport::merge))
}

/// One agent's view of an amendment round.
struct AgentRound {
    agent: usize,
    /// Inclusive step range to amend, if any.
    window: Option<(u64, u64)>,
    watermark: Option<u64>,
    /// `(from, t) -> (raw, stored)` as sent before the round.
    rewards: HashMap<(u32, u64), (f64, f64)>,
    weights: HashMap<(u32, u64), f64>,
    /// Neighbour values amended earlier in this round.
    fresh: HashMap<(u32, u64), f64>,
    report: AmendReport,
}

impl AgentRound {
    fn new(agent: usize, raw: &RawBuffer, inbox: &Inbox, n: u64) -> Self {
        let watermark = raw.watermark();
        let window = match (raw.latest(), raw.iter().next().map(|e| e.t)) {
            (Some(latest), Some(first)) if latest >= n => {
                let upper = latest - n;
                let lower = watermark.map_or(first, |w| (w + 1).max(first));
                (lower <= upper).then_some((lower, upper))
            }
            _ => None,
        };
        AgentRound {
            agent,
            window,
            watermark,
            rewards: inbox.rewards.iter().map(|m| ((m.from, m.t), (m.raw, m.stored))).collect(),
            weights: inbox.score_index(),
            fresh: HashMap::new(),
            report: AmendReport::default(),
        }
    }

    /// Amends step `t` when it lies in the window. Returns the corrected
    /// reward for delivery to the neighbours.
    #[allow(clippy::too_many_arguments)]
    fn amend_step(
        &mut self,
        t: u64,
        raw: &mut RawBuffer,
        amended: &mut AmendedBuffer,
        neighbors: &[usize],
        cfg: &CoordinationConfig,
        weighted: bool,
        audit: bool,
    ) -> Result<Option<f64>, CoordinationError> {
        let agent = self.agent;
        match self.window {
            Some((lower, upper)) if (lower..=upper).contains(&t) => {}
            _ => return Ok(None),
        }
        let n = cfg.n as u64;
        let report = &mut self.report;
        let (r, episode) = match raw.get(t) {
            Some(e) => (e.transition.reward, e.episode),
            None => {
                warn!("agent {agent}: step {t} evicted before amendment");
                report.skipped_missing += 1;
                return Ok(None);
            }
        };
        if !neighbors.is_empty() && raw.get(t + n).map(|e| e.episode) != Some(episode) {
            debug!("agent {agent}: step {t} delayed step crosses an episode boundary");
            report.skipped_boundary += 1;
            return Ok(None);
        }
        let mut terms = Vec::with_capacity(neighbors.len());
        let mut stale = Vec::with_capacity(neighbors.len());
        for &j in neighbors {
            let key = j as u32;
            let (Some(&(present, _)), Some(&(_, sent))) = (self.rewards.get(&(key, t)), self.rewards.get(&(key, t + n)))
            else {
                warn!("agent {agent}: neighbour {j} has no reward for step {t} or {}", t + n);
                report.skipped_missing += 1;
                return Ok(None);
            };
            let weight = if weighted {
                match self.weights.get(&(key, t)) {
                    Some(&w) => w,
                    None => {
                        warn!("agent {agent}: neighbour {j} sent no score for step {t}");
                        report.skipped_missing += 1;
                        return Ok(None);
                    }
                }
            } else {
                1.0
            };
            let (future, is_stale) = match self.fresh.get(&(key, t + n)) {
                Some(&v) => (v, false),
                None => (sent, self.watermark.is_none_or(|w| t + n > w)),
            };
            terms.push(NeighborTerm {
                future,
                present,
                weight,
            });
            stale.push(is_stale);
        }
        let corrected = spatial_differentiation(r, &terms, cfg)?;
        report.stale_terms += stale.iter().filter(|&&s| s).count();
        if audit {
            if terms.is_empty() {
                report.audit.push(AuditRow {
                    agent,
                    t,
                    episode,
                    raw: r,
                    amended: corrected,
                    neighbor: None,
                    ratio: None,
                    weight: None,
                    stale: false,
                });
            }
            for ((&j, term), &s) in neighbors.iter().zip(&terms).zip(&stale) {
                report.audit.push(AuditRow {
                    agent,
                    t,
                    episode,
                    raw: r,
                    amended: corrected,
                    neighbor: Some(j),
                    ratio: Some(neighbor_ratio(term, cfg.c)),
                    weight: Some(term.weight),
                    stale: s,
                });
            }
        }
        let entry = raw.get_mut(t).expect("entry checked above");
        debug_assert!(!entry.amended, "entry amended twice");
        entry.stored_reward = corrected;
        entry.amended = true;
        amended.push(Transition {
            reward: corrected,
            ..entry.transition.clone()
        });
        report.amended += 1;
        Ok(Some(corrected))
    }
}
