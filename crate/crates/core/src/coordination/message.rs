//! Neighbour-to-neighbour messages. Agents never see another agent's buffer
//! directly; everything they learn about a neighbour arrives in an inbox.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{CoordinationError, RawBuffer, RawEntry};

/// Reward report from neighbour `from` about its step `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborMessage {
    pub from: u32,
    pub t: u64,
    pub raw: f64,
    pub stored: f64,
}

/// Target attention weight that `from` places on the recipient at step `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreMessage {
    pub from: u32,
    pub t: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inbox {
    pub rewards: Vec<NeighborMessage>,
    pub scores: Vec<ScoreMessage>,
}

impl Inbox {
    pub fn sources(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.rewards.iter().map(|m| m.from).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub(crate) fn score_index(&self) -> HashMap<(u32, u64), f64> {
        self.scores.iter().map(|m| ((m.from, m.t), m.weight)).collect()
    }
}

/// Supplies an agent's own target attention row, computed from its own data.
pub trait ScoreSource: Sync {
    /// Row of agent `j` for its own buffered step `entry`, over
    /// `[j, neighbors(j)...]`, or `None` when every neighbour term carries
    /// unit weight.
    fn row(&self, j: usize, entry: &RawEntry) -> Result<Option<Vec<f64>>, CoordinationError>;

    /// Whether rows are real weights; unit sources send no score messages.
    fn weighted(&self) -> bool {
        true
    }
}

/// Plain spatial differentiation: every neighbour weighs 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitWeights;

impl ScoreSource for UnitWeights {
    fn row(&self, _j: usize, _entry: &RawEntry) -> Result<Option<Vec<f64>>, CoordinationError> {
        Ok(None)
    }

    fn weighted(&self) -> bool {
        false
    }
}

/// Every agent `j` sends each neighbour its rewards for the steps after its
/// watermark, plus, when available, the score its target attention places on
/// that neighbour. Returns one inbox per agent.
pub fn exchange_neighbor_rewards(
    raw: &[RawBuffer],
    neighbors: &[Vec<usize>],
    n: u64,
    scores: &dyn ScoreSource,
) -> Result<Vec<Inbox>, CoordinationError> {
    if raw.len() != neighbors.len() {
        return Err(CoordinationError::Contract(format!(
            "{} buffers for {} neighbour lists",
            raw.len(),
            neighbors.len()
        )));
    }
    let outgoing = (0..raw.len())
        .into_par_iter()
        .map(|j| {
            let from = j as u32;
            let rewards: Vec<NeighborMessage> = raw[j]
                .pending()
                .map(|e| NeighborMessage {
                    from,
                    t: e.t,
                    raw: e.transition.reward,
                    stored: e.stored_reward,
                })
                .collect();
            let latest = raw[j].latest();
            let mut per_target: Vec<Vec<ScoreMessage>> = vec![Vec::new(); neighbors[j].len()];
            for e in raw[j].pending() {
                if latest.is_none_or(|l| e.t + n > l) {
                    break;
                }
                if let Some(row) = scores.row(j, e)? {
                    if row.len() != neighbors[j].len() + 1 {
                        return Err(CoordinationError::Contract(format!(
                            "score row of agent {j} has {} entries for {} neighbours",
                            row.len(),
                            neighbors[j].len()
                        )));
                    }
                    for (k, out) in per_target.iter_mut().enumerate() {
                        out.push(ScoreMessage {
                            from,
                            t: e.t,
                            weight: row[k + 1],
                        });
                    }
                }
            }
            Ok((rewards, per_target))
        })
        .collect::<Result<Vec<_>, CoordinationError>>()?;

    let mut inboxes = vec![Inbox::default(); raw.len()];
    for (j, (rewards, per_target)) in outgoing.into_iter().enumerate() {
        for (&i, scores) in neighbors[j].iter().zip(per_target) {
            let inbox = inboxes.get_mut(i).ok_or_else(|| {
                CoordinationError::Contract(format!("agent {j} lists unknown neighbour {i}"))
            })?;
            inbox.rewards.extend_from_slice(&rewards);
            inbox.scores.extend(scores);
        }
    }
    Ok(inboxes)
}
