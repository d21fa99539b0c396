//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use tsc_core::agent::{self, AdamConfig, OptimizerState, Regression};
use tsc_core::rng::stream;
use tsc_core::{LocalView, QArch, QFunction, TargetQFunction, Transition};

fn tensor<'a>(qf: &'a QFunction, name: &str) -> &'a [f64] {
    let spec = qf.layout().get(name).unwrap_or_else(|| panic!("missing tensor {name}"));
    &qf.params()[spec.range()]
}

/// `W x + b` with row-major `W` of shape `b.len() x x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    (0..b.len())
        .map(|r| {
            let mut s = b[r];
            for c in 0..x.len() {
                s += w[r * x.len() + c] * x[c];
            }
            s
        })
        .collect()
}

fn linear(w: &[f64], x: &[f64]) -> Vec<f64> {
    affine(w, &vec![0.0; w.len() / x.len()], x)
}

/// Attention scores over every slot of `view`, recomputed loop by loop.
pub fn attention_row_oracle(qf: &QFunction, view: &LocalView) -> Vec<f64> {
    let z: Vec<Vec<f64>> = view
        .slots
        .iter()
        .map(|o| affine(tensor(qf, "attention.embed.weight"), tensor(qf, "attention.embed.bias"), o))
        .collect();
    let q = linear(tensor(qf, "attention.query"), &z[0]);
    let logits: Vec<f64> = z
        .iter()
        .map(|zk| {
            let k = linear(tensor(qf, "attention.key"), zk);
            k.iter().zip(&q).map(|(a, b)| a * b).sum()
        })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Straight-line `V + A - mean(A)` evaluation by tensor name.
pub fn q_oracle(qf: &QFunction, view: &LocalView) -> Vec<f64> {
    let arch = qf.arch();
    let mut x = match arch.attention {
        None => view.slots[0].to_vec(),
        Some(d) => {
            let alpha = attention_row_oracle(qf, view);
            let z: Vec<Vec<f64>> = view
                .slots
                .iter()
                .map(|o| affine(tensor(qf, "attention.embed.weight"), tensor(qf, "attention.embed.bias"), o))
                .collect();
            let mut h = vec![0.0; d];
            for (a, zk) in alpha.iter().zip(&z) {
                for (hi, zi) in h.iter_mut().zip(zk) {
                    *hi += a * zi;
                }
            }
            let mut input: Vec<f64> = h.into_iter().map(|v| v.max(0.0)).collect();
            input.extend_from_slice(&z[0]);
            input
        }
    };
    for k in 0..arch.hidden.len() {
        x = affine(
            tensor(qf, &format!("trunk.{k}.weight")),
            tensor(qf, &format!("trunk.{k}.bias")),
            &x,
        )
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    }
    let v = affine(tensor(qf, "value.weight"), tensor(qf, "value.bias"), &x)[0];
    let a = affine(tensor(qf, "advantage.weight"), tensor(qf, "advantage.bias"), &x);
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    a.iter().map(|ai| v + ai - mean).collect()
}

/// Corrected reward evaluated term by term, with the zero-denominator rule.
pub fn corrected_reward_oracle(r: f64, terms: &[(f64, f64, f64)], gamma: f64, c: f64) -> f64 {
    let mut s = 0.0;
    for &(future, present, w) in terms {
        let ratio = if present.abs() < 1e-9 { c } else { future / present };
        s += w * (ratio - c);
    }
    r * (1.0 + gamma * s.tanh())
}

pub fn random_view(rng: &mut impl Rng, obs_dim: usize, slots: usize) -> LocalView {
    LocalView::new(
        (0..slots)
            .map(|_| (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>().into())
            .collect::<Vec<Arc<[f64]>>>(),
    )
}

/// Largest relative discrepancy between the analytic loss gradient and
/// central differences with step `h`. The denominator is floored at 1e-6 so
/// parameters with vanishing gradient compare absolutely.
pub fn gradient_check(qf: &QFunction, batch: &[Regression], h: f64) -> f64 {
    let (_, grad) = agent::loss_and_gradient(qf, batch).unwrap();
    let mut probe = qf.clone();
    let mut worst: f64 = 0.0;
    for k in 0..grad.len() {
        let x = probe.params()[k];
        probe.params_mut()[k] = x + h;
        let up = agent::loss(&probe, batch).unwrap();
        probe.params_mut()[k] = x - h;
        let down = agent::loss(&probe, batch).unwrap();
        probe.params_mut()[k] = x;
        let numeric = (up - down) / (2.0 * h);
        let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Random network plus regression batch for gradient checks.
pub fn gradient_draw(seed: u64, attention: bool) -> (QFunction, Vec<Regression>) {
    let mut rng = stream(seed, "gradient-draw");
    let obs = rng.gen_range(3..8);
    let actions = rng.gen_range(2..6);
    let arch = if attention {
        QArch::with_attention(obs, vec![8, 8], actions, rng.gen_range(2..6))
    } else {
        QArch::plain(obs, vec![8, 8], actions)
    };
    let mut qf = QFunction::random(arch, &mut rng).unwrap();
    // Initial biases are zero, so a sample whose first layer is fully inactive
    // would sit exactly on a rectifier kink. Jitter every parameter off it.
    for p in qf.params_mut() {
        *p += rng.gen_range(-0.2..0.2);
    }
    let slots = if attention { rng.gen_range(1..5) } else { 1 };
    let batch = (0..4)
        .map(|_| {
            let v = random_view(&mut rng, obs, slots);
            (v, rng.gen_range(0..actions), rng.gen_range(-2.0..2.0))
        })
        .collect();
    (qf, batch)
}

/// Three-state chain: `left` moves towards state 0, `right` towards state 2.
/// Staying put at the right end pays 1; bumping the left wall pays 0.2.
pub struct Chain;

impl Chain {
    pub const STATES: usize = 3;
    pub const ACTIONS: usize = 2;

    pub fn step(s: usize, a: usize) -> (usize, f64) {
        match a {
            0 => (s.saturating_sub(1), if s == 0 { 0.2 } else { 0.0 }),
            _ => ((s + 1).min(2), if s == 2 { 1.0 } else { 0.0 }),
        }
    }

    pub fn one_hot(s: usize) -> LocalView {
        let mut o = vec![0.0; Self::STATES];
        o[s] = 1.0;
        LocalView::single(o)
    }

    /// Fixed point of the Bellman optimality operator by value iteration.
    pub fn value_iteration(gamma: f64) -> Vec<[f64; 2]> {
        let mut q = vec![[0.0f64; 2]; Self::STATES];
        loop {
            let mut next = q.clone();
            for (s, row) in next.iter_mut().enumerate() {
                for (a, v) in row.iter_mut().enumerate() {
                    let (s2, r) = Self::step(s, a);
                    *v = r + gamma * q[s2][0].max(q[s2][1]);
                }
            }
            let delta = next
                .iter()
                .zip(&q)
                .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
                .fold(0.0, f64::max);
            q = next;
            if delta < 1e-14 {
                return q;
            }
        }
    }

    pub fn transitions() -> Vec<Transition> {
        let mut out = Vec::new();
        for s in 0..Self::STATES {
            for a in 0..Self::ACTIONS {
                let (s2, r) = Self::step(s, a);
                out.push(Transition {
                    obs: Self::one_hot(s),
                    action: a,
                    reward: r,
                    next: Self::one_hot(s2),
                    terminal: false,
                });
            }
        }
        out
    }
}

pub fn max_q_error(qf: &QFunction, oracle: &[[f64; 2]]) -> f64 {
    let mut worst: f64 = 0.0;
    for (s, row) in oracle.iter().enumerate() {
        let q = agent::q_values(qf, &Chain::one_hot(s)).unwrap();
        for a in 0..2 {
            worst = worst.max((q[a] - row[a]).abs());
        }
    }
    worst
}

/// Trains a default-sized dueling double-Q agent on the chain, one full
/// sweep of transitions per step with a target sync every `sync` steps.
/// Returns the step at which the max Q error first dropped below `tol`.
pub fn solve_chain(seed: u64, gamma: f64, tol: f64, max_steps: usize, sync: usize) -> (Option<usize>, f64) {
    let oracle = Chain::value_iteration(gamma);
    let arch = QArch::plain(Chain::STATES, vec![64, 64], Chain::ACTIONS);
    let mut qf = QFunction::random(arch, &mut stream(seed, "init/0")).unwrap();
    let mut tq = TargetQFunction::from_eval(&qf);
    let mut opt = OptimizerState::new(qf.params().len(), AdamConfig::default());
    let batch = Chain::transitions();
    for step in 1..=max_steps {
        agent::train_step(&mut qf, &tq, &mut opt, &batch, gamma).unwrap();
        if step % sync == 0 {
            agent::sync_target(&qf, &mut tq).unwrap();
        }
        if step % 50 == 0 {
            let err = max_q_error(&qf, &oracle);
            if err < tol {
                return (Some(step), err);
            }
        }
    }
    (None, max_q_error(&qf, &oracle))
}
