mod common;

use proptest::prelude::*;
use tsc_core::agent::{self, checkpoint, AdamConfig, OptimizerState};
use tsc_core::rng::stream;
use tsc_core::{LocalView, QArch, QFunction, TargetQFunction, Transition};

use common::{gradient_check, gradient_draw, q_oracle, random_view, solve_chain};

fn set(qf: &mut QFunction, name: &str, values: &[f64]) {
    qf.tensor_mut(name).unwrap().copy_from_slice(values);
}

#[test]
fn q_values_match_scalar_oracle() {
    for seed in 0..20 {
        for attention in [false, true] {
            let (qf, batch) = gradient_draw(seed, attention);
            for (view, _, _) in &batch {
                let got = agent::q_values(&qf, view).unwrap();
                let want = q_oracle(&qf, view);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12, "{g} vs {w}");
                }
            }
        }
    }
}

#[test]
fn default_sized_network_matches_oracle() {
    let arch = QArch::plain(20, vec![64, 64], 8);
    let qf = QFunction::random(arch, &mut stream(1, "init/0")).unwrap();
    let v = random_view(&mut stream(1, "view"), 20, 1);
    let got = agent::q_values(&qf, &v).unwrap();
    for (g, w) in got.iter().zip(q_oracle(&qf, &v)) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn greedy_examples() {
    assert_eq!(agent::greedy(&[1.0, 3.0, 2.0]), 1);
    assert_eq!(agent::greedy(&[2.0, 2.0]), 0);
}

#[test]
fn epsilon_zero_acts_greedily() {
    let mut qf = QFunction::zeros(QArch::plain(2, vec![4], 3)).unwrap();
    set(&mut qf, "advantage.bias", &[1.0, 3.0, 2.0]);
    let mut rng = stream(0, "explore/0");
    for _ in 0..100 {
        assert_eq!(agent::act(&qf, &LocalView::single(vec![0.0, 0.0]), 0.0, &mut rng).unwrap(), 1);
    }
}

#[test]
fn epsilon_one_is_uniform_within_three_sigma() {
    let actions = 4;
    let qf = QFunction::zeros(QArch::plain(2, vec![4], actions)).unwrap();
    let view = LocalView::single(vec![0.0, 0.0]);
    let mut rng = stream(5, "explore/0");
    let draws = 10_000;
    let mut counts = vec![0usize; actions];
    for _ in 0..draws {
        counts[agent::act(&qf, &view, 1.0, &mut rng).unwrap()] += 1;
    }
    let p = 1.0 / actions as f64;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{c} vs {mean} +- {sigma}");
    }
}

#[test]
fn double_q_target_uses_eval_argmax() {
    let arch = QArch::plain(2, vec![4], 3);
    let mut eval = QFunction::zeros(arch.clone()).unwrap();
    set(&mut eval, "advantage.bias", &[0.0, 0.0, 1.0]);
    // Target alone would pick action 0; its value at action 2 is exactly 5.
    let mut target = QFunction::zeros(arch).unwrap();
    set(&mut target, "advantage.bias", &[3.0, -1.0, 0.0]);
    set(&mut target, "value.bias", &[5.0 - 0.0 + 2.0 / 3.0]);
    let tq = TargetQFunction::from_eval(&target);
    let next = LocalView::single(vec![0.3, -0.2]);
    assert!((agent::q_values(&target, &next).unwrap()[2] - 5.0).abs() < 1e-12);
    let y = agent::td_target(&tq, &eval, 1.0, &next, 0.9, false).unwrap();
    assert!((y - 5.5).abs() < 1e-12, "{y}");
}

#[test]
fn terminal_target_is_the_reward() {
    let qf = QFunction::random(QArch::plain(2, vec![4], 3), &mut stream(2, "init/0")).unwrap();
    let tq = TargetQFunction::from_eval(&qf);
    let next = LocalView::single(vec![1.0, 1.0]);
    assert_eq!(agent::td_target(&tq, &qf, -4.0, &next, 0.8, true).unwrap(), -4.0);
    assert_eq!(agent::td_target(&tq, &qf, -4.0, &next, 0.0, false).unwrap(), -4.0);
}

#[test]
fn zero_error_batch_leaves_parameters_unchanged() {
    let mut qf = QFunction::random(QArch::plain(3, vec![6, 6], 2), &mut stream(3, "init/0")).unwrap();
    let tq = TargetQFunction::from_eval(&qf);
    let mut opt = OptimizerState::new(qf.params().len(), AdamConfig::default());
    let mut rng = stream(3, "batch");
    let batch: Vec<Transition> = (0..8)
        .map(|k| {
            let obs = random_view(&mut rng, 3, 1);
            let action = k % 2;
            let reward = agent::q_values(&qf, &obs).unwrap()[action];
            Transition {
                next: obs.clone(),
                obs,
                action,
                reward,
                terminal: true,
            }
        })
        .collect();
    let before = qf.params().to_vec();
    let loss = agent::train_step(&mut qf, &tq, &mut opt, &batch, 0.8).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(qf.params(), &before[..]);
}

#[test]
fn target_starts_equal_and_sync_copies() {
    let mut rng = stream(4, "init/0");
    let mut qf = QFunction::random(QArch::plain(3, vec![5], 2), &mut rng).unwrap();
    let mut tq = TargetQFunction::from_eval(&qf);
    let view = random_view(&mut rng, 3, 1);
    assert_eq!(agent::q_values(&qf, &view).unwrap(), agent::q_values(tq.as_q(), &view).unwrap());
    for p in qf.params_mut() {
        *p += 0.1;
    }
    assert_ne!(agent::q_values(&qf, &view).unwrap(), agent::q_values(tq.as_q(), &view).unwrap());
    agent::sync_target(&qf, &mut tq).unwrap();
    let once = tq.as_q().params().to_vec();
    agent::sync_target(&qf, &mut tq).unwrap();
    assert_eq!(tq.as_q().params(), &once[..]);
    assert_eq!(agent::q_values(&qf, &view).unwrap(), agent::q_values(tq.as_q(), &view).unwrap());
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..10 {
        for attention in [false, true] {
            let (qf, batch) = gradient_draw(seed, attention);
            let err = gradient_check(&qf, &batch, 1e-5);
            assert!(err < 1e-4, "seed {seed} attention {attention}: {err}");
        }
    }
}

#[test]
fn two_state_mdp_reaches_bellman_fixed_point() {
    // State 0 --a1--> state 1 pays 1; every other move returns to state 0 for 0.
    let gamma = 0.8;
    let step = |s: usize, a: usize| if s == 0 && a == 1 { (1, 1.0) } else { (0, 0.0) };
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..2000 {
        let mut next = q;
        for s in 0..2 {
            for a in 0..2 {
                let (s2, r) = step(s, a);
                next[s][a] = r + gamma * q[s2][0].max(q[s2][1]);
            }
        }
        q = next;
    }
    let view = |s: usize| LocalView::single(if s == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
    let batch: Vec<Transition> = (0..2)
        .flat_map(|s| (0..2).map(move |a| (s, a)))
        .map(|(s, a)| {
            let (s2, r) = step(s, a);
            Transition {
                obs: view(s),
                action: a,
                reward: r,
                next: view(s2),
                terminal: false,
            }
        })
        .collect();
    let mut qf = QFunction::random(QArch::plain(2, vec![64, 64], 2), &mut stream(9, "init/0")).unwrap();
    let mut tq = TargetQFunction::from_eval(&qf);
    let mut opt = OptimizerState::new(qf.params().len(), AdamConfig::default());
    for k in 1..=20_000 {
        agent::train_step(&mut qf, &tq, &mut opt, &batch, gamma).unwrap();
        if k % 100 == 0 {
            agent::sync_target(&qf, &mut tq).unwrap();
        }
    }
    for s in 0..2 {
        let got = agent::q_values(&qf, &view(s)).unwrap();
        for a in 0..2 {
            assert!((got[a] - q[s][a]).abs() < 1e-2, "Q({s},{a}) = {} vs {}", got[a], q[s][a]);
        }
    }
}

#[test]
fn three_state_chain_converges() {
    let (hit, err) = solve_chain(0, 0.8, 1e-2, 20_000, 100);
    assert!(hit.is_some(), "max error {err}");
}

#[test]
fn checkpoint_restores_q_values() {
    let mut rng = stream(6, "init/0");
    let a = QFunction::random(QArch::plain(4, vec![8], 3), &mut rng).unwrap();
    let b = QFunction::random(QArch::with_attention(4, vec![8], 2, 3), &mut rng).unwrap();
    let mut bytes = Vec::new();
    checkpoint::write_checkpoint(&mut bytes, &[("a", &a), ("b", &b)]).unwrap();
    let back = checkpoint::read_checkpoint(&bytes[..]).unwrap();
    assert_eq!(back.len(), 2);
    let v = random_view(&mut rng, 4, 2);
    assert_eq!(agent::q_values(&back[1].1, &v).unwrap(), agent::q_values(&b, &v).unwrap());
    assert_eq!(back[0].1.params(), a.params());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn advantages_are_centred(seed: u64, obs in 1usize..6, actions in 1usize..9) {
        let qf = QFunction::random(QArch::plain(obs, vec![7, 5], actions), &mut stream(seed, "init/0")).unwrap();
        let v = random_view(&mut stream(seed, "view"), obs, 1);
        let q = agent::q_values(&qf, &v).unwrap();
        // Recover V from the value head alone by zeroing the advantage stream.
        let mut value_only = qf.clone();
        value_only.tensor_mut("advantage.weight").unwrap().fill(0.0);
        value_only.tensor_mut("advantage.bias").unwrap().fill(0.0);
        let value = agent::q_values(&value_only, &v).unwrap()[0];
        let mean: f64 = q.iter().map(|x| x - value).sum::<f64>() / actions as f64;
        prop_assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn equal_advantages_give_value(k in -5.0f64..5.0, actions in 1usize..9) {
        let mut qf = QFunction::random(QArch::plain(3, vec![4], actions), &mut stream(1, "init/0")).unwrap();
        qf.tensor_mut("advantage.weight").unwrap().fill(0.0);
        qf.tensor_mut("advantage.bias").unwrap().fill(k);
        let v = LocalView::single(vec![0.2, -0.4, 0.9]);
        let q = agent::q_values(&qf, &v).unwrap();
        prop_assert!(q.iter().all(|&x| (x - q[0]).abs() < 1e-12));
    }
}
