mod common;

use flexdesign::env::{observe, Env, MdpConfig, MdpState};
use flexdesign::instance::{synthetic_instance, DemandModel, Matrix};
use flexdesign::nn::{self, Gradient, Layer, Mlp};
use flexdesign::ppo::{self, clip_target, Batch, PpoConfig, Trainer};
use flexdesign::{FlexNetwork, Instance};
use ndarray::{Array1, Array2};
use rand::Rng;

fn two_by_two() -> Instance {
    Instance::new(
        vec![1.0, 1.0],
        DemandModel::deterministic(vec![1.0, 1.0]),
        Matrix::from_rows("p", &[vec![2.0, 1.0], vec![1.0, 2.0]], 2, 2).unwrap(),
        Matrix::filled(2, 2, 0.0),
        2,
    )
    .unwrap()
}

fn small(seed: u64) -> PpoConfig {
    PpoConfig {
        hidden: vec![32, 16],
        episodes_per_epoch: 100,
        eval_samples: 20,
        max_steps: 20_000,
        early_stop_steps: 4_000,
        seed,
        ..PpoConfig::default()
    }
}

fn collected_batch(seed: u64) -> (Mlp, Batch) {
    let inst = synthetic_instance(3, 3, 3, seed).unwrap();
    let trainer = Trainer::new(&inst, MdpConfig::new(&inst), small(seed)).unwrap();
    let mut trajs = trainer.collect().unwrap();
    let mut rng = common::rng(seed);
    for t in &mut trajs {
        // any advantages will do for the identities below
        t.advantages = t.actions.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        t.returns = t.advantages.clone();
    }
    (trainer.policy.clone(), Batch::from_trajectories(&trajs, false))
}

#[test]
fn surrogate_at_behavior_policy_is_mean_advantage() {
    for seed in 0..5 {
        let (policy, batch) = collected_batch(seed);
        let s = ppo::clipped_surrogate(&policy, &batch, 0.2).unwrap();
        let mean = batch.advantages.iter().sum::<f64>() / batch.len() as f64;
        assert!((s.objective - mean).abs() < 1e-8, "{} vs {mean}", s.objective);
        assert!(s.approx_kl.abs() < 1e-12);
        assert_eq!(s.clip_frac, 0.0);
    }
}

#[test]
fn surrogate_gradient_is_the_policy_gradient() {
    let (policy, batch) = collected_batch(9);
    let s = ppo::clipped_surrogate(&policy, &batch, 0.2).unwrap();
    // mean_t A_t grad log pi(a_t | s_t), one sample at a time
    let mut pg = Gradient::zeros_like(&policy);
    let count = batch.len() as f64;
    for r in 0..batch.len() {
        let obs: Vec<f64> = batch.observations.row(r).to_vec();
        let probs = nn::policy_distribution(&policy, &obs).unwrap().probs();
        let mut cot: Vec<f64> = probs.iter().map(|p| -p).collect();
        cot[batch.actions[r]] += 1.0;
        cot.iter_mut().for_each(|c| *c *= batch.advantages[r] / count);
        pg.add_assign(&policy.backward(&obs, &cot).unwrap());
    }
    for (a, b) in s.gradient.iter().zip(pg.iter()) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn clip_target_on_a_grid() {
    for i in -20..=20 {
        let a = i as f64 * 0.37;
        for eps in [0.05, 0.1, 0.2, 0.3] {
            let want = if a >= 0.0 { (1.0 + eps) * a } else { (1.0 - eps) * a };
            assert_eq!(clip_target(eps, a), want);
            // at ratio 1 the unclipped term is never above the target
            assert!(a <= clip_target(eps, a));
        }
    }
}

#[test]
fn training_is_reproducible() {
    let inst = synthetic_instance(3, 3, 3, 1).unwrap();
    let cfg = PpoConfig {
        max_steps: 1_500,
        ..small(4)
    };
    let a = ppo::train(&inst, MdpConfig::new(&inst), cfg.clone()).unwrap();
    let b = ppo::train(&inst, MdpConfig::new(&inst), cfg).unwrap();
    assert_eq!(a.report.to_csv(true), b.report.to_csv(true));
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.report.rows.len(), 6);
    for w in a.report.rows.windows(2) {
        assert_eq!(w[1].step - w[0].step, 100 * 3);
    }
}

#[test]
fn two_by_two_policy_finds_the_diagonal() {
    let inst = two_by_two();
    let mut mdp = MdpConfig::new(&inst);
    mdp.omega = 1;
    let out = ppo::train(&inst, mdp.clone(), small(2)).unwrap();
    // brute force over all two-arc networks
    let samples = inst.sample(0, 1);
    let mut best = (f64::NEG_INFINITY, FlexNetwork::empty(2, 2));
    for a in 0..4 {
        for b in a + 1..4 {
            let net = FlexNetwork::from_mask(2, 2, (0..4).map(|k| k == a || k == b).collect());
            let v = flexdesign::fdp_objective_estimate(&inst, &net, &samples, 1).unwrap();
            if v > best.0 {
                best = (v, net);
            }
        }
    }
    let env = Env::new(&inst, mdp).unwrap();
    let design = ppo::greedy_design(&env, &out.policy).unwrap();
    assert_eq!(design, best.1);
    assert_eq!(out.best_eval, 4.0);
}

#[test]
fn saturated_policy_yields_one_candidate() {
    let inst = synthetic_instance(2, 2, 3, 6).unwrap();
    let mdp = MdpConfig::new(&inst);
    let mut bias = Array1::zeros(4);
    bias[2] = 1e4;
    let policy = Mlp::from_layers(vec![Layer {
        weight: Array2::zeros((5, 4)),
        bias,
    }])
    .unwrap();
    let samples = inst.sample(3, 200);
    let ex = ppo::extract_designs(&policy, &inst, &mdp, 50, &samples, 1).unwrap();
    assert_eq!(ex.candidates.len(), 1);
    assert_eq!(ex.best.arc_list(), vec![(1, 0)]);
    let want = flexdesign::fdp_objective_estimate(&inst, &ex.best, &samples, 200).unwrap();
    assert_eq!(ex.best_score, want);
}

#[test]
fn extraction_returns_the_best_candidate() {
    let inst = synthetic_instance(3, 3, 3, 6).unwrap();
    let mdp = MdpConfig::new(&inst);
    let policy = Mlp::new(&ppo::policy_sizes(&inst, &mdp, &[8]), 1.0, 2);
    let ex = ppo::extract_designs(&policy, &inst, &mdp, 50, &inst.sample(3, 100), 1).unwrap();
    assert!(ex.candidates.len() > 1);
    let max = ex.candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(ex.best_score, max);
    assert!(ex.candidates.iter().all(|c| c.0.arc_count() <= 3));
}

#[test]
fn observation_layout_matches_the_policy_input() {
    let inst = synthetic_instance(2, 3, 2, 0).unwrap();
    let mdp = MdpConfig::new(&inst);
    let sizes = ppo::policy_sizes(&inst, &mdp, &[5]);
    let s = MdpState {
        network: inst.empty_network(),
        step: 0,
    };
    assert_eq!(observe(&s, 2).len(), sizes[0]);
    assert_eq!(*sizes.last().unwrap(), 6);
}
