//! First-order meta-learning over budgets `K`: every task is the same
//! instance with a different arc budget. Each meta-epoch adapts a copy of the
//! meta-parameters to every task with PPO, takes one more PPO update on
//! trajectories from the adapted policy, and moves the meta-parameters toward
//! the mean of the task parameters (a Reptile-style first-order step).

use serde::{Deserialize, Serialize};

use crate::env::MdpConfig;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::nn::Mlp;
use crate::ppo::{init_networks, PpoConfig, TrainOutcome, Trainer};
use crate::rng::derive_seed;

const STREAM_TASK: u64 = 11;

/// Stop once the mean post-adaptation return fails to improve by more than
/// `rel_tol` (relative) for `patience` meta-epochs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Convergence {
    pub patience: usize,
    pub rel_tol: f64,
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub instance: Instance,
    pub k_values: Vec<usize>,
    pub adaptation_steps: usize,
    /// Policy learning rate inside tasks; the PPO policy rate when absent.
    pub inner_lr: Option<f64>,
    pub meta_lr: f64,
    /// Upper limit on meta-epochs (the only limit without `convergence`).
    pub meta_epochs: usize,
    pub convergence: Option<Convergence>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::invalid("k_values", "at least one budget is required"));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k == 0 || k > self.instance.arcs()) {
            return Err(Error::invalid(
                "k_values",
                format!("budget {k} is outside 1..={}", self.instance.arcs()),
            ));
        }
        if !(self.meta_lr > 0.0 && self.meta_lr.is_finite()) {
            return Err(Error::invalid("meta_lr", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Seed of the PPO streams used for task `index`.
pub fn task_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[STREAM_TASK, index as u64])
}

#[derive(Debug, Clone, Serialize)]
pub struct MetaRow {
    pub meta_epoch: usize,
    /// Environment steps across all tasks so far.
    pub steps: u64,
    /// Mean episode return of the post-adaptation batch, per task.
    pub task_returns: Vec<f64>,
    pub mean_return: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MetaReport {
    pub k_values: Vec<usize>,
    pub rows: Vec<MetaRow>,
}

impl MetaReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("meta_epoch,k,steps,post_adaptation_return\n");
        for r in &self.rows {
            for (k, ret) in self.k_values.iter().zip(&r.task_returns) {
                out.push_str(&format!("{},{},{},{}\n", r.meta_epoch, k, r.steps, ret));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MetaOutcome {
    pub policy: Mlp,
    pub value: Mlp,
    pub report: MetaReport,
}

/// `theta + meta_lr * mean_i(theta_i - theta)`, arranged so that identical
/// task parameters leave `theta` bit-for-bit unchanged and a single task with
/// `meta_lr = 1` returns that task's parameters exactly.
pub fn meta_update(theta: &Mlp, tasks: &[Mlp], meta_lr: f64) -> Result<Mlp> {
    if tasks.is_empty() {
        return Err(Error::invalid("tasks", "at least one task is required"));
    }
    let base = theta.to_flat();
    let flats: Vec<Vec<f64>> = tasks.iter().map(Mlp::to_flat).collect();
    if let Some(f) = flats.iter().find(|f| f.len() != base.len()) {
        return Err(Error::Dimension {
            field: "task parameters".into(),
            expected: base.len(),
            found: f.len(),
        });
    }
    let count = flats.len() as f64;
    let next: Vec<f64> = (0..base.len())
        .map(|p| {
            let mean = if flats.len() == 1 {
                flats[0][p]
            } else {
                base[p] + flats.iter().map(|f| f[p] - base[p]).sum::<f64>() / count
            };
            mean + (1.0 - meta_lr) * (base[p] - mean)
        })
        .collect();
    let mut out = theta.clone();
    out.set_flat(&next)?;
    Ok(out)
}

/// Meta-trains from a fresh initialization.
pub fn meta_train(spec: &TaskSpec, mdp: &MdpConfig, ppo: &PpoConfig) -> Result<MetaOutcome> {
    spec.validate()?;
    let first = spec.instance.with_budget(spec.k_values[0])?;
    let mdp0 = MdpConfig {
        horizon: first.budget,
        ..mdp.clone()
    };
    let (policy, value) = init_networks(&first, &mdp0, ppo);
    meta_train_from(spec, mdp, ppo, policy, value)
}

/// Meta-trains starting from the given parameters.
pub fn meta_train_from(spec: &TaskSpec, mdp: &MdpConfig, ppo: &PpoConfig, policy: Mlp, value: Mlp) -> Result<MetaOutcome> {
    spec.validate()?;
    let instances: Vec<Instance> = spec
        .k_values
        .iter()
        .map(|&k| spec.instance.with_budget(k))
        .collect::<Result<_>>()?;
    let mut trainers: Vec<Trainer<'_>> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let task_mdp = MdpConfig {
                horizon: inst.budget,
                ..mdp.clone()
            };
            let task_ppo = PpoConfig {
                seed: task_seed(ppo.seed, i),
                policy_lr: spec.inner_lr.unwrap_or(ppo.policy_lr),
                ..ppo.clone()
            };
            Trainer::with_params(inst, task_mdp, task_ppo, policy.clone(), value.clone())
        })
        .collect::<Result<_>>()?;

    let (mut policy, mut value) = (policy, value);
    let mut report = MetaReport {
        k_values: spec.k_values.clone(),
        rows: Vec::new(),
    };
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 0..spec.meta_epochs {
        let mut task_policies = Vec::with_capacity(trainers.len());
        let mut task_values = Vec::with_capacity(trainers.len());
        let mut task_returns = Vec::with_capacity(trainers.len());
        for trainer in &mut trainers {
            trainer.set_params(&policy, &value);
            for _ in 0..spec.adaptation_steps {
                trainer.iterate()?;
            }
            // update on trajectories collected by the adapted policy
            let post = trainer.iterate()?;
            task_returns.push(post.mean_return);
            task_policies.push(trainer.policy.clone());
            task_values.push(trainer.value.clone());
        }
        policy = meta_update(&policy, &task_policies, spec.meta_lr)?;
        value = meta_update(&value, &task_values, spec.meta_lr)?;
        let mean_return = task_returns.iter().sum::<f64>() / task_returns.len() as f64;
        log::info!("meta-epoch {} mean post-adaptation return {:.4}", epoch + 1, mean_return);
        report.rows.push(MetaRow {
            meta_epoch: epoch + 1,
            steps: trainers.iter().map(Trainer::steps).sum(),
            task_returns,
            mean_return,
        });
        if let Some(conv) = spec.convergence {
            if mean_return > best + conv.rel_tol * best.abs() {
                best = mean_return;
                stale = 0;
            } else {
                stale += 1;
                if stale >= conv.patience {
                    break;
                }
            }
        }
    }
    Ok(MetaOutcome { policy, value, report })
}

/// PPO on `instance` with budget `target_k`, initialized from meta-parameters.
pub fn adapt(
    policy: &Mlp,
    value: &Mlp,
    instance: &Instance,
    target_k: usize,
    mdp: &MdpConfig,
    ppo: &PpoConfig,
) -> Result<TrainOutcome> {
    if target_k == 0 || target_k > instance.arcs() {
        return Err(Error::invalid(
            "target_k",
            format!("budget {target_k} is outside 1..={}", instance.arcs()),
        ));
    }
    let inst = instance.with_budget(target_k)?;
    let task_mdp = MdpConfig {
        horizon: target_k,
        ..mdp.clone()
    };
    Trainer::with_params(&inst, task_mdp, ppo.clone(), policy.clone(), value.clone())?.train()
}
