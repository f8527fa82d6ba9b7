//! PPO-Clip on the arc-adding MDP: GAE advantages, clipped surrogate with a
//! KL gate, squared-error value regression, per-epoch evaluation of the
//! greedy-decoded and most frequent sampled designs, and early stopping on
//! that evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::env::{encode_observation, observation_len, Env, MdpConfig, MdpState};
use crate::error::{Error, Result};
use crate::instance::{FlexNetwork, Instance, SampleSet};
use crate::nn::{Adam, Categorical, Gradient, Mlp, DEFAULT_HIDDEN, POLICY_OUTPUT_GAIN};
use crate::oracle;
use crate::par;
use crate::rng::{self, derive_seed};

const STREAM_POLICY_INIT: u64 = 1;
const STREAM_VALUE_INIT: u64 = 2;
const STREAM_ACTIONS: u64 = 3;
const STREAM_DEMAND: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_EXTRACT: u64 = 6;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_ratio: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub policy_iters: usize,
    pub value_iters: usize,
    pub target_kl: f64,
    pub episodes_per_epoch: usize,
    /// Stop once the best evaluation has not improved for this many environment steps.
    pub early_stop_steps: u64,
    pub max_steps: u64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Size of the fixed evaluation sample set.
    pub eval_samples: usize,
    /// Seed of the evaluation samples; derived from `seed` when absent.
    pub eval_seed: Option<u64>,
    /// Rewards are divided by this before learning. When absent it is fixed
    /// after the first epoch to the spread of that epoch's returns.
    pub reward_scale: Option<f64>,
    pub normalize_advantages: bool,
    /// Besides the greedy-decoded design, evaluate this many of the most
    /// frequent final networks of each epoch's episodes.
    pub eval_top_designs: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.999,
            clip_ratio: 0.2,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            policy_iters: 80,
            value_iters: 80,
            target_kl: 0.01,
            episodes_per_epoch: 800,
            early_stop_steps: 48_000,
            max_steps: 5_000_000,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            eval_samples: 5000,
            eval_seed: None,
            reward_scale: None,
            normalize_advantages: true,
            eval_top_designs: 5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda", "must lie in [0, 1]"));
        }
        if !(self.clip_ratio > 0.0) {
            return Err(Error::invalid("clip_ratio", "must be positive"));
        }
        if self.episodes_per_epoch == 0 {
            return Err(Error::invalid("episodes_per_epoch", "must be at least 1"));
        }
        if self.eval_samples == 0 {
            return Err(Error::invalid("eval_samples", "must be at least 1"));
        }
        if matches!(self.reward_scale, Some(s) if !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("reward_scale", "must be positive and finite"));
        }
        Ok(())
    }

    fn eval_seed(&self) -> u64 {
        self.eval_seed.unwrap_or_else(|| derive_seed(self.seed, &[STREAM_EVAL]))
    }
}

/// `R_t = r_t + gamma R_{t+1}`, with zero after the last step.
pub fn compute_rewards_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalized advantage estimates with a zero terminal value.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let k = rewards.len();
    let mut out = vec![0.0; k];
    let mut acc = 0.0;
    for t in (0..k).rev() {
        let next = if t + 1 < k { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

/// The clip target: `(1 + eps) A` for `A >= 0`, `(1 - eps) A` otherwise.
pub fn clip_target(eps: f64, advantage: f64) -> f64 {
    if advantage >= 0.0 {
        (1.0 + eps) * advantage
    } else {
        (1.0 - eps) * advantage
    }
}

/// One episode. Rewards are raw; returns, values and advantages are in scaled units.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub final_network: FlexNetwork,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn finish(&mut self, scale: f64, gamma: f64, lambda: f64) {
        let scaled: Vec<f64> = self.rewards.iter().map(|r| r / scale).collect();
        self.returns = compute_rewards_to_go(&scaled, gamma);
        self.advantages = compute_gae(&scaled, &self.values, gamma, lambda);
    }
}

/// Flattened `(trajectory, step)` pairs for an update.
#[derive(Debug, Clone)]
pub struct Batch {
    pub observations: Array2<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn from_trajectories(trajectories: &[Trajectory], normalize_advantages: bool) -> Self {
        let rows: usize = trajectories.iter().map(|t| t.actions.len()).sum();
        let width = trajectories.first().map_or(0, |t| t.observations[0].len());
        let mut observations = Array2::zeros((rows, width));
        let mut r = 0;
        for t in trajectories {
            for o in &t.observations {
                observations.row_mut(r).assign(&ArrayView2::from_shape((1, width), o).unwrap().row(0));
                r += 1;
            }
        }
        let flat = |f: fn(&Trajectory) -> &Vec<f64>| -> Vec<f64> {
            trajectories.iter().flat_map(|t| f(t).iter().copied()).collect()
        };
        let mut advantages = flat(|t| &t.advantages);
        if normalize_advantages && advantages.len() > 1 {
            let mean = oracle::mean(&advantages);
            let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / advantages.len() as f64;
            let sd = var.sqrt() + 1e-8;
            advantages.iter_mut().for_each(|a| *a = (*a - mean) / sd);
        }
        Batch {
            observations,
            actions: trajectories.iter().flat_map(|t| t.actions.iter().copied()).collect(),
            log_probs: flat(|t| &t.log_probs),
            advantages,
            returns: flat(|t| &t.returns),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn log_softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - lse);
    }
}

/// Clipped surrogate `mean min(ratio A, g(eps, A))` and its gradient (for ascent).
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub objective: f64,
    pub gradient: Gradient,
    /// `mean(old_logp - new_logp)`.
    pub approx_kl: f64,
    pub clip_frac: f64,
}

pub fn clipped_surrogate(policy: &Mlp, batch: &Batch, clip_ratio: f64) -> Result<Surrogate> {
    let cache = policy.forward_cached(batch.observations.view())?;
    let mut logp = cache.output().clone();
    log_softmax_rows(&mut logp);
    let count = batch.len() as f64;
    let mut cot = Array2::<f64>::zeros(logp.raw_dim());
    let (mut objective, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    for (r, (&a, (&old, &adv))) in batch
        .actions
        .iter()
        .zip(batch.log_probs.iter().zip(&batch.advantages))
        .enumerate()
    {
        let new = logp[[r, a]];
        let ratio = (new - old).exp();
        let plain = ratio * adv;
        let target = clip_target(clip_ratio, adv);
        kl += old - new;
        if (ratio - 1.0).abs() > clip_ratio {
            clipped += 1;
        }
        if plain <= target {
            objective += plain;
            // d(ratio A)/dlogits = ratio A (onehot(a) - probs)
            let coef = plain / count;
            let mut row = cot.row_mut(r);
            for (c, &l) in row.iter_mut().zip(logp.row(r)) {
                *c = -coef * l.exp();
            }
            row[a] += coef;
        } else {
            objective += target;
        }
    }
    let gradient = policy.backward_batch(&cache, cot.view())?;
    let objective = objective / count;
    if !objective.is_finite() {
        return Err(Error::Numerical(format!("policy surrogate is {objective}")));
    }
    Ok(Surrogate {
        objective,
        gradient,
        approx_kl: kl / count,
        clip_frac: clipped as f64 / count,
    })
}

/// Mean squared value error and its gradient (for descent).
pub fn value_loss(value: &Mlp, batch: &Batch) -> Result<(f64, Gradient)> {
    let cache = value.forward_cached(batch.observations.view())?;
    let count = batch.len() as f64;
    let pred = cache.output();
    let mut cot = Array2::<f64>::zeros(pred.raw_dim());
    let mut loss = 0.0;
    for (r, &ret) in batch.returns.iter().enumerate() {
        let e = pred[[r, 0]] - ret;
        loss += e * e;
        cot[[r, 0]] = 2.0 * e / count;
    }
    let loss = loss / count;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("value loss is {loss}")));
    }
    Ok((loss, value.backward_batch(&cache, cot.view())?))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct UpdateStats {
    pub policy_steps: usize,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Optimizers of one policy/value pair.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub policy: Adam,
    pub value: Adam,
}

impl Optimizers {
    pub fn new(policy: &Mlp, value: &Mlp) -> Self {
        Optimizers {
            policy: Adam::for_net(policy),
            value: Adam::for_net(value),
        }
    }
}

/// Up to `policy_iters` clipped-surrogate ascent steps (stopping as soon as the
/// measured KL exceeds `target_kl`), then `value_iters` value descent steps.
pub fn ppo_update(
    batch: &Batch,
    policy: &mut Mlp,
    value: &mut Mlp,
    optimizers: &mut Optimizers,
    config: &PpoConfig,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    for _ in 0..config.policy_iters {
        let mut s = clipped_surrogate(policy, batch, config.clip_ratio)?;
        stats.approx_kl = s.approx_kl;
        stats.clip_frac = s.clip_frac;
        if s.approx_kl > config.target_kl {
            break;
        }
        s.gradient.scale(-1.0);
        optimizers.policy.step(policy, &s.gradient, config.policy_lr);
        stats.policy_steps += 1;
    }
    for _ in 0..config.value_iters {
        let (loss, grad) = value_loss(value, batch)?;
        stats.value_loss = loss;
        optimizers.value.step(value, &grad, config.value_lr);
    }
    if !policy.is_finite() || !value.is_finite() {
        return Err(Error::Numerical("non-finite parameters after update".into()));
    }
    stats.entropy = batch_entropy(policy, batch)?;
    Ok(stats)
}

fn batch_entropy(policy: &Mlp, batch: &Batch) -> Result<f64> {
    let mut logp = policy.forward_batch(batch.observations.view())?;
    log_softmax_rows(&mut logp);
    let total: f64 = logp.iter().map(|&l| -l.exp() * l).sum();
    Ok(total / batch.len().max(1) as f64)
}

fn observation_matrix(states: &[MdpState], horizon: usize, width: usize) -> Array2<f64> {
    let mut obs = Array2::zeros((states.len(), width));
    for (mut row, s) in obs.rows_mut().into_iter().zip(states) {
        encode_observation(s, horizon, row.as_slice_mut().expect("standard layout"));
    }
    obs
}

/// Plays one episode per entry of `episode_seeds` in lockstep with the given
/// policy. Terminal rewards are drawn from each episode's own demand stream.
pub fn collect_episodes(
    env: &Env<'_>,
    policy: &Mlp,
    value: &Mlp,
    action_seeds: &[u64],
    demand_seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    let instance = env.instance();
    let horizon = env.config().horizon;
    let width = observation_len(instance);
    let count = action_seeds.len();
    let mut rngs: Vec<_> = action_seeds.iter().map(|&s| rng::stream(s)).collect();
    let mut states: Vec<MdpState> = vec![
        MdpState {
            network: instance.empty_network(),
            step: 0,
        };
        count
    ];
    let mut trajs: Vec<Trajectory> = (0..count)
        .map(|_| Trajectory {
            observations: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            log_probs: Vec::with_capacity(horizon),
            values: Vec::with_capacity(horizon),
            returns: Vec::new(),
            advantages: Vec::new(),
            final_network: instance.empty_network(),
        })
        .collect();
    for _ in 0..horizon {
        let obs = observation_matrix(&states, horizon, width);
        let logits = policy.forward_batch(obs.view())?;
        let values = value.forward_batch(obs.view())?;
        for e in 0..count {
            let dist = Categorical::from_logits(logits.row(e).as_slice().expect("standard layout"));
            let a = dist.sample(&mut rngs[e]);
            let (next, reward) = env.apply(&states[e], a)?;
            let t = &mut trajs[e];
            t.observations.push(obs.row(e).to_vec());
            t.actions.push(a);
            t.rewards.push(reward);
            t.log_probs.push(dist.log_prob(a));
            t.values.push(values[[e, 0]]);
            states[e] = next;
        }
    }
    let terminal = par::map_range(count, |e| env.terminal_reward_seeded(&states[e].network, demand_seeds[e]));
    for ((t, s), r) in trajs.iter_mut().zip(states).zip(terminal) {
        *t.rewards.last_mut().expect("horizon is at least one") += r;
        t.final_network = s.network;
    }
    Ok(trajs)
}

/// Plays one episode choosing actions with `choose`, returning the final network.
pub fn rollout_design(
    env: &Env<'_>,
    policy: &Mlp,
    mut choose: impl FnMut(&Categorical) -> usize,
) -> Result<FlexNetwork> {
    let horizon = env.config().horizon;
    let mut state = MdpState {
        network: env.instance().empty_network(),
        step: 0,
    };
    let mut obs = vec![0.0; observation_len(env.instance())];
    while state.step < horizon {
        encode_observation(&state, horizon, &mut obs);
        let dist = Categorical::from_logits(&policy.forward(&obs)?);
        state = env.apply(&state, choose(&dist))?.0;
    }
    Ok(state.network)
}

/// Design obtained by always taking the most likely action.
pub fn greedy_design(env: &Env<'_>, policy: &Mlp) -> Result<FlexNetwork> {
    rollout_design(env, policy, |d| d.mode())
}

/// One row of a training report. Empty cells are written for the step-0 row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub step: u64,
    pub epoch: u64,
    pub mean_return: Option<f64>,
    pub value_loss: Option<f64>,
    pub approx_kl: Option<f64>,
    pub clip_frac: Option<f64>,
    pub eval_profit: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub rows: Vec<ReportRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl TrainReport {
    pub const HEADER: &'static str = "step,epoch,mean_return,value_loss,approx_kl,clip_frac,eval_profit,wallclock_s";

    /// CSV text; with `zero_clock` the wall-clock column is written as 0 so reruns compare byte for byte.
    pub fn to_csv(&self, zero_clock: bool) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let clock = if zero_clock { 0.0 } else { r.wallclock_s };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.3}",
                r.step,
                r.epoch,
                cell(r.mean_return),
                cell(r.value_loss),
                cell(r.approx_kl),
                cell(r.clip_frac),
                r.eval_profit,
                clock
            );
        }
        out
    }

    /// Environment steps at which the evaluation first reached `threshold`.
    pub fn steps_to_reach(&self, threshold: f64) -> Option<u64> {
        self.rows.iter().find(|r| r.eval_profit >= threshold).map(|r| r.step)
    }

    pub fn best_eval(&self) -> f64 {
        self.rows.iter().map(|r| r.eval_profit).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_step(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.step)
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: u64,
    pub steps: u64,
    pub mean_return: f64,
    pub update: UpdateStats,
    /// Most frequent final networks of the epoch, most frequent first (first seen on ties).
    pub frequent_designs: Vec<FlexNetwork>,
}

fn most_frequent(trajs: &[Trajectory], count: usize) -> Vec<FlexNetwork> {
    let mut seen: HashMap<&[bool], usize> = HashMap::new();
    let mut order: Vec<(&FlexNetwork, usize)> = Vec::new();
    for t in trajs {
        let slot = *seen.entry(t.final_network.mask()).or_insert_with(|| {
            order.push((&t.final_network, 0));
            order.len() - 1
        });
        order[slot].1 += 1;
    }
    // stable sort keeps first-seen order among equal counts
    order.sort_by_key(|a| std::cmp::Reverse(a.1));
    order.into_iter().take(count).map(|(n, _)| n.clone()).collect()
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best evaluation.
    pub policy: Mlp,
    pub value: Mlp,
    pub report: TrainReport,
    pub best_design: FlexNetwork,
    pub best_eval: f64,
    pub reward_scale: f64,
}

/// PPO state for one task: parameters, optimizers, counters and the evaluation set.
pub struct Trainer<'a> {
    env: Env<'a>,
    config: PpoConfig,
    pub policy: Mlp,
    pub value: Mlp,
    pub optimizers: Optimizers,
    epoch: u64,
    steps: u64,
    reward_scale: Option<f64>,
    eval_samples: SampleSet,
    eval_cache: HashMap<Vec<bool>, f64>,
    started: Instant,
}

pub fn policy_sizes(instance: &Instance, mdp: &MdpConfig, hidden: &[usize]) -> Vec<usize> {
    let mut s = vec![observation_len(instance)];
    s.extend_from_slice(hidden);
    s.push(mdp.action_count(instance));
    s
}

pub fn value_sizes(instance: &Instance, hidden: &[usize]) -> Vec<usize> {
    let mut s = vec![observation_len(instance)];
    s.extend_from_slice(hidden);
    s.push(1);
    s
}

/// Freshly initialized policy and value networks for `seed`.
pub fn init_networks(instance: &Instance, mdp: &MdpConfig, config: &PpoConfig) -> (Mlp, Mlp) {
    (
        Mlp::new(
            &policy_sizes(instance, mdp, &config.hidden),
            POLICY_OUTPUT_GAIN,
            derive_seed(config.seed, &[STREAM_POLICY_INIT]),
        ),
        Mlp::new(
            &value_sizes(instance, &config.hidden),
            1.0,
            derive_seed(config.seed, &[STREAM_VALUE_INIT]),
        ),
    )
}

impl<'a> Trainer<'a> {
    pub fn new(instance: &'a Instance, mdp: MdpConfig, config: PpoConfig) -> Result<Self> {
        let (policy, value) = init_networks(instance, &mdp, &config);
        Self::with_params(instance, mdp, config, policy, value)
    }

    pub fn with_params(instance: &'a Instance, mdp: MdpConfig, config: PpoConfig, policy: Mlp, value: Mlp) -> Result<Self> {
        config.validate()?;
        let env = Env::new(instance, mdp)?;
        let want_p = policy_sizes(instance, env.config(), &policy.sizes()[1..policy.sizes().len() - 1]);
        if policy.sizes() != want_p {
            return Err(Error::invalid(
                "policy",
                format!("layer sizes {:?} do not fit this task (expected {:?})", policy.sizes(), want_p),
            ));
        }
        if value.input_dim() != observation_len(instance) || value.output_dim() != 1 {
            return Err(Error::invalid("value", format!("layer sizes {:?} do not fit this task", value.sizes())));
        }
        let eval_samples = instance.sample(config.eval_seed(), config.eval_samples);
        Ok(Trainer {
            optimizers: Optimizers::new(&policy, &value),
            env,
            policy,
            value,
            epoch: 0,
            steps: 0,
            reward_scale: config.reward_scale,
            eval_samples,
            eval_cache: HashMap::new(),
            started: Instant::now(),
            config,
        })
    }

    pub fn env(&self) -> &Env<'a> {
        &self.env
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn reward_scale(&self) -> Option<f64> {
        self.reward_scale
    }

    pub fn eval_samples(&self) -> &SampleSet {
        &self.eval_samples
    }

    /// Replaces the parameters, keeping optimizer state and counters.
    pub fn set_params(&mut self, policy: &Mlp, value: &Mlp) {
        self.policy.clone_from(policy);
        self.value.clone_from(value);
    }

    /// Collects one epoch of episodes with the current policy.
    pub fn collect(&self) -> Result<Vec<Trajectory>> {
        let n = self.config.episodes_per_epoch as u64;
        let seed = self.config.seed;
        let actions: Vec<u64> = (0..n).map(|e| derive_seed(seed, &[STREAM_ACTIONS, self.epoch, e])).collect();
        let demand: Vec<u64> = (0..n).map(|e| derive_seed(seed, &[STREAM_DEMAND, self.epoch, e])).collect();
        collect_episodes(&self.env, &self.policy, &self.value, &actions, &demand)
    }

    fn scale_for(&mut self, trajs: &[Trajectory]) -> f64 {
        *self.reward_scale.get_or_insert_with(|| {
            let totals: Vec<f64> = trajs.iter().map(Trajectory::total_reward).collect();
            let mean = oracle::mean(&totals);
            let sd = (totals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / totals.len() as f64).sqrt();
            let spread = if sd > 1e-8 * mean.abs().max(1.0) { sd } else { mean.abs() };
            if spread > 0.0 && spread.is_finite() {
                spread
            } else {
                1.0
            }
        })
    }

    /// Collects an epoch and performs one PPO update on it.
    pub fn iterate(&mut self) -> Result<EpochStats> {
        let mut trajs = self.collect()?;
        let scale = self.scale_for(&trajs);
        for t in &mut trajs {
            t.finish(scale, self.config.gamma, self.config.lambda);
        }
        let mean_return = oracle::mean(&trajs.iter().map(Trajectory::total_reward).collect::<Vec<_>>());
        let frequent_designs = most_frequent(&trajs, self.config.eval_top_designs);
        let batch = Batch::from_trajectories(&trajs, self.config.normalize_advantages);
        let update = ppo_update(&batch, &mut self.policy, &mut self.value, &mut self.optimizers, &self.config)?;
        self.epoch += 1;
        self.steps += batch.len() as u64;
        log::debug!(
            "epoch {} steps {} return {:.4} kl {:.5} policy steps {}",
            self.epoch,
            self.steps,
            mean_return,
            update.approx_kl,
            update.policy_steps
        );
        Ok(EpochStats {
            epoch: self.epoch,
            steps: self.steps,
            mean_return,
            update,
            frequent_designs,
        })
    }

    /// Objective of `network` on the evaluation samples (cached).
    pub fn score(&mut self, network: &FlexNetwork) -> Result<f64> {
        if let Some(&v) = self.eval_cache.get(network.mask()) {
            return Ok(v);
        }
        let v = oracle::fdp_objective_estimate(self.env.instance(), network, &self.eval_samples, self.eval_samples.len())?;
        self.eval_cache.insert(network.mask().to_vec(), v);
        Ok(v)
    }

    /// Best of the greedy-decoded design and `extra` designs, with its evaluation.
    pub fn evaluate(&mut self, extra: &[FlexNetwork]) -> Result<(FlexNetwork, f64)> {
        let mut best = greedy_design(&self.env, &self.policy)?;
        let mut best_v = self.score(&best)?;
        for net in extra {
            let v = self.score(net)?;
            if v > best_v {
                best_v = v;
                best = net.clone();
            }
        }
        Ok((best, best_v))
    }

    fn row(&self, stats: Option<&EpochStats>, eval_profit: f64) -> ReportRow {
        ReportRow {
            step: self.steps,
            epoch: self.epoch,
            mean_return: stats.map(|s| s.mean_return),
            value_loss: stats.map(|s| s.update.value_loss),
            approx_kl: stats.map(|s| s.update.approx_kl),
            clip_frac: stats.map(|s| s.update.clip_frac),
            eval_profit,
            wallclock_s: self.started.elapsed().as_secs_f64(),
        }
    }

    /// Trains until `max_steps` or until the evaluation stalls for `early_stop_steps`.
    pub fn train(mut self) -> Result<TrainOutcome> {
        self.started = Instant::now();
        let mut report = TrainReport::default();
        let (mut best_design, mut best_eval) = self.evaluate(&[])?;
        report.rows.push(self.row(None, best_eval));
        let mut best_params = (self.policy.clone(), self.value.clone());
        let mut best_step = self.steps;
        while self.steps < self.config.max_steps && self.steps - best_step < self.config.early_stop_steps {
            let stats = self.iterate()?;
            let (design, eval) = self.evaluate(&stats.frequent_designs)?;
            report.rows.push(self.row(Some(&stats), eval));
            if eval > best_eval {
                best_eval = eval;
                best_design = design;
                best_step = self.steps;
                best_params = (self.policy.clone(), self.value.clone());
            }
        }
        Ok(TrainOutcome {
            policy: best_params.0,
            value: best_params.1,
            report,
            best_design,
            best_eval,
            reward_scale: self.reward_scale.unwrap_or(1.0),
        })
    }
}

/// Trains a fresh policy on `instance`.
pub fn train(instance: &Instance, mdp: MdpConfig, config: PpoConfig) -> Result<TrainOutcome> {
    Trainer::new(instance, mdp, config)?.train()
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub arcs: Vec<(usize, usize)>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub best: FlexNetwork,
    pub best_score: f64,
    /// Distinct designs in first-seen order with their scores.
    pub candidates: Vec<(FlexNetwork, f64)>,
}

/// Samples `count` designs from `policy`, dedupes them, and scores each on all of `samples`.
pub fn extract_designs(
    policy: &Mlp,
    instance: &Instance,
    mdp: &MdpConfig,
    count: usize,
    samples: &SampleSet,
    seed: u64,
) -> Result<Extraction> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    let env = Env::new(instance, mdp.clone())?;
    let mut designs: Vec<FlexNetwork> = Vec::new();
    for r in 0..count as u64 {
        let mut rng = rng::stream(derive_seed(seed, &[STREAM_EXTRACT, r]));
        let net = rollout_design(&env, policy, |d| d.sample(&mut rng))?;
        if !designs.contains(&net) {
            designs.push(net);
        }
    }
    let mut candidates = Vec::with_capacity(designs.len());
    for net in designs {
        let score = oracle::fdp_objective_estimate(instance, &net, samples, samples.len())?;
        candidates.push((net, score));
    }
    let (best, best_score) = candidates
        .iter()
        .fold(None::<&(FlexNetwork, f64)>, |acc, c| match acc {
            Some(b) if b.1 >= c.1 => Some(b),
            _ => Some(c),
        })
        .cloned()
        .expect("at least one candidate");
    Ok(Extraction {
        best,
        best_score,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{DemandModel, Matrix};

    #[test]
    fn rewards_to_go_by_hand() {
        assert_eq!(compute_rewards_to_go(&[0.0, 0.0, 5.0], 1.0), vec![5.0, 5.0, 5.0]);
        assert_eq!(compute_rewards_to_go(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(compute_rewards_to_go(&[2.0, -1.0, 3.0], 0.0), vec![2.0, -1.0, 3.0]);
    }

    #[test]
    fn gae_by_hand() {
        let a = compute_gae(&[1.0, 0.0], &[0.5, 0.25], 0.5, 0.5);
        assert_eq!(a, vec![0.5625, -0.25]);
        let r = [0.5, -2.0, 4.0];
        let v = [1.0, 0.25, -0.5];
        let adv = compute_gae(&r, &v, 1.0, 1.0);
        let rtg = compute_rewards_to_go(&r, 1.0);
        for t in 0..3 {
            assert_eq!(adv[t], rtg[t] - v[t]);
        }
        assert_eq!(compute_gae(&r, &[0.0; 3], 0.9, 1.0), compute_rewards_to_go(&r, 0.9));
    }

    #[test]
    fn clip_target_formula() {
        assert_eq!(clip_target(0.2, 5.0), 6.0);
        assert_eq!(clip_target(0.2, -5.0), -4.0);
        assert_eq!(clip_target(0.2, 0.0), 0.0);
    }

    fn bandit() -> Instance {
        Instance::new(
            vec![1.0],
            DemandModel::deterministic(vec![1.0, 1.0]),
            Matrix::from_rows("p", &[vec![1.0, 10.0]], 1, 2).unwrap(),
            Matrix::filled(1, 2, 0.0),
            1,
        )
        .unwrap()
    }

    fn small_config() -> PpoConfig {
        PpoConfig {
            hidden: vec![16, 8],
            episodes_per_epoch: 64,
            eval_samples: 10,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn bandit_update_prefers_the_better_arc() {
        let inst = bandit();
        let mut mdp = MdpConfig::new(&inst);
        mdp.omega = 1;
        let mut trainer = Trainer::new(&inst, mdp, small_config()).unwrap();
        let obs = [0.0, 0.0, 1.0];
        let before = crate::nn::policy_distribution(&trainer.policy, &obs).unwrap().probs()[1];
        let stats = trainer.iterate().unwrap();
        let after = crate::nn::policy_distribution(&trainer.policy, &obs).unwrap().probs()[1];
        assert!(after > before, "{before} -> {after}");
        assert!(stats.update.policy_steps > 0);
        assert_eq!(stats.steps, 64);
    }

    #[test]
    fn step_counter_counts_episodes_times_horizon() {
        let inst = crate::instance::synthetic_instance(2, 3, 3, 4).unwrap();
        let mut trainer = Trainer::new(&inst, MdpConfig::new(&inst), small_config()).unwrap();
        trainer.iterate().unwrap();
        trainer.iterate().unwrap();
        assert_eq!(trainer.steps(), 2 * 64 * 3);
    }

    #[test]
    fn kl_gate_blocks_further_steps() {
        let inst = bandit();
        let mut mdp = MdpConfig::new(&inst);
        mdp.omega = 1;
        let cfg = PpoConfig {
            target_kl: -1.0,
            ..small_config()
        };
        let mut trainer = Trainer::new(&inst, mdp, cfg).unwrap();
        let before = trainer.policy.clone();
        let stats = trainer.iterate().unwrap();
        assert_eq!(stats.update.policy_steps, 0);
        assert_eq!(trainer.policy, before);
    }

    #[test]
    fn report_csv_shape() {
        let report = TrainReport {
            rows: vec![
                ReportRow {
                    step: 0,
                    epoch: 0,
                    mean_return: None,
                    value_loss: None,
                    approx_kl: None,
                    clip_frac: None,
                    eval_profit: 1.5,
                    wallclock_s: 0.25,
                },
                ReportRow {
                    step: 10,
                    epoch: 1,
                    mean_return: Some(2.0),
                    value_loss: Some(0.5),
                    approx_kl: Some(0.001),
                    clip_frac: Some(0.0),
                    eval_profit: 3.0,
                    wallclock_s: 1.0,
                },
            ],
        };
        let csv = report.to_csv(true);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TrainReport::HEADER);
        assert_eq!(lines[1], "0,0,,,,,1.5,0.000");
        assert_eq!(lines[2], "10,1,2,0.5,0.001,0,3,0.000");
        assert_eq!(report.steps_to_reach(2.0), Some(10));
    }
}
