//! The arc-adding MDP: states are partial networks, the horizon is the arc
//! budget `K`, and the last transition carries the sampled profit of the
//! final network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{sample_demand, FlexNetwork, Instance, SampleSet};
use crate::oracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSet {
    /// Actions are arcs; choosing a present arc does nothing.
    AddNoop,
    /// Actions are arcs (toggle: add if absent, delete if present) plus one explicit no-op.
    AddDeleteNoop,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpConfig {
    pub action_set: ActionSet,
    /// Samples per terminal profit estimate.
    pub omega: usize,
    pub variance_reduction: bool,
    pub horizon: usize,
    /// Draw terminal samples from each episode's seed; otherwise every episode uses `seed`.
    pub fresh_samples_per_episode: bool,
    pub seed: u64,
}

impl MdpConfig {
    pub fn new(instance: &Instance) -> Self {
        MdpConfig {
            action_set: ActionSet::AddNoop,
            omega: 50,
            variance_reduction: true,
            horizon: instance.budget,
            fresh_samples_per_episode: true,
            seed: 0,
        }
    }

    pub fn action_count(&self, instance: &Instance) -> usize {
        match self.action_set {
            ActionSet::AddNoop => instance.arcs(),
            ActionSet::AddDeleteNoop => instance.arcs() + 1,
        }
    }

    pub fn validate(&self, instance: &Instance) -> Result<()> {
        if self.horizon != instance.budget {
            return Err(Error::invalid(
                "horizon",
                format!("must equal the instance budget {} (got {})", instance.budget, self.horizon),
            ));
        }
        if self.omega == 0 {
            return Err(Error::invalid("omega", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdpState {
    pub network: FlexNetwork,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: MdpState,
    pub action: usize,
    pub reward: f64,
    pub next_state: MdpState,
    pub done: bool,
}

/// Length of the observation vector: flattened `F` plus the remaining-horizon fraction.
pub fn observation_len(instance: &Instance) -> usize {
    instance.arcs() + 1
}

/// Writes the observation of `state` into `out`.
pub fn encode_observation(state: &MdpState, horizon: usize, out: &mut [f64]) {
    let arcs = state.network.mask();
    for (o, &a) in out.iter_mut().zip(arcs) {
        *o = if a { 1.0 } else { 0.0 };
    }
    out[arcs.len()] = (horizon - state.step) as f64 / horizon as f64;
}

pub fn observe(state: &MdpState, horizon: usize) -> Vec<f64> {
    let mut out = vec![0.0; state.network.mask().len() + 1];
    encode_observation(state, horizon, &mut out);
    out
}

/// One environment bound to an instance. Cheap to clone; one per rollout worker.
#[derive(Debug, Clone)]
pub struct Env<'a> {
    instance: &'a Instance,
    config: MdpConfig,
    fixed: Option<SampleSet>,
    episode_seed: u64,
}

impl<'a> Env<'a> {
    pub fn new(instance: &'a Instance, config: MdpConfig) -> Result<Self> {
        config.validate(instance)?;
        Ok(Env {
            instance,
            episode_seed: config.seed,
            config,
            fixed: None,
        })
    }

    /// Uses the first `omega` samples of `samples` for every terminal reward.
    pub fn with_fixed_samples(mut self, samples: SampleSet) -> Result<Self> {
        samples.head(self.config.omega)?;
        self.fixed = Some(samples);
        Ok(self)
    }

    pub fn instance(&self) -> &'a Instance {
        self.instance
    }

    pub fn config(&self) -> &MdpConfig {
        &self.config
    }

    pub fn action_count(&self) -> usize {
        self.config.action_count(self.instance)
    }

    /// Starts an episode whose terminal samples come from the config seed.
    pub fn reset(&mut self) -> MdpState {
        self.reset_with_seed(self.config.seed)
    }

    /// Starts an episode whose terminal samples (in fresh-sample mode) are drawn from `seed`.
    pub fn reset_with_seed(&mut self, seed: u64) -> MdpState {
        self.episode_seed = seed;
        MdpState {
            network: self.instance.empty_network(),
            step: 0,
        }
    }

    /// Samples the terminal reward of the current episode will use.
    pub fn terminal_samples(&self) -> SampleSet {
        match &self.fixed {
            Some(set) => SampleSet {
                seed: set.seed,
                samples: set.samples[..self.config.omega].to_vec(),
            },
            None => {
                let seed = if self.config.fresh_samples_per_episode {
                    self.episode_seed
                } else {
                    self.config.seed
                };
                sample_demand(&self.instance.demand_model, seed, self.config.omega)
            }
        }
    }

    /// Terminal reward: estimated `E[P(d, F)]` (variance-reduced if configured).
    pub fn terminal_reward(&self, network: &FlexNetwork) -> f64 {
        self.terminal_reward_seeded(network, self.episode_seed)
    }

    /// Terminal reward for an episode started with `reset_with_seed(episode_seed)`.
    pub fn terminal_reward_seeded(&self, network: &FlexNetwork, episode_seed: u64) -> f64 {
        let drawn;
        let samples = match &self.fixed {
            Some(set) => &set.samples[..self.config.omega],
            None => {
                let seed = if self.config.fresh_samples_per_episode {
                    episode_seed
                } else {
                    self.config.seed
                };
                drawn = sample_demand(&self.instance.demand_model, seed, self.config.omega);
                &drawn.samples[..]
            }
        };
        oracle::mean(&oracle::estimator_terms(
            self.instance,
            network,
            samples,
            self.config.variance_reduction,
        ))
    }

    /// Applies `action` without the terminal term; returns the next state and the installation reward.
    pub fn apply(&self, state: &MdpState, action: usize) -> Result<(MdpState, f64)> {
        let horizon = self.config.horizon;
        if state.step >= horizon {
            return Err(Error::EpisodeFinished {
                step: state.step,
                horizon,
            });
        }
        let count = self.action_count();
        if action >= count {
            return Err(Error::ActionOutOfRange { action, count });
        }
        let cost = self.instance.arc_cost.as_slice();
        let mut network = state.network.clone();
        let reward = if action == self.instance.arcs() {
            0.0
        } else if !network.has(action) {
            network.insert(action);
            -cost[action]
        } else if self.config.action_set == ActionSet::AddDeleteNoop {
            network.remove(action);
            cost[action]
        } else {
            0.0
        };
        Ok((
            MdpState {
                network,
                step: state.step + 1,
            },
            reward,
        ))
    }

    pub fn step(&self, state: &MdpState, action: usize) -> Result<Transition> {
        let (next_state, mut reward) = self.apply(state, action)?;
        let done = next_state.step == self.config.horizon;
        if done {
            reward += self.terminal_reward(&next_state.network);
        }
        Ok(Transition {
            state: state.clone(),
            action,
            reward,
            next_state,
            done,
        })
    }
}
