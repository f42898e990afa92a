//! The training loop: ε-greedy rollouts into replay, then a fixed number of
//! primal (TD) and dual (λ) steps per episode.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    dual_update, estimate_constraint_level, loss_and_gradients, select_actions, soft_update, Adam, LearnerError,
    QNetworks, ReplayBuffer, Transition,
};
use crate::env::{cluster_obs_dim, Observation, OversubEnv, AGENT_OBS_DIM};
use crate::policy::Policy;

/// How the constraint level `U` is estimated before each dual step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintEstimator {
    /// Mean cost of the mini-batch used for the primal step.
    Batch,
    /// Mean cost of the most recent `size` transitions in replay.
    Window { size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub dual_learning_rate: f64,
    /// Optimization iterations per episode.
    pub optimization_iters: usize,
    pub agent_hidden: Vec<usize>,
    pub cluster_hidden: Vec<usize>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the run over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub lambda_init: f64,
    pub constraint_estimator: ConstraintEstimator,
    /// When false λ stays at `lambda_init`.
    pub update_dual: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            gamma: 0.9,
            batch_size: 10,
            memory_capacity: 360,
            tau: 0.001,
            learning_rate: 1e-3,
            dual_learning_rate: 0.05,
            optimization_iters: 10,
            agent_hidden: vec![64, 64],
            cluster_hidden: vec![128, 128],
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.6,
            lambda_init: 0.0,
            constraint_estimator: ConstraintEstimator::Batch,
            update_dual: true,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let err = |m: &str| Err(LearnerError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return err("gamma must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.memory_capacity == 0 {
            return err("batch_size and memory_capacity must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return err("tau must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(self.dual_learning_rate > 0.0) {
            return err("learning rates must be positive");
        }
        if self.agent_hidden.contains(&0) || self.cluster_hidden.contains(&0) {
            return err("hidden layer sizes must be positive");
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_start)
            || !unit.contains(&self.epsilon_end)
            || !unit.contains(&self.epsilon_decay_fraction)
        {
            return err("epsilon schedule values must lie in [0, 1]");
        }
        if !(self.lambda_init >= 0.0) {
            return err("lambda_init must be non-negative");
        }
        if let ConstraintEstimator::Window { size: 0 } = self.constraint_estimator {
            return err("constraint window must be positive");
        }
        Ok(())
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end` over the first
/// `epsilon_decay_fraction` of `total` episodes.
pub fn epsilon_at(config: &LearnerConfig, episode: usize, total: usize) -> f64 {
    let span = config.epsilon_decay_fraction * total as f64;
    if span <= 0.0 || episode as f64 >= span {
        return config.epsilon_end;
    }
    let frac = episode as f64 / span;
    config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
}

/// One row of the training curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub cum_reward: f64,
    /// Cores saved over the episode (requested minus assigned, placed VMs).
    pub remaining_cores: f64,
    pub hot_cluster_count: u32,
    pub lambda: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurves {
    pub rows: Vec<CurveRow>,
}

impl TrainingCurves {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Result of one optimization iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptStats {
    pub loss: f64,
    pub constraint_level: f64,
    pub lambda_before: f64,
    pub lambda_after: f64,
}

/// Summary of one rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    pub cum_reward: f64,
    pub remaining_cores: f64,
    pub hot_cluster_count: u32,
    pub drops: usize,
}

#[derive(Clone, Debug)]
pub struct LearnerState {
    pub config: LearnerConfig,
    pub alpha: f64,
    pub delta: f64,
    pub online: QNetworks,
    pub target: QNetworks,
    pub lambda: f64,
    pub optimizer: Adam,
    pub replay: ReplayBuffer,
    pub episodes_done: usize,
    pub updates: u64,
    pub seed: u64,
    pub rng: ChaCha8Rng,
}

impl LearnerState {
    pub fn new(
        config: LearnerConfig,
        num_agents: usize,
        num_actions: usize,
        alpha: f64,
        delta: f64,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(LearnerError::Config(format!("alpha {alpha} must lie in (0, 1)")));
        }
        if num_agents == 0 || num_actions == 0 {
            return Err(LearnerError::Config("need at least one agent and one action".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agent_sizes = vec![AGENT_OBS_DIM];
        agent_sizes.extend(&config.agent_hidden);
        agent_sizes.push(num_actions);
        let mut cluster_sizes = vec![cluster_obs_dim(num_agents)];
        cluster_sizes.extend(&config.cluster_hidden);
        cluster_sizes.push(1);
        let online = QNetworks::new(num_agents, &agent_sizes, &cluster_sizes, &mut rng);
        let target = online.clone();
        let optimizer = Adam::new(online.block_sizes());
        Ok(LearnerState {
            lambda: config.lambda_init,
            replay: ReplayBuffer::new(config.memory_capacity),
            config,
            alpha,
            delta,
            online,
            target,
            optimizer,
            episodes_done: 0,
            updates: 0,
            seed,
            rng,
        })
    }

    /// Constraint threshold `c = (1 − α) δ`.
    pub fn c(&self) -> f64 {
        (1.0 - self.alpha) * self.delta
    }

    /// Rolls out one episode, choosing actions with `choose`, and stores every
    /// transition in replay.
    pub fn collect_episode_with(
        &mut self,
        env: &mut OversubEnv,
        mut choose: impl FnMut(&QNetworks, &Observation, &mut ChaCha8Rng) -> Vec<usize>,
    ) -> Result<EpisodeStats, LearnerError> {
        let reset_seed = self.rng.random::<u64>();
        let mut obs = env.reset(reset_seed)?;
        let mut stats = EpisodeStats::default();
        loop {
            let actions = choose(&self.online, &obs, &mut self.rng);
            let step = env.step(&actions)?;
            stats.cum_reward += step.reward;
            stats.remaining_cores += step.info.requested_placed - step.info.assigned_placed;
            stats.hot_cluster_count += step.cost as u32;
            stats.drops += step.info.drops;
            let done = step.done;
            self.replay.push(Transition {
                state: obs,
                actions,
                reward: step.reward,
                cost: step.cost,
                next_state: step.observation.clone(),
                done,
            });
            obs = step.observation;
            if done {
                return Ok(stats);
            }
        }
    }

    /// ε-greedy rollout.
    pub fn collect_episode(&mut self, env: &mut OversubEnv, epsilon: f64) -> Result<EpisodeStats, LearnerError> {
        self.collect_episode_with(env, |nets, obs, rng| select_actions(nets, obs, epsilon, rng))
    }

    /// One primal step on a sampled mini-batch, a soft target update, then a
    /// dual step.
    pub fn optimize(&mut self) -> Result<OptStats, LearnerError> {
        if self.replay.is_empty() {
            return Err(LearnerError::Config("optimize called with empty replay".into()));
        }
        let c = self.c();
        let batch = self.replay.sample(self.config.batch_size, &mut self.rng);
        let (loss, grads) = loss_and_gradients(&batch, &self.online, &self.target, self.lambda, c, self.config.gamma)?;
        let u = match self.config.constraint_estimator {
            ConstraintEstimator::Batch => estimate_constraint_level(batch.iter().copied()),
            ConstraintEstimator::Window { size } => estimate_constraint_level(self.replay.recent(size)),
        };
        self.optimizer.apply(
            self.online.nets_mut().map(|n| n.params_mut()),
            grads.nets().map(|n| n.params()),
            self.config.learning_rate,
        );
        if !self.online.is_finite() {
            return Err(LearnerError::NonFiniteLoss {
                context: format!("parameters after update {}", self.updates),
            });
        }
        soft_update(&self.online, &mut self.target, self.config.tau);
        let lambda_before = self.lambda;
        if self.config.update_dual {
            self.lambda = dual_update(self.lambda, self.config.dual_learning_rate, c, u);
        }
        self.updates += 1;
        Ok(OptStats {
            loss,
            constraint_level: u,
            lambda_before,
            lambda_after: self.lambda,
        })
    }

    pub fn greedy_policy(&self) -> C2marlPolicy {
        C2marlPolicy::new(Arc::new(self.online.clone()))
    }
}

/// Trains for `episodes` episodes. Deterministic per seed.
pub fn train(
    env: &mut OversubEnv,
    config: &LearnerConfig,
    alpha: f64,
    episodes: usize,
    seed: u64,
) -> Result<(LearnerState, TrainingCurves), LearnerError> {
    train_with_observer(env, config, alpha, episodes, seed, |_| {})
}

/// As [`train`], calling `observer` after every episode.
pub fn train_with_observer(
    env: &mut OversubEnv,
    config: &LearnerConfig,
    alpha: f64,
    episodes: usize,
    seed: u64,
    mut observer: impl FnMut(&CurveRow),
) -> Result<(LearnerState, TrainingCurves), LearnerError> {
    let num_actions = env.action_set().len();
    let mut state = LearnerState::new(
        config.clone(),
        env.num_agents(),
        num_actions,
        alpha,
        env.config().delta,
        seed,
    )?;
    let mut curves = TrainingCurves::default();
    for episode in 0..episodes {
        let epsilon = epsilon_at(config, episode, episodes);
        let stats = state.collect_episode(env, epsilon)?;
        for _ in 0..config.optimization_iters {
            state.optimize()?;
        }
        state.episodes_done += 1;
        let row = CurveRow {
            episode,
            cum_reward: stats.cum_reward,
            remaining_cores: stats.remaining_cores,
            hot_cluster_count: stats.hot_cluster_count,
            lambda: state.lambda,
            epsilon,
        };
        log::debug!(
            "episode {episode}: reward {:.4} hot {} lambda {:.4} eps {:.3}",
            row.cum_reward,
            row.hot_cluster_count,
            row.lambda,
            row.epsilon
        );
        observer(&row);
        curves.rows.push(row);
    }
    Ok((state, curves))
}

/// Greedy decentralized policy: each agent takes its own argmax.
#[derive(Clone, Debug)]
pub struct C2marlPolicy {
    nets: Arc<QNetworks>,
}

impl C2marlPolicy {
    pub fn new(nets: Arc<QNetworks>) -> Self {
        C2marlPolicy { nets }
    }

    pub fn networks(&self) -> &QNetworks {
        &self.nets
    }
}

impl Policy for C2marlPolicy {
    fn name(&self) -> String {
        "c2marl".into()
    }

    fn rates(&self, env: &OversubEnv, obs: &Observation) -> Vec<f64> {
        obs.agents
            .iter()
            .enumerate()
            .map(|(i, o)| env.action_set()[super::argmax(&self.nets.agent_q(i, o))])
            .collect()
    }
}
