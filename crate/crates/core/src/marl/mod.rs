//! Chance-constrained multi-agent Q-learning.
//!
//! The joint action value is decomposed into an action-independent cluster
//! term plus one term per agent that has requests this hour:
//!
//! ```text
//! Q(s, a) = Qc(s_c) + Σ_i m_i · Q_i(o_i)[a_i]
//! ```
//!
//! The network is trained by double-Q TD regression on the Lagrangian reward
//! `r + λ (c − cost)`, while the multiplier `λ` follows projected dual ascent
//! on the estimated per-step hot-cluster frequency.

mod adam;
mod checkpoint;
mod net;
mod replay;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Observation};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointError, NetworkRecord, RngRecord, CHECKPOINT_VERSION};
pub use net::Mlp;
pub use replay::ReplayBuffer;
pub use train::{
    epsilon_at, train, train_with_observer, C2marlPolicy, ConstraintEstimator, CurveRow, EpisodeStats, LearnerConfig,
    LearnerState, OptStats, TrainingCurves,
};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("non-finite value in TD loss ({context}); training diverged")]
    NonFiniteLoss { context: String },
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Online or target parameters: the cluster value network followed by one
/// action-value network per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetworks {
    pub cluster: Mlp,
    pub agents: Vec<Mlp>,
}

impl QNetworks {
    pub fn new<R: Rng + ?Sized>(
        num_agents: usize,
        agent_sizes: &[usize],
        cluster_sizes: &[usize],
        rng: &mut R,
    ) -> Self {
        let cluster = Mlp::new(cluster_sizes, rng);
        let agents = (0..num_agents).map(|_| Mlp::new(agent_sizes, rng)).collect();
        QNetworks { cluster, agents }
    }

    pub fn zeros_like(&self) -> Self {
        QNetworks {
            cluster: Mlp::zeros(self.cluster.sizes()),
            agents: self.agents.iter().map(|a| Mlp::zeros(a.sizes())).collect(),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.agents.first().map_or(0, |a| a.output_dim())
    }

    pub fn nets(&self) -> impl Iterator<Item = &Mlp> {
        std::iter::once(&self.cluster).chain(&self.agents)
    }

    pub fn nets_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        std::iter::once(&mut self.cluster).chain(&mut self.agents)
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.nets().map(|n| n.params().len()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.nets().all(Mlp::is_finite)
    }

    pub fn agent_q(&self, agent: usize, obs: &[f64]) -> Vec<f64> {
        self.agents[agent].forward(obs)
    }
}

/// One replay record.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub cost: u8,
    pub next_state: Observation,
    pub done: bool,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy per agent: uniform with probability ε, otherwise the agent's own
/// greedy action.
pub fn select_actions<R: Rng + ?Sized>(nets: &QNetworks, obs: &Observation, epsilon: f64, rng: &mut R) -> Vec<usize> {
    let n_actions = nets.num_actions();
    obs.agents
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                rng.random_range(0..n_actions)
            } else {
                argmax(&nets.agent_q(i, o))
            }
        })
        .collect()
}

/// Reward shaped by the constraint slack: `r + λ (c − cost)`.
pub fn lagrangian_reward(reward: f64, cost: u8, lambda: f64, c: f64) -> f64 {
    reward + lambda * (c - cost as f64)
}

pub fn joint_q(nets: &QNetworks, obs: &Observation, actions: &[usize]) -> f64 {
    let agents: f64 = obs
        .masks
        .iter()
        .zip(&obs.agents)
        .enumerate()
        .filter(|(_, (&m, _))| m)
        .map(|(i, (_, o))| nets.agent_q(i, o)[actions[i]])
        .sum();
    nets.cluster.forward(&obs.cluster)[0] + agents
}

/// Double-Q bootstrap target. Next actions are chosen by the online agent
/// networks and evaluated by the target networks; masked agents contribute
/// nothing and terminal transitions do not bootstrap.
pub fn td_target(t: &Transition, online: &QNetworks, target: &QNetworks, lambda: f64, c: f64, gamma: f64) -> f64 {
    let shaped = lagrangian_reward(t.reward, t.cost, lambda, c);
    if t.done {
        return shaped;
    }
    let next = &t.next_state;
    let mut y = target.cluster.forward(&next.cluster)[0];
    for (i, (o, &m)) in next.agents.iter().zip(&next.masks).enumerate() {
        if m {
            let a_star = argmax(&online.agent_q(i, o));
            y += target.agent_q(i, o)[a_star];
        }
    }
    shaped + gamma * y
}

/// Mean squared TD error over the batch and its exact gradient with respect
/// to the online parameters (targets held constant).
pub fn loss_and_gradients(
    batch: &[&Transition],
    online: &QNetworks,
    target: &QNetworks,
    lambda: f64,
    c: f64,
    gamma: f64,
) -> Result<(f64, QNetworks), LearnerError> {
    assert!(!batch.is_empty(), "loss over an empty batch");
    let mut grads = online.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (b, t) in batch.iter().enumerate() {
        let y = td_target(t, online, target, lambda, c, gamma);
        let cluster_acts = online.cluster.forward_trace(&t.state.cluster);
        let mut pred = cluster_acts.last().unwrap()[0];
        let mut agent_acts = Vec::new();
        for (i, (o, &m)) in t.state.agents.iter().zip(&t.state.masks).enumerate() {
            if m {
                let acts = online.agents[i].forward_trace(o);
                pred += acts.last().unwrap()[t.actions[i]];
                agent_acts.push((i, acts));
            }
        }
        let err = pred - y;
        if !err.is_finite() {
            return Err(LearnerError::NonFiniteLoss {
                context: format!("batch item {b}: prediction {pred}, target {y}"),
            });
        }
        loss += err * err * scale;
        let g = 2.0 * err * scale;
        online.cluster.backward(&cluster_acts, &[g], grads.cluster.params_mut());
        for (i, acts) in agent_acts {
            let mut out = vec![0.0; online.agents[i].output_dim()];
            out[t.actions[i]] = g;
            online.agents[i].backward(&acts, &out, grads.agents[i].params_mut());
        }
    }
    if !loss.is_finite() || !grads.is_finite() {
        return Err(LearnerError::NonFiniteLoss {
            context: format!("loss {loss}"),
        });
    }
    Ok((loss, grads))
}

/// Polyak averaging toward the online parameters: `θ̄ ← τθ + (1−τ)θ̄`.
pub fn soft_update(online: &QNetworks, target: &mut QNetworks, tau: f64) {
    for (src, dst) in online.nets().zip(target.nets_mut()) {
        for (s, d) in src.params().iter().zip(dst.params_mut()) {
            *d = tau * s + (1.0 - tau) * *d;
        }
    }
}

/// Empirical per-step hot-cluster frequency of the given transitions.
pub fn estimate_constraint_level<'a>(batch: impl IntoIterator<Item = &'a Transition>) -> f64 {
    let (sum, n) = batch
        .into_iter()
        .fold((0.0, 0usize), |(s, n), t| (s + t.cost as f64, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Projected dual step: `λ ← max(0, λ − η (c − U))`.
pub fn dual_update(lambda: f64, eta: f64, c: f64, u: f64) -> f64 {
    (lambda - eta * (c - u)).max(0.0)
}
