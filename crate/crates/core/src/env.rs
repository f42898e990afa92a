//! The oversubscription environment: an hourly simulator in which every
//! subscriber picks the oversubscription rate for its arriving VMs.
//!
//! Each step deletes expiring VMs, places the step's arrivals with best-fit in
//! trace order at their subscribers' chosen rates, measures actual usage per PM
//! and reports
//!
//! * the reward `(requested − assigned) / Z` over VMs placed in the step,
//! * the constraint cost `max_k hot_k` (1 when any PM is hot).

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{hot_indicators, Cluster, ClusterConfig, ClusterError};
use crate::trace::{resample_for_eval, Hour, TraceSet, HOURS_PER_DAY};

/// Per-agent observation: assigned, live requested, mem, net, CPU/mem/net
/// requested this hour, hour sin, hour cos.
pub const AGENT_OBS_DIM: usize = 9;
const AGENT_STATUS_DIM: usize = 7;

pub fn cluster_obs_dim(num_agents: usize) -> usize {
    AGENT_STATUS_DIM * num_agents + 2
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("warm start failed, cluster undersized: {0}")]
    Reset(ClusterError),
    #[error("episode is done; call reset")]
    EpisodeDone,
    #[error("step called before reset")]
    NotReset,
    #[error("expected {expected} actions, got {got}")]
    ActionArity { expected: usize, got: usize },
    #[error("action index {index} out of range for agent {agent}")]
    InvalidAction { agent: usize, index: usize },
    #[error("rate {rate} for agent {agent} is outside (0, 1]")]
    InvalidRate { agent: usize, rate: f64 },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    #[default]
    Cold,
    Warm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub cluster: ClusterConfig,
    pub start_mode: StartMode,
    /// Episode length T in hours.
    pub horizon: usize,
    /// Allowed hot frequency δ: an episode violates when hot hours / T ≥ δ.
    pub delta: f64,
    /// Selectable oversubscription rates, strictly increasing, ending at 1.
    pub action_set: Vec<f64>,
    /// Reward normalizer Z; defaults to total cluster CPU.
    pub reward_scale: Option<f64>,
    /// Redraw usage from the hourly statistics on every reset.
    pub resample_on_reset: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            cluster: ClusterConfig::default(),
            start_mode: StartMode::Cold,
            horizon: 120,
            delta: 1.0 / 40.0,
            action_set: vec![0.2, 0.3, 0.4, 0.5, 0.6, 1.0],
            reward_scale: None,
            resample_on_reset: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.cluster.validate()?;
        if self.horizon == 0 {
            return Err(EnvError::Config("horizon must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(EnvError::Config("delta must lie in (0, 1]".into()));
        }
        let a = &self.action_set;
        if a.is_empty() || a.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(EnvError::Config("action rates must lie in (0, 1]".into()));
        }
        if a.windows(2).any(|w| w[0] >= w[1]) || *a.last().unwrap() != 1.0 {
            return Err(EnvError::Config(
                "action set must be strictly increasing and end at 1.0".into(),
            ));
        }
        if let Some(z) = self.reward_scale {
            if !(z > 0.0) {
                return Err(EnvError::Config("reward_scale must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale.unwrap_or_else(|| self.cluster.total_cpu())
    }
}

/// `(sin, cos)` of the hour of day on the unit circle.
pub fn hour_encoding(t: Hour) -> (f64, f64) {
    let h = t.rem_euclid(HOURS_PER_DAY as Hour) as f64;
    let angle = 2.0 * PI * h / HOURS_PER_DAY as f64;
    (angle.sin(), angle.cos())
}

/// Hot-cluster indicator: 1 when any PM is hot.
pub fn constraint_cost_cluster(hot: &[bool]) -> u8 {
    hot.iter().any(|&h| h) as u8
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// One `AGENT_OBS_DIM` vector per agent.
    pub agents: Vec<Vec<f64>>,
    /// All agents' status components followed by the hour encoding.
    pub cluster: Vec<f64>,
    /// Agent has VM requests this hour.
    pub masks: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub hot: Vec<bool>,
    pub pm_usage: Vec<f64>,
    pub requested_placed: f64,
    pub assigned_placed: f64,
    pub drops: usize,
    pub assigned_total: f64,
    pub remaining_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub cost: u8,
    pub observation: Observation,
    pub done: bool,
    pub info: StepInfo,
}

/// Events of the episode window, indexed by hour.
#[derive(Clone, Debug)]
struct Schedule {
    /// `[t][subscriber]` → VM indices arriving at `t`.
    arrivals: Vec<Vec<Vec<usize>>>,
    /// `[t]` → VM indices arriving at `t`, in trace order.
    arrival_order: Vec<Vec<usize>>,
    /// `[t]` → VM indices whose lifetime ends at `t`.
    departures: Vec<Vec<usize>>,
    /// VMs created before hour 0 and still alive at 0, in creation order.
    preexisting: Vec<usize>,
}

impl Schedule {
    fn build(trace: &TraceSet, horizon: usize) -> Self {
        let n = trace.num_subscribers();
        let mut arrivals = vec![vec![Vec::new(); n]; horizon];
        let mut arrival_order = vec![Vec::new(); horizon];
        let mut departures = vec![Vec::new(); horizon];
        let mut preexisting = Vec::new();
        for (i, vm) in trace.vms().iter().enumerate() {
            let end = vm.end(trace.horizon());
            if vm.created_at < 0 {
                if end > 0 {
                    preexisting.push(i);
                }
            } else if (vm.created_at as usize) < horizon {
                arrivals[vm.created_at as usize][vm.subscriber].push(i);
                arrival_order[vm.created_at as usize].push(i);
            }
            if end > 0 && (end as usize) < horizon {
                departures[end as usize].push(i);
            }
        }
        preexisting.sort_by_key(|&i| (trace.vms()[i].created_at, i));
        Schedule {
            arrivals,
            arrival_order,
            departures,
            preexisting,
        }
    }
}

/// One simulator instance. Strictly sequential; the trace may be shared.
#[derive(Clone, Debug)]
pub struct OversubEnv {
    config: EnvConfig,
    base_trace: Arc<TraceSet>,
    trace: Arc<TraceSet>,
    schedule: Schedule,
    cluster: Cluster,
    t: usize,
    started: bool,
}

impl OversubEnv {
    pub fn new(config: EnvConfig, trace: Arc<TraceSet>) -> Result<Self, EnvError> {
        config.validate()?;
        let schedule = Schedule::build(&trace, config.horizon);
        let cluster = Cluster::new(config.cluster.clone())?;
        Ok(OversubEnv {
            config,
            base_trace: trace.clone(),
            trace,
            schedule,
            cluster,
            t: 0,
            started: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Trace driving the current episode (resampled when configured so).
    pub fn trace(&self) -> &TraceSet {
        &self.trace
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn num_agents(&self) -> usize {
        self.trace.num_subscribers()
    }

    pub fn action_set(&self) -> &[f64] {
        &self.config.action_set
    }

    /// Current hour within the episode.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.started && self.t >= self.config.horizon
    }

    /// Replaces the driving trace for subsequent episodes. VM records must
    /// match the trace the environment was built with.
    pub fn set_trace(&mut self, trace: Arc<TraceSet>) -> Result<(), EnvError> {
        if trace.vms() != self.base_trace.vms() {
            return Err(EnvError::Config("replacement trace has different VM records".into()));
        }
        self.trace = trace;
        self.started = false;
        Ok(())
    }

    /// Starts a new episode. Cold starts begin empty; warm starts first place
    /// every VM created before hour 0 at rate 1.0.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        if self.config.resample_on_reset {
            self.trace = Arc::new(resample_for_eval(&self.base_trace, seed));
        }
        self.cluster = Cluster::new(self.config.cluster.clone())?;
        self.t = 0;
        self.started = true;
        if self.config.start_mode == StartMode::Warm {
            for &i in &self.schedule.preexisting {
                self.cluster
                    .best_fit_place(&self.trace.vms()[i], 1.0)
                    .map_err(EnvError::Reset)?;
            }
        }
        Ok(self.observe())
    }

    /// Steps with one action index per agent.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        let set = &self.config.action_set;
        let rates = actions
            .iter()
            .enumerate()
            .map(|(agent, &index)| set.get(index).copied().ok_or(EnvError::InvalidAction { agent, index }))
            .collect::<Result<Vec<f64>, _>>()?;
        self.step_rates(&rates)
    }

    /// Steps with one continuous rate per agent, applied to all of that
    /// agent's arrivals this hour.
    pub fn step_rates(&mut self, rates: &[f64]) -> Result<StepResult, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        let n = self.num_agents();
        if rates.len() != n {
            return Err(EnvError::ActionArity {
                expected: n,
                got: rates.len(),
            });
        }
        if let Some((agent, &rate)) = rates.iter().enumerate().find(|(_, &r)| !(r > 0.0 && r <= 1.0)) {
            return Err(EnvError::InvalidRate { agent, rate });
        }
        let t = self.t;
        let vms = self.trace.vms();

        for &i in &self.schedule.departures[t] {
            if self.cluster.placement(&vms[i].vm_id).is_some() {
                self.cluster.delete_vm(&vms[i].vm_id)?;
            }
        }

        let mut requested = 0.0;
        let mut assigned = 0.0;
        let mut drops = 0;
        for &i in &self.schedule.arrival_order[t] {
            let vm = &vms[i];
            let rate = rates[vm.subscriber];
            match self.cluster.best_fit_place(vm, rate) {
                Ok(_) => {
                    requested += vm.requested_cores;
                    assigned += rate * vm.requested_cores;
                }
                Err(ClusterError::NoFeasiblePm { .. }) => {
                    log::debug!("hour {t}: dropped vm {} (no feasible PM)", vm.vm_id);
                    drops += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }

        let pm_usage = self.cluster.actual_usage_per_pm(&self.trace, t as Hour);
        let hot = hot_indicators(&pm_usage, &self.config.cluster);
        let cost = constraint_cost_cluster(&hot);
        let reward = (requested - assigned) / self.config.reward_scale();
        let (assigned_total, remaining_total) = self.cluster.totals();

        self.t += 1;
        Ok(StepResult {
            reward,
            cost,
            observation: self.observe(),
            done: self.t == self.config.horizon,
            info: StepInfo {
                hot,
                pm_usage,
                requested_placed: requested,
                assigned_placed: assigned,
                drops,
                assigned_total,
                remaining_total,
            },
        })
    }

    /// Builds the observation for the current hour. Resource components are
    /// expressed in units of one PM's capacity.
    pub fn observe(&self) -> Observation {
        let n = self.num_agents();
        let cfg = &self.config.cluster;
        let mut status = vec![[0.0f64; AGENT_STATUS_DIM]; n];
        for p in self.cluster.placements().values() {
            let s = &mut status[p.subscriber];
            s[0] += p.assigned_cores / cfg.cpu_capacity;
            s[1] += p.requested_cores / cfg.cpu_capacity;
            s[2] += p.reserved_mem / cfg.mem_capacity;
            s[3] += p.reserved_net / cfg.net_capacity;
        }
        if let Some(arrivals) = self.schedule.arrivals.get(self.t) {
            for (sub, list) in arrivals.iter().enumerate() {
                for &i in list {
                    let vm = &self.trace.vms()[i];
                    status[sub][4] += vm.requested_cores / cfg.cpu_capacity;
                    status[sub][5] += vm.requested_mem / cfg.mem_capacity;
                    status[sub][6] += vm.requested_net / cfg.net_capacity;
                }
            }
        }
        let (sin, cos) = hour_encoding(self.t as Hour);
        let agents = status
            .iter()
            .map(|s| {
                let mut o = Vec::with_capacity(AGENT_OBS_DIM);
                o.extend_from_slice(s);
                o.extend_from_slice(&[sin, cos]);
                o
            })
            .collect();
        let mut cluster = Vec::with_capacity(cluster_obs_dim(n));
        for s in &status {
            cluster.extend_from_slice(s);
        }
        cluster.extend_from_slice(&[sin, cos]);
        Observation {
            agents,
            cluster,
            masks: status.iter().map(|s| s[4] > 0.0).collect(),
        }
    }
}
