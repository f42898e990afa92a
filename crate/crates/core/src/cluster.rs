//! Physical machines, the best-fit scheduler and hot-machine detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Hour, TraceSet, VmId, VmRecord};

/// Slack for floating-point capacity checks, in cores (or GB / Mbps).
pub const FIT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("no PM can host vm {vm} ({cores} cores)")]
    NoFeasiblePm { vm: VmId, cores: f64 },
    #[error("vm {0} is not placed")]
    UnknownVm(VmId),
    #[error("vm {0} is already placed")]
    AlreadyPlaced(VmId),
    #[error("oversubscription rate {0} is outside (0, 1]")]
    InvalidRate(f64),
    #[error("invalid cluster config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub num_pms: usize,
    /// CPU cores per PM.
    pub cpu_capacity: f64,
    /// Memory per PM, GB.
    pub mem_capacity: f64,
    /// Network bandwidth per PM, Mbps.
    pub net_capacity: f64,
    /// A PM is hot when its actual usage reaches `hot_fraction * cpu_capacity`.
    pub hot_fraction: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            num_pms: 500,
            cpu_capacity: 96.0,
            mem_capacity: 1024.0,
            net_capacity: 25_000.0,
            hot_fraction: 0.6,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.num_pms == 0 {
            return Err(ClusterError::Config("num_pms must be positive".into()));
        }
        if !(self.cpu_capacity > 0.0 && self.mem_capacity > 0.0 && self.net_capacity > 0.0) {
            return Err(ClusterError::Config("capacities must be positive".into()));
        }
        if !(self.hot_fraction > 0.0 && self.hot_fraction <= 1.0) {
            return Err(ClusterError::Config("hot_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn hot_threshold(&self) -> f64 {
        self.hot_fraction * self.cpu_capacity
    }

    pub fn total_cpu(&self) -> f64 {
        self.num_pms as f64 * self.cpu_capacity
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub vm_id: VmId,
    pub pm: usize,
    pub subscriber: usize,
    pub requested_cores: f64,
    pub assigned_cores: f64,
    pub reserved_mem: f64,
    pub reserved_net: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PmState {
    pub assigned_cpu: f64,
    pub reserved_mem: f64,
    pub reserved_net: f64,
    /// Hosted VMs in placement order.
    vms: Vec<VmId>,
}

impl PmState {
    pub fn vms(&self) -> &[VmId] {
        &self.vms
    }
}

/// Mutable placement state of one cluster.
///
/// Per-PM totals are recomputed from the hosted placements after every
/// mutation, so they always equal the sum over live placements exactly and a
/// place/delete pair restores the previous state bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    config: ClusterConfig,
    pms: Vec<PmState>,
    placements: BTreeMap<VmId, Placement>,
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Result<Self, ClusterError> {
        config.validate()?;
        Ok(Cluster {
            pms: vec![PmState::default(); config.num_pms],
            config,
            placements: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn pms(&self) -> &[PmState] {
        &self.pms
    }

    pub fn placements(&self) -> &BTreeMap<VmId, Placement> {
        &self.placements
    }

    pub fn placement(&self, id: &VmId) -> Option<&Placement> {
        self.placements.get(id)
    }

    /// Index of the PM a best-fit scheduler would choose, without placing.
    pub fn best_fit_candidate(&self, cores: f64, mem: f64, net: f64) -> Option<usize> {
        let cfg = &self.config;
        let mut best: Option<(usize, f64)> = None;
        for (k, pm) in self.pms.iter().enumerate() {
            let fits = pm.assigned_cpu + cores <= cfg.cpu_capacity + FIT_EPS
                && pm.reserved_mem + mem <= cfg.mem_capacity + FIT_EPS
                && pm.reserved_net + net <= cfg.net_capacity + FIT_EPS;
            if !fits {
                continue;
            }
            let remaining = cfg.cpu_capacity - (pm.assigned_cpu + cores);
            // Strict comparison keeps the lowest index on ties.
            if best.map_or(true, |(_, r)| remaining < r) {
                best = Some((k, remaining));
            }
        }
        best.map(|(k, _)| k)
    }

    /// Places `vm` with `rate × requested_cores` assigned cores on the feasible
    /// PM left with the least free CPU.
    pub fn best_fit_place(&mut self, vm: &VmRecord, rate: f64) -> Result<usize, ClusterError> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(ClusterError::InvalidRate(rate));
        }
        if self.placements.contains_key(&vm.vm_id) {
            return Err(ClusterError::AlreadyPlaced(vm.vm_id.clone()));
        }
        let assigned = rate * vm.requested_cores;
        let pm = self
            .best_fit_candidate(assigned, vm.requested_mem, vm.requested_net)
            .ok_or_else(|| ClusterError::NoFeasiblePm {
                vm: vm.vm_id.clone(),
                cores: assigned,
            })?;
        self.placements.insert(
            vm.vm_id.clone(),
            Placement {
                vm_id: vm.vm_id.clone(),
                pm,
                subscriber: vm.subscriber,
                requested_cores: vm.requested_cores,
                assigned_cores: assigned,
                reserved_mem: vm.requested_mem,
                reserved_net: vm.requested_net,
            },
        );
        self.pms[pm].vms.push(vm.vm_id.clone());
        self.recount(pm);
        Ok(pm)
    }

    /// Removes a placement and returns the assigned cores it released.
    pub fn delete_vm(&mut self, id: &VmId) -> Result<f64, ClusterError> {
        let placement = self
            .placements
            .remove(id)
            .ok_or_else(|| ClusterError::UnknownVm(id.clone()))?;
        self.pms[placement.pm].vms.retain(|v| v != id);
        self.recount(placement.pm);
        Ok(placement.assigned_cores)
    }

    fn recount(&mut self, pm: usize) {
        let (mut cpu, mut mem, mut net) = (0.0, 0.0, 0.0);
        for id in &self.pms[pm].vms {
            let p = &self.placements[id];
            cpu += p.assigned_cores;
            mem += p.reserved_mem;
            net += p.reserved_net;
        }
        let state = &mut self.pms[pm];
        state.assigned_cpu = cpu;
        state.reserved_mem = mem;
        state.reserved_net = net;
    }

    /// Actual CPU usage per PM at hour `t`: each hosted VM contributes its
    /// usage rate times its *requested* cores.
    pub fn actual_usage_per_pm(&self, trace: &TraceSet, t: Hour) -> Vec<f64> {
        self.pms
            .iter()
            .map(|pm| {
                pm.vms
                    .iter()
                    .map(|id| trace.usage_rate(id, t) * self.placements[id].requested_cores)
                    .sum()
            })
            .collect()
    }

    /// `(assigned, remaining)` cores summed over all PMs.
    pub fn totals(&self) -> (f64, f64) {
        let assigned: f64 = self.pms.iter().map(|p| p.assigned_cpu).sum();
        (assigned, self.config.total_cpu() - assigned)
    }

    /// Checks that per-PM totals match a fresh recount and that no capacity is
    /// exceeded.
    pub fn check_invariants(&self) -> Result<(), String> {
        let cfg = &self.config;
        for (k, pm) in self.pms.iter().enumerate() {
            let hosted: Vec<&Placement> = self.placements.values().filter(|p| p.pm == k).collect();
            if hosted.len() != pm.vms.len() {
                return Err(format!("pm {k}: placement index out of sync"));
            }
            let mut cpu = 0.0;
            let mut mem = 0.0;
            let mut net = 0.0;
            for id in &pm.vms {
                let p = &self.placements[id];
                cpu += p.assigned_cores;
                mem += p.reserved_mem;
                net += p.reserved_net;
            }
            if cpu != pm.assigned_cpu || mem != pm.reserved_mem || net != pm.reserved_net {
                return Err(format!("pm {k}: totals differ from recount"));
            }
            if cpu > cfg.cpu_capacity + FIT_EPS || mem > cfg.mem_capacity + FIT_EPS || net > cfg.net_capacity + FIT_EPS
            {
                return Err(format!("pm {k}: capacity exceeded"));
            }
        }
        Ok(())
    }
}

/// 1 for every PM whose usage reaches the hot threshold (inclusive).
pub fn hot_indicators(usage: &[f64], config: &ClusterConfig) -> Vec<bool> {
    let threshold = config.hot_threshold();
    usage.iter().map(|&u| u >= threshold).collect()
}
