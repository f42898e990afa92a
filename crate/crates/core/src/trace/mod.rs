//! Workload traces: which subscriber creates and deletes which VMs at which
//! hour, and how much of its requested CPU each VM actually uses.
//!
//! Time is discretized to whole hours. Usage is stored as a rate of the VM's
//! requested cores, so oversubscription decisions never alter it.

mod generate;
mod io;
mod resample;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{
    generate_synthetic, scenario_preset, GeneratorConfig, LifetimeDist, SubscriberProfile, UsageShape, VmSize,
};
pub use io::{load_traces, read_traces, write_traces, write_traces_to};
pub use resample::resample_for_eval;

/// Hour index. Negative hours describe VMs that already run when an episode
/// starts (warm start).
pub type Hour = i64;

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{file}: parse error at line {line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("unknown scenario '{0}' (expected staggered_peaks or low_duration)")]
    UnknownScenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VmId(pub String);

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VmId {
    fn from(s: &str) -> Self {
        VmId(s.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VmRecord {
    pub vm_id: VmId,
    pub subscriber: usize,
    pub created_at: Hour,
    /// `None` means the VM outlives the trace; it is treated as deleted at the horizon.
    pub deleted_at: Option<Hour>,
    pub requested_cores: f64,
    pub requested_mem: f64,
    pub requested_net: f64,
}

impl VmRecord {
    /// Exclusive end of the VM's lifetime.
    pub fn end(&self, horizon: Hour) -> Hour {
        self.deleted_at.unwrap_or(horizon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UsagePoint {
    pub hour: Hour,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UsageSeries {
    pub vm_id: VmId,
    pub points: Vec<UsagePoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean and standard deviation of usage rate per subscriber and hour of day.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlyStats {
    cells: Vec<[Option<CellStats>; HOURS_PER_DAY]>,
}

impl HourlyStats {
    fn compute(vms: &[VmRecord], usage: &[UsageSeries], num_subscribers: usize, index: &HashMap<VmId, usize>) -> Self {
        let mut sums = vec![[(0.0f64, 0.0f64, 0usize); HOURS_PER_DAY]; num_subscribers];
        for series in usage {
            let sub = vms[index[&series.vm_id]].subscriber;
            for p in &series.points {
                let cell = &mut sums[sub][hour_of_day(p.hour)];
                cell.0 += p.rate;
                cell.1 += p.rate * p.rate;
                cell.2 += 1;
            }
        }
        let cells = sums
            .into_iter()
            .map(|row| {
                row.map(|(sum, sq, count)| {
                    (count > 0).then(|| {
                        let n = count as f64;
                        let mean = sum / n;
                        let var = (sq / n - mean * mean).max(0.0);
                        CellStats {
                            mean,
                            std: var.sqrt(),
                            count,
                        }
                    })
                })
            })
            .collect();
        HourlyStats { cells }
    }

    pub fn cell(&self, subscriber: usize, hour: Hour) -> Option<CellStats> {
        self.cells.get(subscriber).and_then(|row| row[hour_of_day(hour)])
    }

    pub fn num_subscribers(&self) -> usize {
        self.cells.len()
    }
}

pub fn hour_of_day(hour: Hour) -> usize {
    hour.rem_euclid(HOURS_PER_DAY as Hour) as usize
}

/// Immutable, validated workload.
///
/// Besides the raw records it carries lookup tables used by the simulator:
/// arrivals and departures per hour and a dense per-VM usage array.
#[derive(Clone, Debug)]
pub struct TraceSet {
    vms: Vec<VmRecord>,
    usage: Vec<UsageSeries>,
    num_subscribers: usize,
    horizon: Hour,
    hourly_stats: HourlyStats,
    by_id: HashMap<VmId, usize>,
    dense_usage: Vec<Vec<f64>>,
    /// `[subscriber]` → hour → (sum of rates, number of points).
    subscriber_hourly: Vec<HashMap<Hour, (f64, usize)>>,
}

impl PartialEq for TraceSet {
    fn eq(&self, other: &Self) -> bool {
        self.vms == other.vms
            && self.usage == other.usage
            && self.num_subscribers == other.num_subscribers
            && self.horizon == other.horizon
    }
}

impl TraceSet {
    /// Validates the records and builds the lookup tables.
    ///
    /// Subscriber ids must cover `0..N` without gaps. When `horizon` is `None`
    /// it is inferred as the latest explicit event in the trace.
    pub fn new(vms: Vec<VmRecord>, usage: Vec<UsageSeries>, horizon: Option<Hour>) -> Result<Self, TraceError> {
        let mut by_id = HashMap::with_capacity(vms.len());
        for (i, vm) in vms.iter().enumerate() {
            if !(vm.requested_cores > 0.0) || !vm.requested_cores.is_finite() {
                return Err(TraceError::Validation(format!(
                    "vm {}: requested_cores must be positive, got {}",
                    vm.vm_id, vm.requested_cores
                )));
            }
            if !(vm.requested_mem >= 0.0) || !(vm.requested_net >= 0.0) {
                return Err(TraceError::Validation(format!(
                    "vm {}: requested mem/net must be non-negative",
                    vm.vm_id
                )));
            }
            if let Some(d) = vm.deleted_at {
                if d <= vm.created_at {
                    return Err(TraceError::Validation(format!(
                        "vm {}: deleted_at {} is not after created_at {}",
                        vm.vm_id, d, vm.created_at
                    )));
                }
            }
            if by_id.insert(vm.vm_id.clone(), i).is_some() {
                return Err(TraceError::Validation(format!("duplicate vm id {}", vm.vm_id)));
            }
        }

        let num_subscribers = vms.iter().map(|v| v.subscriber + 1).max().unwrap_or(0);
        let mut seen = vec![false; num_subscribers];
        for vm in &vms {
            seen[vm.subscriber] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(TraceError::Validation(format!(
                "subscriber ids must be contiguous from 0; subscriber {missing} has no VMs"
            )));
        }

        let inferred = vms
            .iter()
            .map(|v| v.deleted_at.unwrap_or(v.created_at + 1))
            .chain(usage.iter().flat_map(|s| s.points.iter().map(|p| p.hour + 1)))
            .max()
            .unwrap_or(1)
            .max(1);
        let horizon = horizon.unwrap_or(inferred);
        if horizon < 1 {
            return Err(TraceError::Validation("horizon must be at least one hour".into()));
        }

        let mut covered = vec![false; vms.len()];
        for series in &usage {
            let Some(&idx) = by_id.get(&series.vm_id) else {
                return Err(TraceError::Validation(format!(
                    "usage references unknown vm {}",
                    series.vm_id
                )));
            };
            if std::mem::replace(&mut covered[idx], true) {
                return Err(TraceError::Validation(format!(
                    "vm {} has more than one usage series",
                    series.vm_id
                )));
            }
            let vm = &vms[idx];
            let end = vm.end(horizon);
            for p in &series.points {
                if p.hour < vm.created_at || p.hour >= end {
                    return Err(TraceError::Validation(format!(
                        "usage point for vm {} at hour {} lies outside its lifetime [{}, {})",
                        vm.vm_id, p.hour, vm.created_at, end
                    )));
                }
                if !(0.0..=1.0).contains(&p.rate) {
                    return Err(TraceError::Validation(format!(
                        "usage rate {} for vm {} at hour {} is outside [0, 1]",
                        p.rate, vm.vm_id, p.hour
                    )));
                }
            }
        }

        let mut dense_usage: Vec<Vec<f64>> = vms
            .iter()
            .map(|vm| vec![0.0; (vm.end(horizon) - vm.created_at).max(0) as usize])
            .collect();
        for series in &usage {
            let idx = by_id[&series.vm_id];
            let start = vms[idx].created_at;
            for p in &series.points {
                dense_usage[idx][(p.hour - start) as usize] = p.rate;
            }
        }

        let mut subscriber_hourly = vec![HashMap::new(); num_subscribers];
        for series in &usage {
            let sub = vms[by_id[&series.vm_id]].subscriber;
            for p in &series.points {
                let cell: &mut (f64, usize) = subscriber_hourly[sub].entry(p.hour).or_default();
                cell.0 += p.rate;
                cell.1 += 1;
            }
        }

        let hourly_stats = HourlyStats::compute(&vms, &usage, num_subscribers, &by_id);
        Ok(TraceSet {
            vms,
            usage,
            num_subscribers,
            horizon,
            hourly_stats,
            by_id,
            dense_usage,
            subscriber_hourly,
        })
    }

    pub fn vms(&self) -> &[VmRecord] {
        &self.vms
    }

    pub fn usage(&self) -> &[UsageSeries] {
        &self.usage
    }

    pub fn num_subscribers(&self) -> usize {
        self.num_subscribers
    }

    pub fn horizon(&self) -> Hour {
        self.horizon
    }

    pub fn hourly_stats(&self) -> &HourlyStats {
        &self.hourly_stats
    }

    pub fn vm_index(&self, id: &VmId) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn vm(&self, id: &VmId) -> Option<&VmRecord> {
        self.vm_index(id).map(|i| &self.vms[i])
    }

    /// Usage rate of VM `idx` at hour `t`; zero outside its recorded points.
    pub fn usage_rate_at(&self, idx: usize, t: Hour) -> f64 {
        let offset = t - self.vms[idx].created_at;
        if offset < 0 {
            return 0.0;
        }
        self.dense_usage[idx].get(offset as usize).copied().unwrap_or(0.0)
    }

    pub fn usage_rate(&self, id: &VmId, t: Hour) -> f64 {
        self.vm_index(id).map_or(0.0, |i| self.usage_rate_at(i, t))
    }

    /// Sum and count of a subscriber's usage points at hour `t`.
    pub fn subscriber_usage_at(&self, subscriber: usize, t: Hour) -> (f64, usize) {
        self.subscriber_hourly
            .get(subscriber)
            .and_then(|m| m.get(&t))
            .copied()
            .unwrap_or((0.0, 0))
    }

    /// Replaces usage with a new series set, keeping the VM records.
    pub(crate) fn with_usage(&self, usage: Vec<UsageSeries>) -> Result<Self, TraceError> {
        TraceSet::new(self.vms.clone(), usage, Some(self.horizon))
    }
}
