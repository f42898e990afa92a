//! Comparison policies: a static global rate, a per-subscriber moving
//! average of observed usage, and a per-subscriber maximum-usage predictor.

use thiserror::Error;

use crate::env::{Observation, OversubEnv};
use crate::policy::Policy;
use crate::trace::{Hour, TraceSet};

pub const DEFAULT_MA_WINDOW: usize = 24;
pub const DEFAULT_SL_MARGIN: f64 = 1.05;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("subscriber {subscriber} has no usage history to fit on")]
    MissingSubscriberHistory { subscriber: usize },
    #[error("invalid baseline parameter: {0}")]
    InvalidParameter(String),
}

/// The same rate for every agent at every step.
#[derive(Clone, Debug)]
pub struct GridPolicy {
    rate: f64,
}

impl GridPolicy {
    pub fn new(rate: f64) -> Result<Self, BaselineError> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(BaselineError::InvalidParameter(format!(
                "grid rate {rate} outside (0, 1]"
            )));
        }
        Ok(GridPolicy { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl Policy for GridPolicy {
    fn name(&self) -> String {
        format!("grid:{}", self.rate)
    }

    fn rates(&self, env: &OversubEnv, _obs: &Observation) -> Vec<f64> {
        vec![self.rate; env.num_agents()]
    }
}

/// Mean of `history` clipped to `[min_rate, 1]`, or 1.0 without history.
pub fn moving_average_rate(history: &[f64], min_rate: f64) -> f64 {
    if history.is_empty() {
        return 1.0;
    }
    let mean = history.iter().sum::<f64>() / history.len() as f64;
    mean.clamp(min_rate, 1.0)
}

/// Each subscriber's mean usage over the preceding `window` hours.
#[derive(Clone, Debug)]
pub struct MovingAveragePolicy {
    window: usize,
}

impl MovingAveragePolicy {
    pub fn new(window: usize) -> Result<Self, BaselineError> {
        if window == 0 {
            return Err(BaselineError::InvalidParameter(
                "moving-average window must be at least 1".into(),
            ));
        }
        Ok(MovingAveragePolicy { window })
    }

    /// Rate for `subscriber` at hour `t`, from usage points in `[t − window, t)`.
    pub fn rate_at(&self, trace: &TraceSet, subscriber: usize, t: Hour, min_rate: f64) -> f64 {
        let (sum, count) = (t - self.window as Hour..t)
            .map(|h| trace.subscriber_usage_at(subscriber, h))
            .fold((0.0, 0), |(s, n), (ds, dn)| (s + ds, n + dn));
        if count == 0 {
            1.0
        } else {
            (sum / count as f64).clamp(min_rate, 1.0)
        }
    }
}

impl Policy for MovingAveragePolicy {
    fn name(&self) -> String {
        format!("ma:{}", self.window)
    }

    fn rates(&self, env: &OversubEnv, _obs: &Observation) -> Vec<f64> {
        let min_rate = env.action_set()[0];
        let t = env.t() as Hour;
        (0..env.num_agents())
            .map(|sub| self.rate_at(env.trace(), sub, t, min_rate))
            .collect()
    }
}

/// Fixed per-subscriber rates: the maximum observed usage times a margin.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedMaxPolicy {
    rates: Vec<f64>,
}

impl SupervisedMaxPolicy {
    /// Fits on `trace`. Rates are clipped to `[min_rate, 1]`.
    pub fn fit(trace: &TraceSet, margin: f64, min_rate: f64) -> Result<Self, BaselineError> {
        if !(margin > 0.0) {
            return Err(BaselineError::InvalidParameter(format!(
                "margin {margin} must be positive"
            )));
        }
        if !(min_rate > 0.0 && min_rate <= 1.0) {
            return Err(BaselineError::InvalidParameter(format!(
                "min rate {min_rate} outside (0, 1]"
            )));
        }
        let mut max: Vec<Option<f64>> = vec![None; trace.num_subscribers()];
        for series in trace.usage() {
            let sub = trace.vm(&series.vm_id).expect("usage refers to known vm").subscriber;
            for p in &series.points {
                let m = max[sub].get_or_insert(p.rate);
                *m = m.max(p.rate);
            }
        }
        let rates = max
            .iter()
            .enumerate()
            .map(|(subscriber, m)| {
                m.map(|m| (m * margin).clamp(min_rate, 1.0))
                    .ok_or(BaselineError::MissingSubscriberHistory { subscriber })
            })
            .collect::<Result<_, _>>()?;
        Ok(SupervisedMaxPolicy { rates })
    }

    pub fn rates_per_subscriber(&self) -> &[f64] {
        &self.rates
    }
}

impl Policy for SupervisedMaxPolicy {
    fn name(&self) -> String {
        "sl".into()
    }

    fn rates(&self, _env: &OversubEnv, _obs: &Observation) -> Vec<f64> {
        self.rates.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{UsagePoint, UsageSeries, VmId, VmRecord};

    fn trace(points: &[(usize, Hour, f64)]) -> TraceSet {
        let mut vms = Vec::new();
        let mut usage = Vec::new();
        for (i, &(sub, hour, rate)) in points.iter().enumerate() {
            let id = VmId(format!("v{i}"));
            vms.push(VmRecord {
                vm_id: id.clone(),
                subscriber: sub,
                created_at: hour,
                deleted_at: Some(hour + 1),
                requested_cores: 2.0,
                requested_mem: 4.0,
                requested_net: 200.0,
            });
            usage.push(UsageSeries {
                vm_id: id,
                points: vec![UsagePoint { hour, rate }],
            });
        }
        TraceSet::new(vms, usage, Some(10)).unwrap()
    }

    #[test]
    fn grid_rate_bounds() {
        assert!(GridPolicy::new(0.4).is_ok());
        assert!(GridPolicy::new(0.0).is_err());
        assert!(GridPolicy::new(1.2).is_err());
    }

    #[test]
    fn moving_average_examples() {
        assert!((moving_average_rate(&[0.2, 0.4], 0.2) - 0.3).abs() < 1e-12);
        assert_eq!(moving_average_rate(&[], 0.2), 1.0);
        assert_eq!(moving_average_rate(&[0.05], 0.2), 0.2);
    }

    #[test]
    fn moving_average_reads_window_of_trace() {
        let t = trace(&[(0, 0, 0.2), (0, 1, 0.4), (0, 3, 0.9)]);
        let ma = MovingAveragePolicy::new(2).unwrap();
        assert!((ma.rate_at(&t, 0, 2, 0.2) - 0.3).abs() < 1e-12);
        // [1, 3) holds only the 0.4 point; hour 3 is not yet history.
        assert!((ma.rate_at(&t, 0, 3, 0.2) - 0.4).abs() < 1e-12);
        assert_eq!(ma.rate_at(&t, 0, 0, 0.2), 1.0);
        assert!(MovingAveragePolicy::new(0).is_err());
    }

    #[test]
    fn supervised_max_examples() {
        let t = trace(&[(0, 0, 0.2), (0, 1, 0.7), (0, 2, 0.5)]);
        let sl = SupervisedMaxPolicy::fit(&t, 1.0, 0.2).unwrap();
        assert_eq!(sl.rates_per_subscriber(), &[0.7]);

        let t = trace(&[(0, 0, 0.99)]);
        let sl = SupervisedMaxPolicy::fit(&t, 1.05, 0.2).unwrap();
        assert_eq!(sl.rates_per_subscriber(), &[1.0]);
    }

    #[test]
    fn supervised_max_needs_history() {
        let mut t = trace(&[(0, 0, 0.3), (1, 1, 0.4)]);
        t = TraceSet::new(t.vms().to_vec(), t.usage()[..1].to_vec(), Some(10)).unwrap();
        assert_eq!(
            SupervisedMaxPolicy::fit(&t, 1.05, 0.2),
            Err(BaselineError::MissingSubscriberHistory { subscriber: 1 })
        );
    }
}
