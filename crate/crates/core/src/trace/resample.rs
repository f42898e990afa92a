use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{TraceSet, UsagePoint, UsageSeries};

/// Redraws every usage point from a Gaussian fitted to its subscriber and
/// hour-of-day cell, clipped to `[0, 1]`. VM records are left untouched.
pub fn resample_for_eval(trace: &TraceSet, seed: u64) -> TraceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = trace.hourly_stats();
    let mut missing = 0usize;
    let usage = trace
        .usage()
        .iter()
        .map(|series| {
            let sub = trace.vm(&series.vm_id).expect("validated trace").subscriber;
            let points = series
                .points
                .iter()
                .map(|p| {
                    let rate = match stats.cell(sub, p.hour) {
                        Some(cell) if cell.std > 0.0 => {
                            Normal::new(cell.mean, cell.std).expect("finite std").sample(&mut rng)
                        }
                        Some(cell) => cell.mean,
                        None => {
                            missing += 1;
                            p.rate
                        }
                    };
                    UsagePoint {
                        hour: p.hour,
                        rate: rate.clamp(0.0, 1.0),
                    }
                })
                .collect();
            UsageSeries {
                vm_id: series.vm_id.clone(),
                points,
            }
        })
        .collect();
    if missing > 0 {
        log::warn!("{missing} usage points had no hourly statistics; kept their original rate");
    }
    trace
        .with_usage(usage)
        .expect("resampling preserves hours and keeps rates in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{VmId, VmRecord};

    fn trace(rates: &[(i64, f64)]) -> TraceSet {
        let vm = VmRecord {
            vm_id: VmId("a".into()),
            subscriber: 0,
            created_at: 0,
            deleted_at: Some(72),
            requested_cores: 4.0,
            requested_mem: 0.0,
            requested_net: 0.0,
        };
        let usage = UsageSeries {
            vm_id: vm.vm_id.clone(),
            points: rates.iter().map(|&(hour, rate)| UsagePoint { hour, rate }).collect(),
        };
        TraceSet::new(vec![vm], vec![usage], None).unwrap()
    }

    #[test]
    fn zero_std_reproduces_cell_means() {
        let t = trace(&[(1, 0.2), (25, 0.2), (2, 0.7)]);
        let r = resample_for_eval(&t, 3);
        let got: Vec<f64> = r.usage()[0].points.iter().map(|p| p.rate).collect();
        assert_eq!(got, vec![0.2, 0.2, 0.7]);
    }

    #[test]
    fn draws_above_one_are_clipped() {
        // Hour-0 cell pools 0.4, 1.0, 1.0: mean 0.8, std ~0.28.
        let t = trace(&[(0, 0.4), (24, 1.0), (48, 1.0)]);
        let mut clipped = 0;
        for seed in 0..50 {
            let r = resample_for_eval(&t, seed);
            for p in &r.usage()[0].points {
                assert!((0.0..=1.0).contains(&p.rate));
                clipped += (p.rate == 1.0) as usize;
            }
        }
        assert!(clipped > 0);
    }

    #[test]
    fn seeds_change_usage_but_not_records() {
        let t = trace(&[(0, 0.1), (24, 0.9), (1, 0.3), (25, 0.6)]);
        let a = resample_for_eval(&t, 1);
        let b = resample_for_eval(&t, 2);
        assert_eq!(a.vms(), b.vms());
        assert_eq!(a.vms(), t.vms());
        assert_ne!(a.usage(), b.usage());
        assert_eq!(a, resample_for_eval(&t, 1));
    }
}
