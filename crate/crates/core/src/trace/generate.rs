use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{hour_of_day, Hour, TraceError, TraceSet, UsagePoint, UsageSeries, VmId, VmRecord, HOURS_PER_DAY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmSize {
    pub cores: f64,
    pub mem: f64,
    pub net: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LifetimeDist {
    Fixed {
        hours: u32,
    },
    /// Uniform over the integers `min..=max`.
    Uniform {
        min: u32,
        max: u32,
    },
    /// Geometric with the given mean (at least one hour).
    Geometric {
        mean: f64,
    },
}

impl LifetimeDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Hour {
        match *self {
            LifetimeDist::Fixed { hours } => hours as Hour,
            LifetimeDist::Uniform { min, max } => rng.random_range(min..=max) as Hour,
            LifetimeDist::Geometric { mean } => {
                let p = 1.0 / mean.max(1.0);
                let mut h = 1;
                while rng.random::<f64>() >= p {
                    h += 1;
                }
                h
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            LifetimeDist::Fixed { hours } if hours == 0 => Err("fixed lifetime must be at least 1 hour".into()),
            LifetimeDist::Uniform { min, max } if min == 0 || max < min => {
                Err(format!("uniform lifetime needs 1 <= min <= max, got {min}..={max}"))
            }
            LifetimeDist::Geometric { mean } if !(mean >= 1.0) => Err("geometric lifetime mean must be >= 1".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UsageShape {
    Constant,
    /// `mean + amplitude * sin(2π h/24 + phase)` where `h` is the hour of day.
    DiurnalSine {
        amplitude: f64,
        phase: f64,
    },
    /// Each VM-hour independently jumps to `level` with the given probability.
    Bursty {
        probability: f64,
        level: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriberProfile {
    /// Expected VM arrivals per hour (Poisson).
    pub arrival_rate: f64,
    pub sizes: Vec<VmSize>,
    pub lifetime: LifetimeDist,
    pub shape: UsageShape,
    pub mean_usage: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Upper clip applied to every generated usage rate.
    #[serde(default = "one")]
    pub max_usage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_subscribers: usize,
    pub horizon_hours: u32,
    /// Hours simulated before hour 0; VMs still alive at hour 0 become the
    /// pre-existing population of a warm start.
    #[serde(default)]
    pub warmup_hours: u32,
    pub subscribers: Vec<SubscriberProfile>,
    pub rng_seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), TraceError> {
        let err = |m: String| Err(TraceError::Config(m));
        if self.num_subscribers == 0 {
            return err("num_subscribers must be positive".into());
        }
        if self.horizon_hours == 0 {
            return err("horizon_hours must be positive".into());
        }
        if self.subscribers.len() != self.num_subscribers {
            return err(format!(
                "expected {} subscriber profiles, got {}",
                self.num_subscribers,
                self.subscribers.len()
            ));
        }
        for (i, p) in self.subscribers.iter().enumerate() {
            if !(p.arrival_rate >= 0.0) || !p.arrival_rate.is_finite() {
                return err(format!("subscriber {i}: arrival_rate must be finite and non-negative"));
            }
            if p.sizes.is_empty() {
                return err(format!("subscriber {i}: no VM sizes"));
            }
            if p.sizes
                .iter()
                .any(|s| !(s.cores > 0.0) || !(s.mem >= 0.0) || !(s.net >= 0.0) || !(s.weight >= 0.0))
            {
                return err(format!(
                    "subscriber {i}: VM sizes need positive cores and non-negative mem/net/weight"
                ));
            }
            if !(0.0..=1.0).contains(&p.mean_usage) {
                return err(format!("subscriber {i}: mean_usage must lie in [0, 1]"));
            }
            if !(p.noise_std >= 0.0) {
                return err(format!("subscriber {i}: noise_std must be non-negative"));
            }
            if !(p.max_usage > 0.0 && p.max_usage <= 1.0) {
                return err(format!("subscriber {i}: max_usage must lie in (0, 1]"));
            }
            match p.shape {
                UsageShape::DiurnalSine { amplitude, .. } if !(amplitude >= 0.0) => {
                    return err(format!("subscriber {i}: amplitude must be non-negative"));
                }
                UsageShape::Bursty { probability, level }
                    if !(0.0..=1.0).contains(&probability) || !(0.0..=1.0).contains(&level) =>
                {
                    return err(format!(
                        "subscriber {i}: burst probability and level must lie in [0, 1]"
                    ));
                }
                _ => {}
            }
            p.lifetime
                .validate()
                .map_err(|m| TraceError::Config(format!("subscriber {i}: {m}")))?;
        }
        Ok(())
    }
}

fn base_usage(profile: &SubscriberProfile, hour: Hour, rng: &mut ChaCha8Rng) -> f64 {
    match profile.shape {
        UsageShape::Constant => profile.mean_usage,
        UsageShape::DiurnalSine { amplitude, phase } => {
            let angle = 2.0 * PI * hour_of_day(hour) as f64 / HOURS_PER_DAY as f64 + phase;
            profile.mean_usage + amplitude * angle.sin()
        }
        UsageShape::Bursty { probability, level } => {
            if rng.random::<f64>() < probability {
                level
            } else {
                profile.mean_usage
            }
        }
    }
}

/// Draws a synthetic trace. The output is a pure function of the config,
/// including its seed.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<TraceSet, TraceError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let horizon = config.horizon_hours as Hour;
    let samplers = config
        .subscribers
        .iter()
        .map(|p| {
            let arrivals = (p.arrival_rate > 0.0).then(|| Poisson::new(p.arrival_rate).expect("validated rate"));
            let sizes = WeightedIndex::new(p.sizes.iter().map(|s| s.weight))
                .map_err(|e| TraceError::Config(format!("VM size weights: {e}")))?;
            let noise = (p.noise_std > 0.0).then(|| Normal::new(0.0, p.noise_std).expect("validated std"));
            Ok((arrivals, sizes, noise))
        })
        .collect::<Result<Vec<_>, TraceError>>()?;

    let mut vms = Vec::new();
    let mut usage = Vec::new();
    for t in -(config.warmup_hours as Hour)..horizon {
        let mut hour_batch = Vec::new();
        for (sub, profile) in config.subscribers.iter().enumerate() {
            let (arrivals, sizes, noise) = &samplers[sub];
            let count = arrivals.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
            for _ in 0..count {
                let size = &profile.sizes[sizes.sample(&mut rng)];
                let end = t + profile.lifetime.sample(&mut rng);
                if end <= 0 {
                    // Finished before the observed window.
                    continue;
                }
                let points: Vec<UsagePoint> = (t..end.min(horizon))
                    .map(|hour| {
                        let mut rate = base_usage(profile, hour, &mut rng);
                        if let Some(n) = noise {
                            rate += n.sample(&mut rng);
                        }
                        UsagePoint {
                            hour,
                            rate: rate.clamp(0.0, profile.max_usage),
                        }
                    })
                    .collect();
                hour_batch.push((sub, size, end, points));
            }
        }
        // Requests of different subscribers interleave within the hour.
        hour_batch.shuffle(&mut rng);
        for (sub, size, end, points) in hour_batch {
            let vm_id = VmId(format!("vm{}", vms.len()));
            usage.push(UsageSeries {
                vm_id: vm_id.clone(),
                points,
            });
            vms.push(VmRecord {
                vm_id,
                subscriber: sub,
                created_at: t,
                deleted_at: Some(end),
                requested_cores: size.cores,
                requested_mem: size.mem,
                requested_net: size.net,
            });
        }
    }
    let mut seen = vec![false; config.num_subscribers];
    for vm in &vms {
        seen[vm.subscriber] = true;
    }
    if let Some(sub) = seen.iter().position(|s| !s) {
        return Err(TraceError::Config(format!(
            "subscriber {sub} produced no VMs; raise its arrival_rate or the horizon"
        )));
    }
    TraceSet::new(vms, usage, Some(horizon))
}

fn standard_sizes() -> Vec<VmSize> {
    [2.0, 4.0, 8.0]
        .into_iter()
        .map(|cores| VmSize {
            cores,
            mem: 2.0 * cores,
            net: 100.0 * cores,
            weight: 1.0,
        })
        .collect()
}

/// Named scenarios reproducing two usage patterns that favour coordinated
/// oversubscription.
///
/// * `staggered_peaks`: two subscribers of one-hour VMs whose diurnal usage
///   peaks twelve hours apart, never above 0.48.
/// * `low_duration`: one subscriber with two-hour VMs whose usage
///   occasionally bursts above 0.8.
pub fn scenario_preset(name: &str) -> Result<GeneratorConfig, TraceError> {
    match name {
        "staggered_peaks" => {
            let profile = |phase: f64| SubscriberProfile {
                arrival_rate: 24.0,
                sizes: standard_sizes(),
                lifetime: LifetimeDist::Fixed { hours: 1 },
                shape: UsageShape::DiurnalSine { amplitude: 0.48, phase },
                mean_usage: 0.0,
                noise_std: 0.01,
                max_usage: 0.48,
            };
            Ok(GeneratorConfig {
                num_subscribers: 2,
                horizon_hours: 120,
                warmup_hours: 0,
                subscribers: vec![profile(0.0), profile(PI)],
                rng_seed: 2022,
            })
        }
        "low_duration" => Ok(GeneratorConfig {
            num_subscribers: 1,
            horizon_hours: 120,
            warmup_hours: 0,
            subscribers: vec![SubscriberProfile {
                arrival_rate: 6.0,
                sizes: standard_sizes(),
                lifetime: LifetimeDist::Fixed { hours: 2 },
                shape: UsageShape::Bursty {
                    probability: 0.25,
                    level: 0.85,
                },
                mean_usage: 0.2,
                noise_std: 0.08,
                max_usage: 1.0,
            }],
            rng_seed: 2022,
        }),
        other => Err(TraceError::UnknownScenario(other.to_owned())),
    }
}
