//! Property tests over randomly generated traces, clusters and networks.

use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use oversub_core::baselines::{GridPolicy, MovingAveragePolicy, SupervisedMaxPolicy};
use oversub_core::cluster::{hot_indicators, Cluster, ClusterConfig};
use oversub_core::env::{cluster_obs_dim, EnvConfig, OversubEnv, AGENT_OBS_DIM};
use oversub_core::eval::{evaluate, run_episode};
use oversub_core::marl::{dual_update, lagrangian_reward, soft_update, QNetworks, ReplayBuffer, Transition};
use oversub_core::policy::Policy;
use oversub_core::trace::{
    generate_synthetic, read_traces, resample_for_eval, write_traces_to, GeneratorConfig, LifetimeDist,
    SubscriberProfile, TraceSet, UsageShape, VmId, VmRecord, VmSize,
};

const HORIZON: u32 = 24;

fn profile(arrival: f64, mean: f64, amplitude: f64, phase: f64, noise: f64, lifetime: u32) -> SubscriberProfile {
    SubscriberProfile {
        arrival_rate: arrival,
        sizes: [2.0, 4.0, 8.0]
            .into_iter()
            .map(|cores| VmSize {
                cores,
                mem: 2.0 * cores,
                net: 100.0 * cores,
                weight: 1.0,
            })
            .collect(),
        lifetime: LifetimeDist::Uniform { min: 1, max: lifetime },
        shape: UsageShape::DiurnalSine { amplitude, phase },
        mean_usage: mean,
        noise_std: noise,
        max_usage: 1.0,
    }
}

prop_compose! {
    fn generator()(
        subs in 1usize..=3,
        arrival in 2.0f64..8.0,
        mean in 0.0f64..0.6,
        amplitude in 0.0f64..0.4,
        noise in 0.0f64..0.3,
        lifetime in 1u32..4,
        seed in any::<u64>(),
    ) -> GeneratorConfig {
        GeneratorConfig {
            num_subscribers: subs,
            horizon_hours: HORIZON,
            warmup_hours: 0,
            subscribers: (0..subs)
                .map(|i| profile(arrival, mean, amplitude, i as f64 * PI / 2.0, noise, lifetime))
                .collect(),
            rng_seed: seed,
        }
    }
}

fn csv_bytes(t: &TraceSet) -> (Vec<u8>, Vec<u8>) {
    let (mut v, mut u) = (Vec::new(), Vec::new());
    write_traces_to(t, &mut v, &mut u).unwrap();
    (v, u)
}

fn env_config(num_pms: usize) -> EnvConfig {
    EnvConfig {
        cluster: ClusterConfig {
            num_pms,
            ..ClusterConfig::default()
        },
        horizon: HORIZON as usize,
        ..EnvConfig::default()
    }
}

fn all_rates(t: &TraceSet) -> impl Iterator<Item = f64> + '_ {
    t.usage().iter().flat_map(|s| &s.points).map(|p| p.rate)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trace_csv_round_trip(cfg in generator()) {
        let t = generate_synthetic(&cfg).unwrap();
        let (v, u) = csv_bytes(&t);
        let back = read_traces(&v[..], &u[..]).unwrap();
        prop_assert_eq!(csv_bytes(&back), (v, u));
        prop_assert_eq!(back.vms(), t.vms());
    }

    #[test]
    fn generation_and_resampling_are_pure_and_bounded(cfg in generator(), seed in any::<u64>()) {
        let t = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(&t, &generate_synthetic(&cfg).unwrap());
        prop_assert!(all_rates(&t).all(|r| (0.0..=1.0).contains(&r)));
        let r = resample_for_eval(&t, seed);
        prop_assert_eq!(&r, &resample_for_eval(&t, seed));
        prop_assert!(all_rates(&r).all(|x| (0.0..=1.0).contains(&x)));
        prop_assert_eq!(r.vms(), t.vms());
    }

    #[test]
    fn cluster_conservation_and_feasibility(
        ops in prop::collection::vec((0usize..40, 0usize..3, 0usize..5, any::<bool>()), 1..120),
        k in 1usize..6,
    ) {
        let mut cluster = Cluster::new(ClusterConfig {
            num_pms: k,
            cpu_capacity: 16.0,
            mem_capacity: 24.0,
            net_capacity: 1500.0,
            hot_fraction: 0.6,
        }).unwrap();
        let rates = [0.2, 0.3, 0.45, 0.7, 1.0];
        for (id, size, rate, delete) in ops {
            let vm_id = VmId(format!("v{id}"));
            if delete {
                let _ = cluster.delete_vm(&vm_id);
            } else {
                let cores = [1.0, 3.0, 6.0][size];
                let vm = VmRecord {
                    vm_id,
                    subscriber: 0,
                    created_at: 0,
                    deleted_at: None,
                    requested_cores: cores,
                    requested_mem: 2.0 * cores,
                    requested_net: 100.0 * cores,
                };
                let _ = cluster.best_fit_place(&vm, rates[rate]);
            }
            prop_assert_eq!(cluster.check_invariants(), Ok(()));
        }
    }

    #[test]
    fn raising_hot_fraction_never_heats_a_pm(
        usage in prop::collection::vec(0.0f64..96.0, 1..10),
        beta in 0.05f64..1.0,
        raise in 0.0f64..0.5,
    ) {
        let low = ClusterConfig { hot_fraction: beta, ..ClusterConfig::default() };
        let high = ClusterConfig { hot_fraction: (beta + raise).min(1.0), ..ClusterConfig::default() };
        let (h_low, h_high) = (hot_indicators(&usage, &low), hot_indicators(&usage, &high));
        for (a, b) in h_low.iter().zip(&h_high) {
            prop_assert!(!(!a && *b));
        }
    }

    #[test]
    fn dual_variable_stays_non_negative(
        lambda in 0.0f64..10.0,
        eta in 0.0f64..1.0,
        c in 0.0f64..1.0,
        u in 0.0f64..1.0,
    ) {
        prop_assert!(dual_update(lambda, eta, c, u) >= 0.0);
    }

    #[test]
    fn zero_multiplier_leaves_reward_unchanged(r in -10.0f64..10.0, cost in 0u8..2, c in 0.0f64..1.0) {
        prop_assert_eq!(lagrangian_reward(r, cost, 0.0, c), r);
    }

    #[test]
    fn soft_update_contracts_toward_online(seed in any::<u64>(), tau in 0.001f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = QNetworks::new(2, &[AGENT_OBS_DIM, 4, 6], &[cluster_obs_dim(2), 4, 1], &mut rng);
        let target = QNetworks::new(2, &[AGENT_OBS_DIM, 4, 6], &[cluster_obs_dim(2), 4, 1], &mut rng);
        let mut updated = target.clone();
        soft_update(&online, &mut updated, tau);
        for ((o, t), n) in online.nets().zip(target.nets()).zip(updated.nets()) {
            for ((&o, &t), &n) in o.params().iter().zip(t.params()).zip(n.params()) {
                prop_assert!(((n - o).abs() - (1.0 - tau) * (t - o).abs()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn replay_is_bounded_fifo(capacity in 1usize..50, pushes in 0usize..150) {
        let mut buf = ReplayBuffer::new(capacity);
        let obs = oversub_core::env::Observation { agents: vec![], cluster: vec![], masks: vec![] };
        for i in 0..pushes {
            buf.push(Transition {
                state: obs.clone(),
                actions: vec![],
                reward: i as f64,
                cost: 0,
                next_state: obs.clone(),
                done: false,
            });
            prop_assert!(buf.len() <= capacity);
        }
        let kept: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        let expected: Vec<f64> = (pushes.saturating_sub(capacity)..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(kept, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn episode_invariants(cfg in generator(), actions_seed in any::<u64>(), reset_seed in any::<u64>()) {
        let trace = Arc::new(generate_synthetic(&cfg).unwrap());
        let n = trace.num_subscribers();
        let mut env = OversubEnv::new(env_config(40), trace.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(actions_seed);
        let plan: Vec<Vec<usize>> = (0..HORIZON)
            .map(|_| (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..6)).collect())
            .collect();
        let rollout = |env: &mut OversubEnv| {
            env.reset(reset_seed).unwrap();
            plan.iter().map(|a| env.step(a).unwrap()).collect::<Vec<_>>()
        };
        let first = rollout(&mut env);
        prop_assert_eq!(&first, &rollout(&mut env));
        prop_assert_eq!(first.len(), HORIZON as usize);
        let mut pm_counts = vec![0u32; 40];
        let mut cluster_count = 0u32;
        for (t, step) in first.iter().enumerate() {
            prop_assert_eq!(step.done, t + 1 == HORIZON as usize);
            prop_assert_eq!(step.cost, step.info.hot.iter().any(|&h| h) as u8);
            for (c, &h) in pm_counts.iter_mut().zip(&step.info.hot) {
                *c += h as u32;
            }
            cluster_count += step.cost as u32;
            prop_assert!(pm_counts.iter().all(|&c| c <= cluster_count));
        }
        prop_assert!(env.step(&plan[0]).is_err());
    }

    #[test]
    fn full_rate_saves_nothing(cfg in generator(), seed in any::<u64>()) {
        let trace = Arc::new(generate_synthetic(&cfg).unwrap());
        let mut env = OversubEnv::new(env_config(40), trace).unwrap();
        let m = run_episode(&GridPolicy::new(1.0).unwrap(), &mut env, seed).unwrap();
        env.reset(seed).unwrap();
        loop {
            let step = env.step(&vec![5; env.num_agents()]).unwrap();
            prop_assert_eq!(step.reward, 0.0);
            if step.done {
                break;
            }
        }
        prop_assert_eq!(m.s_cores(), 0.0);
    }

    #[test]
    fn grid_saves_exactly_one_minus_rate(cfg in generator(), idx in 0usize..5, seed in any::<u64>()) {
        let trace = Arc::new(generate_synthetic(&cfg).unwrap());
        let rate = [0.2, 0.3, 0.4, 0.5, 0.6][idx];
        let r = evaluate(&GridPolicy::new(rate).unwrap(), &env_config(40), trace, 2, seed).unwrap();
        prop_assume!(r.drops == 0);
        prop_assert!((r.s_cores_mean - 100.0 * (1.0 - rate)).abs() <= 1e-9);
    }

    #[test]
    fn evaluation_is_pure(cfg in generator(), seed in any::<u64>()) {
        let trace = Arc::new(generate_synthetic(&cfg).unwrap());
        let policy = MovingAveragePolicy::new(6).unwrap();
        let a = evaluate(&policy, &env_config(40), trace.clone(), 3, seed).unwrap();
        let b = evaluate(&policy, &env_config(40), trace, 3, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn baseline_rates_stay_in_action_range(cfg in generator(), margin in 0.5f64..2.0) {
        let trace = Arc::new(generate_synthetic(&cfg).unwrap());
        let env_cfg = env_config(40);
        let min = env_cfg.action_set[0];
        let sl = SupervisedMaxPolicy::fit(&trace, margin, min).unwrap();
        prop_assert!(sl.rates_per_subscriber().iter().all(|&r| (min..=1.0).contains(&r)));
        let mut env = OversubEnv::new(env_cfg, trace).unwrap();
        let ma = MovingAveragePolicy::new(3).unwrap();
        let mut obs = env.reset(1).unwrap();
        loop {
            let rates = ma.rates(&env, &obs);
            prop_assert!(rates.iter().all(|&r| (min..=1.0).contains(&r)));
            let step = env.step_rates(&rates).unwrap();
            if step.done {
                break;
            }
            obs = step.observation;
        }
    }

    #[test]
    fn supervised_max_ignores_usage_order(cfg in generator(), seed in any::<u64>()) {
        let trace = generate_synthetic(&cfg).unwrap();
        let mut usage = trace.usage().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut usage[..], &mut rng);
        for s in &mut usage {
            rand::seq::SliceRandom::shuffle(&mut s.points[..], &mut rng);
        }
        let shuffled = TraceSet::new(trace.vms().to_vec(), usage, Some(trace.horizon())).unwrap();
        let a = SupervisedMaxPolicy::fit(&trace, 1.05, 0.2).unwrap();
        let b = SupervisedMaxPolicy::fit(&shuffled, 1.05, 0.2).unwrap();
        prop_assert_eq!(a, b);
    }
}
