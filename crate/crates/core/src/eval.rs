//! Rolls frozen policies over resampled traces and computes saved-core and
//! hot-machine metrics.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError, OversubEnv};
use crate::policy::Policy;
use crate::trace::TraceSet;

/// Safety levels reported for every evaluation.
pub const SAFETY_LEVELS: [f64; 3] = [0.75, 0.85, 0.95];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no cores were requested by placed VMs")]
    NoPlacements,
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Hot hours per PM.
    pub pm_hot_counts: Vec<u32>,
    /// Hours in which at least one PM was hot.
    pub hot_cluster_count: u32,
    pub requested: f64,
    pub assigned: f64,
    pub drops: usize,
}

impl EpisodeMetrics {
    pub fn max_pm_hot_count(&self) -> u32 {
        self.pm_hot_counts.iter().copied().max().unwrap_or(0)
    }

    /// Per-episode S-Cores in percent, 0 when nothing was placed.
    pub fn s_cores(&self) -> f64 {
        if self.requested > 0.0 {
            100.0 * (1.0 - self.assigned / self.requested)
        } else {
            0.0
        }
    }
}

/// True when `count` hot hours out of `horizon` reach the allowed frequency.
pub fn violates(count: u32, delta: f64, horizon: usize) -> bool {
    count as f64 >= delta * horizon as f64 - 1e-9
}

/// Pooled saved-core percentage `100 (1 − Σ assigned / Σ requested)`.
pub fn s_cores(metrics: &[EpisodeMetrics]) -> Result<f64, EvalError> {
    let requested: f64 = metrics.iter().map(|m| m.requested).sum();
    let assigned: f64 = metrics.iter().map(|m| m.assigned).sum();
    if !(requested > 0.0) {
        return Err(EvalError::NoPlacements);
    }
    Ok(100.0 * (1.0 - assigned / requested))
}

/// Largest per-PM fraction of violating episodes, in percent.
pub fn pm_hot_r(metrics: &[EpisodeMetrics], delta: f64, horizon: usize) -> f64 {
    if metrics.is_empty() {
        return 0.0;
    }
    let k = metrics.iter().map(|m| m.pm_hot_counts.len()).max().unwrap_or(0);
    let worst = (0..k)
        .map(|pm| {
            metrics
                .iter()
                .filter(|m| violates(m.pm_hot_counts.get(pm).copied().unwrap_or(0), delta, horizon))
                .count()
        })
        .max()
        .unwrap_or(0);
    100.0 * worst as f64 / metrics.len() as f64
}

/// Percentage of episodes whose hot-cluster frequency reaches `delta`.
pub fn c_hot_r(metrics: &[EpisodeMetrics], delta: f64, horizon: usize) -> f64 {
    if metrics.is_empty() {
        return 0.0;
    }
    let bad = metrics
        .iter()
        .filter(|m| violates(m.hot_cluster_count, delta, horizon))
        .count();
    100.0 * bad as f64 / metrics.len() as f64
}

/// Whether the observed safety ratio `(100 − PM-Hot-R) / 100` reaches `alpha`.
pub fn safety_indicator(pm_hot_r: f64, alpha: f64) -> bool {
    (100.0 - pm_hot_r) / 100.0 >= alpha - 1e-12
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// SHA-256 hex digest of a value's JSON form.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub config_digest: String,
    pub episodes: usize,
    pub seed: u64,
    pub s_cores_mean: f64,
    /// Standard deviation of per-episode S-Cores.
    pub s_cores_std: f64,
    pub pm_hot_r: f64,
    pub c_hot_r: f64,
    pub safety: BTreeMap<String, bool>,
    pub drops: usize,
    pub per_episode: Vec<EpisodeMetrics>,
}

impl EvalReport {
    pub fn from_metrics(
        policy: String,
        config_digest: String,
        seed: u64,
        metrics: Vec<EpisodeMetrics>,
        delta: f64,
        horizon: usize,
    ) -> Result<Self, EvalError> {
        if metrics.is_empty() {
            return Err(EvalError::NoEpisodes);
        }
        let pooled = s_cores(&metrics)?;
        let per: Vec<f64> = metrics.iter().map(EpisodeMetrics::s_cores).collect();
        let (_, std) = mean_std(&per);
        let pm = pm_hot_r(&metrics, delta, horizon);
        let safety = SAFETY_LEVELS
            .iter()
            .map(|&a| (format!("{a}"), safety_indicator(pm, a)))
            .collect();
        Ok(EvalReport {
            policy,
            config_digest,
            episodes: metrics.len(),
            seed,
            s_cores_mean: pooled,
            s_cores_std: std,
            pm_hot_r: pm,
            c_hot_r: c_hot_r(&metrics, delta, horizon),
            safety,
            drops: metrics.iter().map(|m| m.drops).sum(),
            per_episode: metrics,
        })
    }

    pub fn is_safe(&self, alpha: f64) -> bool {
        safety_indicator(self.pm_hot_r, alpha)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `episode,s_cores,max_pm_hot_count,hot_cluster_count,drops`
    pub fn write_episode_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["episode", "s_cores", "max_pm_hot_count", "hot_cluster_count", "drops"])?;
        for (e, m) in self.per_episode.iter().enumerate() {
            wtr.write_record([
                e.to_string(),
                m.s_cores().to_string(),
                m.max_pm_hot_count().to_string(),
                m.hot_cluster_count.to_string(),
                m.drops.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Seed of evaluation episode `episode` under run seed `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng.random()
}

/// Runs one episode of `policy` from a reset with `seed`.
pub fn run_episode(policy: &dyn Policy, env: &mut OversubEnv, seed: u64) -> Result<EpisodeMetrics, EvalError> {
    let mut obs = env.reset(seed)?;
    let k = env.config().cluster.num_pms;
    let mut m = EpisodeMetrics {
        pm_hot_counts: vec![0; k],
        hot_cluster_count: 0,
        requested: 0.0,
        assigned: 0.0,
        drops: 0,
    };
    loop {
        let rates = policy.rates(env, &obs);
        let step = env.step_rates(&rates)?;
        for (c, &h) in m.pm_hot_counts.iter_mut().zip(&step.info.hot) {
            *c += h as u32;
        }
        m.hot_cluster_count += step.cost as u32;
        m.requested += step.info.requested_placed;
        m.assigned += step.info.assigned_placed;
        m.drops += step.info.drops;
        obs = step.observation;
        if step.done {
            return Ok(m);
        }
    }
}

/// Evaluates `policy` for `episodes` episodes, each on a trace freshly
/// resampled from `trace` with a seed derived from `seed` and the episode
/// index. Episodes run in parallel; results are ordered by episode.
pub fn evaluate(
    policy: &dyn Policy,
    config: &EnvConfig,
    trace: Arc<TraceSet>,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if episodes == 0 {
        return Err(EvalError::NoEpisodes);
    }
    let cfg = EnvConfig {
        resample_on_reset: true,
        ..config.clone()
    };
    let template = OversubEnv::new(cfg, trace)?;
    let metrics = (0..episodes)
        .into_par_iter()
        .map(|e| run_episode(policy, &mut template.clone(), episode_seed(seed, e)))
        .collect::<Result<Vec<_>, _>>()?;
    if metrics.iter().any(|m| m.drops > 0) {
        log::warn!("{}: placement drops during evaluation", policy.name());
    }
    EvalReport::from_metrics(
        policy.name(),
        config_digest(config),
        seed,
        metrics,
        config.delta,
        config.horizon,
    )
}
