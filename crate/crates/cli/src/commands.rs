use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use oversub_core::baselines::{GridPolicy, MovingAveragePolicy, SupervisedMaxPolicy};
use oversub_core::config::{RunConfig, TraceSource};
use oversub_core::env::OversubEnv;
use oversub_core::eval::{config_digest, evaluate as run_eval, mean_std, safety_indicator, EvalReport, SAFETY_LEVELS};
use oversub_core::marl::{train_with_observer, C2marlPolicy, Checkpoint, TrainingCurves};
use oversub_core::policy::{Policy, PolicySpec};
use oversub_core::trace::{generate_synthetic, write_traces, TraceSet};

use crate::svg;
use crate::Common;

/// A config with every path made absolute and every generated trace source
/// inlined, plus the directory outputs go to.
struct Resolved {
    config: RunConfig,
    out: PathBuf,
}

fn resolve(common: &Common) -> Result<Resolved> {
    let mut config = RunConfig::load(&common.config)?;
    let base = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        base
    };
    config.trace = match &config.trace {
        TraceSource::Files { vms, usage } => TraceSource::Files {
            vms: absolute(&base.join(vms)),
            usage: absolute(&base.join(usage)),
        },
        other => TraceSource::Generator {
            config: other.generator_config(&base)?.expect("generated source"),
        },
    };
    if !common.seed.is_empty() {
        config.seeds = common.seed.clone();
    }
    let out = match &common.out {
        Some(dir) => dir.clone(),
        None => base.join(&config.out_dir),
    };
    config.out_dir = absolute(&out);
    Ok(Resolved { config, out })
}

fn absolute(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    std::env::current_dir()
        .map(|d| d.join(path))
        .unwrap_or_else(|_| path.to_path_buf())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    config_digest: String,
    seeds: &'a [u64],
    policies: &'a [String],
    config: &'a RunConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `resolved_config.json` (a valid config reproducing the run) and
/// `manifest.json`.
fn write_manifest(out: &Path, command: &str, config: &RunConfig, policies: &[String]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("resolved_config.json"), config)?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_digest: config_digest(config),
            seeds: &config.seeds,
            policies,
            config,
        },
    )
}

fn load_trace(config: &RunConfig) -> Result<Arc<TraceSet>> {
    Ok(Arc::new(config.trace.load(Path::new("."))?))
}

pub fn generate(common: &Common) -> Result<usize> {
    let Resolved { mut config, out } = resolve(common)?;
    let TraceSource::Generator { config: gen } = &mut config.trace else {
        bail!("generate needs a preset or generator trace source, not trace files");
    };
    match common.seed.as_slice() {
        [] => {}
        [s] => gen.rng_seed = *s,
        _ => bail!("generate takes a single --seed"),
    }
    let trace = generate_synthetic(gen)?;
    write_traces(&trace, &out)?;
    log::info!(
        "wrote {} VMs for {} subscribers to {}",
        trace.vms().len(),
        trace.num_subscribers(),
        out.display()
    );
    config.seeds = vec![gen.rng_seed];
    write_manifest(&out, "generate", &config, &[])?;
    Ok(0)
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    alpha: f64,
    delta: f64,
    /// Constraint level c = (1 − α)δ.
    c: f64,
    episodes: usize,
    updates: u64,
    final_lambda: f64,
    final_100_hot_cluster_mean: f64,
    final_100_reward_mean: f64,
}

fn tail_mean(values: impl DoubleEndedIterator<Item = f64>, n: usize) -> f64 {
    let tail: Vec<f64> = values.rev().take(n).collect();
    mean_std(&tail).0
}

pub fn train(common: &Common, episodes: Option<usize>, alpha: Option<f64>, plots: bool) -> Result<usize> {
    let Resolved { mut config, out } = resolve(common)?;
    if let Some(e) = episodes {
        config.episodes = e;
    }
    if let Some(a) = alpha {
        config.alpha = a;
    }
    config.validate()?;
    let trace = load_trace(&config)?;
    write_manifest(&out, "train", &config, &[])?;
    for &seed in &config.seeds {
        let mut env = OversubEnv::new(config.env.clone(), trace.clone())?;
        let (state, curves) =
            train_with_observer(&mut env, &config.learner, config.alpha, config.episodes, seed, |row| {
                if (row.episode + 1) % 50 == 0 {
                    log::info!(
                        "seed {seed} episode {}: reward {:.4} hot {} lambda {:.4}",
                        row.episode + 1,
                        row.cum_reward,
                        row.hot_cluster_count,
                        row.lambda
                    );
                }
            })
            .with_context(|| format!("training seed {seed}"))?;
        Checkpoint::from_state(&state).save(&out.join(format!("checkpoint_seed{seed}.json")))?;
        curves.write_csv(File::create(out.join(format!("curves_seed{seed}.csv")))?)?;
        let summary = TrainSummary {
            seed,
            alpha: config.alpha,
            delta: config.env.delta,
            c: state.c(),
            episodes: config.episodes,
            updates: state.updates,
            final_lambda: state.lambda,
            final_100_hot_cluster_mean: tail_mean(curves.rows.iter().map(|r| r.hot_cluster_count as f64), 100),
            final_100_reward_mean: tail_mean(curves.rows.iter().map(|r| r.cum_reward), 100),
        };
        write_json(&out.join(format!("summary_seed{seed}.json")), &summary)?;
        if plots {
            write_curve_plots(&out, seed, &curves)?;
        }
        log::info!("seed {seed} done, lambda {:.4}", state.lambda);
    }
    Ok(0)
}

fn write_curve_plots(out: &Path, seed: u64, curves: &TrainingCurves) -> Result<()> {
    let xs: Vec<f64> = curves.rows.iter().map(|r| r.episode as f64).collect();
    let reward: Vec<f64> = curves.rows.iter().map(|r| r.cum_reward).collect();
    let hot: Vec<f64> = curves.rows.iter().map(|r| r.hot_cluster_count as f64).collect();
    fs::write(
        out.join(format!("reward_seed{seed}.svg")),
        svg::line_chart("Cumulative reward", "episode", &xs, &reward),
    )?;
    fs::write(
        out.join(format!("hot_cluster_seed{seed}.svg")),
        svg::line_chart("Hot cluster count", "episode", &xs, &hot),
    )?;
    Ok(())
}

fn build_policy(spec: &PolicySpec, config: &RunConfig, trace: &TraceSet) -> Result<Box<dyn Policy>> {
    let min_rate = config.env.action_set[0];
    Ok(match spec {
        PolicySpec::Grid(rate) => Box::new(GridPolicy::new(*rate)?),
        PolicySpec::MovingAverage(w) => Box::new(MovingAveragePolicy::new(*w)?),
        PolicySpec::SupervisedMax => Box::new(SupervisedMaxPolicy::fit(trace, config.baselines.sl_margin, min_rate)?),
        PolicySpec::C2marl(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            Box::new(C2marlPolicy::new(Arc::new(ck.online_networks()?)))
        }
    })
}

fn file_label(spec: &str) -> String {
    spec.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// Evaluates every policy for every seed, writing a report JSON and episode
/// CSV per pair. Returns reports grouped by policy, in input order.
fn evaluate_all(
    config: &RunConfig,
    out: &Path,
    specs: &[String],
    trace: &Arc<TraceSet>,
) -> Result<Vec<(String, Vec<EvalReport>)>> {
    let parsed = specs
        .iter()
        .map(|s| s.parse::<PolicySpec>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut all = Vec::new();
    for (i, (raw, spec)) in specs.iter().zip(&parsed).enumerate() {
        let policy = build_policy(spec, config, trace)?;
        let label = format!("{i}_{}", file_label(raw));
        let mut reports = Vec::new();
        for &seed in &config.seeds {
            let mut report = run_eval(policy.as_ref(), &config.env, trace.clone(), config.eval_episodes, seed)?;
            report.policy = raw.clone();
            fs::write(out.join(format!("eval_{label}_seed{seed}.json")), report.to_json())?;
            report.write_episode_csv(File::create(out.join(format!("eval_{label}_seed{seed}.csv")))?)?;
            log::info!(
                "{raw} seed {seed}: S-Cores {:.2} PM-Hot-R {:.2} C-Hot-R {:.2} drops {}",
                report.s_cores_mean,
                report.pm_hot_r,
                report.c_hot_r,
                report.drops
            );
            reports.push(report);
        }
        all.push((raw.clone(), reports));
    }
    Ok(all)
}

fn total_drops(all: &[(String, Vec<EvalReport>)]) -> usize {
    all.iter().flat_map(|(_, r)| r).map(|r| r.drops).sum()
}

pub fn evaluate(common: &Common, specs: &[String], episodes: Option<usize>) -> Result<usize> {
    let Resolved { mut config, out } = resolve(common)?;
    if let Some(e) = episodes {
        config.eval_episodes = e;
    }
    config.validate()?;
    let trace = load_trace(&config)?;
    write_manifest(&out, "evaluate", &config, specs)?;
    let all = evaluate_all(&config, &out, specs, &trace)?;
    Ok(total_drops(&all))
}

/// One comparison-table row; S-Cores and PM-Hot-R are means over seeds.
#[derive(Serialize)]
struct Row {
    #[serde(rename = "Method")]
    method: String,
    #[serde(rename = "PM-Hot-R")]
    pm_hot_r: f64,
    #[serde(rename = "C-Hot-R")]
    c_hot_r: f64,
    #[serde(rename = "S-Cores")]
    s_cores: f64,
    #[serde(rename = "S-Cores-Std")]
    s_cores_std: f64,
    #[serde(rename = "Safe-0.75")]
    safe_75: bool,
    #[serde(rename = "Safe-0.85")]
    safe_85: bool,
    #[serde(rename = "Safe-0.95")]
    safe_95: bool,
    #[serde(rename = "Hot-Cluster-Mean")]
    hot_cluster_mean: f64,
}

fn row(method: &str, reports: &[EvalReport]) -> Row {
    let per = |f: fn(&EvalReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let (s_cores, s_cores_std) = per(|r| r.s_cores_mean);
    let (pm_hot_r, _) = per(|r| r.pm_hot_r);
    let (c_hot_r, _) = per(|r| r.c_hot_r);
    let (hot_cluster_mean, _) = per(|r| {
        mean_std(
            &r.per_episode
                .iter()
                .map(|m| m.hot_cluster_count as f64)
                .collect::<Vec<_>>(),
        )
        .0
    });
    let [a, b, c] = SAFETY_LEVELS.map(|alpha| safety_indicator(pm_hot_r, alpha));
    Row {
        method: method.to_string(),
        pm_hot_r,
        c_hot_r,
        s_cores,
        s_cores_std,
        safe_75: a,
        safe_85: b,
        safe_95: c,
        hot_cluster_mean,
    }
}

pub fn compare(common: &Common, specs: &[String], episodes: Option<usize>, plots: bool) -> Result<usize> {
    if specs.is_empty() {
        bail!("compare needs at least one --policy");
    }
    let Resolved { mut config, out } = resolve(common)?;
    if let Some(e) = episodes {
        config.eval_episodes = e;
    }
    config.validate()?;
    let trace = load_trace(&config)?;
    write_manifest(&out, "compare", &config, specs)?;
    let all = evaluate_all(&config, &out, specs, &trace)?;
    let rows: Vec<Row> = all.iter().map(|(m, r)| row(m, r)).collect();
    let mut wtr = csv::Writer::from_path(out.join("comparison.csv"))?;
    for r in &rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    for r in &rows {
        println!(
            "{:<24} PM-Hot-R {:>6.2}  S-Cores {:>6.2} ± {:.2}  safe@0.95 {}",
            r.method, r.pm_hot_r, r.s_cores, r.s_cores_std, r.safe_95
        );
    }
    if plots {
        let names: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        let s: Vec<f64> = rows.iter().map(|r| r.s_cores).collect();
        let pm: Vec<f64> = rows.iter().map(|r| r.pm_hot_r).collect();
        let hot: Vec<f64> = rows.iter().map(|r| r.hot_cluster_mean).collect();
        fs::write(out.join("s_cores.svg"), svg::bar_chart("S-Cores (%)", &names, &s))?;
        fs::write(out.join("pm_hot_r.svg"), svg::bar_chart("PM-Hot-R (%)", &names, &pm))?;
        fs::write(
            out.join("hot_cluster.svg"),
            svg::bar_chart("Hot cluster count per episode", &names, &hot),
        )?;
    }
    Ok(total_drops(&all))
}
