//! Built-in figure presets.
//!
//! Every preset uses `M = 128`, `N = 32`, EVA at 3.84 MHz, `f_c = 5.9 GHz`, a
//! 40 dB PCP with `L_p = 10` and `T = 0.25`. Trial counts keep each preset
//! within roughly ten minutes on one laptop core:
//!
//! | preset | experiments | trials per point |
//! |--------|-------------|------------------|
//! | fig3   | one snapshot, `Q = 2`, `ν_max T = 2.91` | 1 |
//! | fig4a  | TO error vs SNR, `Q = 2, 4` | 500 |
//! | fig4b  | TO error vs `ν_max T`, `Q = 4` | 500 |
//! | fig5a  | CFO MSE vs SNR, `Q = 2, 4` | 200 |
//! | fig5b  | CFO MSE vs `ν_max T`, `Q = 2, 4` | 200 |
//! | fig6   | channel NMSE vs CFO, `Q = 2`, static channel | 200 |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::experiment::{run_experiment, ExperimentReport, ExperimentSpec, RunOptions, SweepVar, Variant};
use super::trial::{run_trial, TrialContext, TrialOptions};
use crate::channel::ChannelRealization;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::sync::{Stages, TimingMetric};

pub const PRESET_NAMES: &[&str] = &["fig3", "fig4a", "fig4b", "fig5a", "fig5b", "fig6"];

const SNR_POINTS: [f64; 7] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0];
const NU_POINTS: [f64; 7] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 2.91];
const CFO_POINTS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

fn spec(name: &str, sweep_var: SweepVar, points: &[f64], trials: u64, variants: &[Variant], config: &[(&str, toml::Value)]) -> ExperimentSpec {
    ExperimentSpec {
        name: name.to_string(),
        sweep_var,
        sweep_points: points.to_vec(),
        trials,
        variants: variants.to_vec(),
        max_failure_fraction: 0.1,
        write_trials: true,
        config: config.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    }
}

fn users(q: i64) -> (&'static str, toml::Value) {
    ("Q", toml::Value::Integer(q))
}

/// Experiment specs of a preset; `fig3` yields its single-trial spec.
pub fn preset(name: &str) -> Result<Vec<ExperimentSpec>> {
    use SweepVar::*;
    use Variant::*;
    let to = [FirstPeak, MaxPeak];
    let snr20 = ("snr_db", toml::Value::Float(20.0));
    let specs = match name {
        "fig3" => vec![spec("fig3", SnrDb, &[20.0], 1, &to, &[users(2)])],
        "fig4a" => [2, 4]
            .iter()
            .map(|&q| spec(&format!("fig4a-q{q}"), SnrDb, &SNR_POINTS, 500, &to, &[users(q)]))
            .collect(),
        "fig4b" => vec![spec("fig4b-q4", NuMaxT, &NU_POINTS, 500, &to, &[users(4), snr20])],
        "fig5a" => [2, 4]
            .iter()
            .map(|&q| spec(&format!("fig5a-q{q}"), SnrDb, &SNR_POINTS, 200, &[Compensated], &[users(q)]))
            .collect(),
        "fig5b" => [2, 4]
            .iter()
            .map(|&q| {
                spec(&format!("fig5b-q{q}"), NuMaxT, &NU_POINTS, 200, &[Compensated], &[users(q), snr20.clone()])
            })
            .collect(),
        "fig6" => vec![spec(
            "fig6",
            CfoValue,
            &CFO_POINTS,
            200,
            &[Compensated, Absorbed],
            &[users(2), snr20, ("nu_max_T", toml::Value::Float(0.0))],
        )],
        _ => {
            return Err(Error::Config(format!(
                "unknown figure `{name}`; available presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// Timing metrics of every user for one trial.
#[derive(Debug, Clone, Serialize)]
pub struct TimingSnapshot {
    pub realization: ChannelRealization,
    pub estimates: Vec<usize>,
    #[serde(skip)]
    pub metrics: Vec<TimingMetric>,
}

pub fn timing_snapshot(cfg: &SystemConfig, trial: u64) -> Result<TimingSnapshot> {
    let ctx = TrialContext::new(cfg)?;
    let opts = TrialOptions {
        stages: Stages { cfo: false, channel: false },
        absorbed: false,
        keep_metrics: true,
    };
    let out = run_trial(&ctx, &opts, trial);
    if let Some(e) = out.record.error {
        return Err(Error::Estimation(e));
    }
    Ok(TimingSnapshot {
        realization: out.realization.expect("successful trial has a realization"),
        estimates: out.record.users.iter().map(|u| u.to_est).collect(),
        metrics: out.metrics,
    })
}

/// Per-user timing metric as CSV with columns `user,delay_bin,metric,normalized`.
pub fn timing_metric_csv(snap: &TimingSnapshot) -> String {
    let mut text = String::from("user,delay_bin,metric,normalized\n");
    for (q, m) in snap.metrics.iter().enumerate() {
        let max = m.max();
        for (tau, v) in m.values.iter().enumerate() {
            text.push_str(&format!("{q},{tau},{v},{}\n", v / max));
        }
    }
    text
}

/// Writes `timing_metric.csv` (and `snapshot.json` with the ground truth) into `dir`.
pub fn write_timing_snapshot(snap: &TimingSnapshot, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("timing_metric.csv");
    fs::write(&path, timing_metric_csv(snap)).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("snapshot.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, snap)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(f))
        .map_err(|e| Error::io(&path, e))
}

/// Runs a preset with `key=value` overrides, writing under `out`.
pub fn run_figure(name: &str, overrides: &[String], out: Option<&Path>, opts: &RunOptions) -> Result<Vec<ExperimentReport>> {
    let mut specs = preset(name)?;
    for s in &mut specs {
        for kv in overrides {
            s.apply_override(kv)?;
        }
    }
    let mut reports = Vec::with_capacity(specs.len());
    for s in &specs {
        let report = run_experiment(s, out, opts)?;
        if name == "fig3" {
            let cfg = s.config_at(s.sweep_points[0])?;
            let snap = timing_snapshot(&cfg, 0)?;
            if let Some(root) = out {
                write_timing_snapshot(&snap, &root.join(&s.name))?;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}
