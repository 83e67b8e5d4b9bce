//! Parameter sweeps over many trials, aggregation and result files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::Moments;
use super::trial::{run_trial, TrialContext, TrialOptions, TrialRecord};
use crate::config::{insert_override, SystemConfig};
use crate::error::{Error, Result};
use crate::sync::{Stages, TimingMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    #[serde(rename = "snr_db")]
    SnrDb,
    #[serde(rename = "nu_max_T")]
    NuMaxT,
    #[serde(rename = "cfo_value")]
    CfoValue,
}

impl SweepVar {
    pub fn key(self) -> &'static str {
        match self {
            SweepVar::SnrDb => "snr_db",
            SweepVar::NuMaxT => "nu_max_T",
            SweepVar::CfoValue => "cfo_value",
        }
    }
}

/// Estimator variant reported in the results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Timing from the earliest above-threshold peak.
    FirstPeak,
    /// Timing from the largest peak.
    MaxPeak,
    /// CFO estimated and removed before the BEM channel fit.
    Compensated,
    /// CFO left inside the channel, larger BEM order.
    Absorbed,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::FirstPeak => "first-peak",
            Variant::MaxPeak => "max-peak",
            Variant::Compensated => "compensated",
            Variant::Absorbed => "absorbed",
        }
    }

    /// Metric columns emitted for this variant.
    pub fn metrics(self) -> &'static [&'static str] {
        match self {
            Variant::FirstPeak | Variant::MaxPeak => &["to_abs_error_mean", "to_abs_error_var"],
            Variant::Compensated => &["cfo_mse", "nmse_db"],
            Variant::Absorbed => &["nmse_db"],
        }
    }
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::FirstPeak]
}

fn default_failure_fraction() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

/// A sweep of one parameter with a fixed number of trials per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub sweep_var: SweepVar,
    pub sweep_points: Vec<f64>,
    pub trials: u64,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Largest failed-trial fraction before the run counts as failed.
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
    #[serde(default = "default_true")]
    pub write_trials: bool,
    /// System config keys applied on top of the defaults.
    #[serde(default)]
    pub config: toml::Table,
}

/// Spec-level keys accepted by [`ExperimentSpec::apply_override`].
pub const SPEC_KEYS: &[&str] = &["name", "trials", "sweep_points", "variants", "max_failure_fraction", "write_trials"];

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("malformed experiment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return err(format!("experiment name `{}` must be a plain non-empty name", self.name));
        }
        if self.trials == 0 {
            return err("trials must be at least 1".into());
        }
        if self.sweep_points.is_empty() {
            return err("sweep_points must not be empty".into());
        }
        if self.sweep_points.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return err("sweep_points must be strictly increasing".into());
        }
        if self.variants.is_empty() {
            return err("at least one variant is required".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return err("max_failure_fraction must lie in [0, 1]".into());
        }
        for &v in &self.sweep_points {
            self.config_at(v)?;
        }
        Ok(())
    }

    /// Applies one `key=value` override: spec keys directly, anything else to `config`.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not of the form key=value")))?;
        let key = key.trim();
        if SPEC_KEYS.contains(&key) {
            let mut table = toml::Table::try_from(&*self)
                .map_err(|e| Error::Config(format!("cannot serialise spec: {e}")))?;
            let parsed: toml::Table = toml::from_str(&format!("v = {}", value.trim()))
                .or_else(|_| toml::from_str(&format!("v = {:?}", value.trim())))
                .map_err(|e| Error::Config(format!("bad value for {key}: {e}")))?;
            table.insert(key.to_string(), parsed["v"].clone());
            *self = toml::Value::Table(table)
                .try_into()
                .map_err(|e| Error::Config(format!("override {kv}: {e}")))?;
        } else {
            insert_override(&mut self.config, kv)?;
        }
        self.validate()
    }

    /// Config shared by all sweep points.
    pub fn base_config(&self) -> Result<SystemConfig> {
        SystemConfig::from_table(self.config.clone(), &[])
    }

    /// Config of one sweep point.
    pub fn config_at(&self, value: f64) -> Result<SystemConfig> {
        let mut cfg = self.base_config()?;
        match self.sweep_var {
            SweepVar::SnrDb => cfg.snr_db = value,
            SweepVar::NuMaxT => cfg.nu_max_t = value,
            SweepVar::CfoValue => cfg.fixed_cfo = Some(value),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn trial_options(&self) -> TrialOptions {
        let compensated = self.variants.contains(&Variant::Compensated);
        TrialOptions {
            stages: Stages {
                cfo: compensated,
                channel: compensated,
            },
            absorbed: self.variants.contains(&Variant::Absorbed),
            keep_metrics: false,
        }
    }
}

/// One aggregate in the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub user: usize,
    pub variant: String,
    pub metric: String,
    pub value: f64,
    pub ci_halfwidth: f64,
    pub n_trials: u64,
    pub n_failed: u64,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub value: f64,
    pub records: Vec<TrialRecord>,
    pub metrics: Vec<Vec<TimingMetric>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub config: SystemConfig,
    pub points: Vec<PointResult>,
    pub rows: Vec<AggregateRow>,
}

impl ExperimentReport {
    pub fn n_trials(&self) -> u64 {
        self.points.iter().map(|p| p.records.len() as u64).sum()
    }

    pub fn n_failed(&self) -> u64 {
        self.points
            .iter()
            .map(|p| p.records.iter().filter(|r| r.failed()).count() as u64)
            .sum()
    }

    pub fn failure_fraction(&self) -> f64 {
        self.n_failed() as f64 / self.n_trials().max(1) as f64
    }

    /// Looks up one aggregate.
    pub fn row(&self, value: f64, user: usize, variant: Variant, metric: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| {
            r.sweep_value == value && r.user == user && r.variant == variant.name() && r.metric == metric
        })
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Numeric(format!("CSV encoding: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(format!("CSV encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
    }
}

/// Worker count and output switches of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Threads used for trials; `None` uses all cores.
    pub workers: Option<usize>,
    /// Also write every trial's timing metrics to `debug.jsonl`.
    pub debug_dump: bool,
}

fn metric_samples(records: &[TrialRecord], user: usize, variant: Variant, metric: &str) -> Moments {
    let mut m = Moments::new();
    for u in records.iter().filter(|r| !r.failed()).filter_map(|r| r.users.get(user)) {
        let v = match (variant, metric) {
            (Variant::FirstPeak, _) => Some(u.to_est.abs_diff(u.to_true) as f64),
            (Variant::MaxPeak, _) => Some(u.to_max_peak.abs_diff(u.to_true) as f64),
            (Variant::Compensated, "cfo_mse") => u.cfo_est.map(|e| (e - u.cfo_true).powi(2)),
            (Variant::Compensated, _) => u.nmse,
            (Variant::Absorbed, _) => u.nmse_absorbed,
        };
        if let Some(v) = v {
            m.push(v);
        }
    }
    m
}

/// Aggregates one sweep point into table rows.
pub fn aggregate(spec: &ExperimentSpec, users: usize, point: &PointResult) -> Vec<AggregateRow> {
    let n_trials = point.records.len() as u64;
    let n_failed = point.records.iter().filter(|r| r.failed()).count() as u64;
    let mut rows = Vec::new();
    for user in 0..users {
        for &variant in &spec.variants {
            for &metric in variant.metrics() {
                let m = metric_samples(&point.records, user, variant, metric);
                let (value, ci) = match metric {
                    "to_abs_error_var" => (m.variance(), m.variance_ci()),
                    "nmse_db" => {
                        let mean = m.mean();
                        (10.0 * mean.log10(), 10.0 / std::f64::consts::LN_10 * m.mean_ci() / mean)
                    }
                    _ => (m.mean(), m.mean_ci()),
                };
                rows.push(AggregateRow {
                    sweep_var: spec.sweep_var.key().to_string(),
                    sweep_value: point.value,
                    user,
                    variant: variant.name().to_string(),
                    metric: metric.to_string(),
                    value,
                    ci_halfwidth: ci,
                    n_trials,
                    n_failed,
                });
            }
        }
    }
    rows
}

/// Runs every sweep point and, with `out`, writes `<out>/<name>/`.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>, opts: &RunOptions) -> Result<ExperimentReport> {
    spec.validate()?;
    let config = spec.base_config()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut trial_opts = spec.trial_options();
    trial_opts.keep_metrics = opts.debug_dump;

    let mut points = Vec::with_capacity(spec.sweep_points.len());
    let mut rows = Vec::new();
    for &value in &spec.sweep_points {
        let ctx = TrialContext::new(&spec.config_at(value)?)?;
        let outputs: Vec<_> = pool.install(|| {
            (0..spec.trials)
                .into_par_iter()
                .map(|t| run_trial(&ctx, &trial_opts, t))
                .collect()
        });
        let (records, metrics) = outputs.into_iter().map(|o| (o.record, o.metrics)).unzip();
        let point = PointResult { value, records, metrics };
        rows.extend(aggregate(spec, config.users, &point));
        points.push(point);
    }
    let report = ExperimentReport {
        spec: spec.clone(),
        config,
        points,
        rows,
    };
    if let Some(root) = out {
        write_outputs(&report, root, opts)?;
    }
    Ok(report)
}

/// JSON has no infinities, so non-finite sweep values are written as strings.
fn finite_or_string<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

#[derive(Serialize)]
struct TrialLine<'a> {
    #[serde(serialize_with = "finite_or_string")]
    sweep_value: f64,
    #[serde(flatten)]
    record: &'a TrialRecord,
}

#[derive(Serialize)]
struct DebugLine<'a> {
    #[serde(serialize_with = "finite_or_string")]
    sweep_value: f64,
    trial: u64,
    timing_metrics: Vec<&'a [f64]>,
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `spec.toml`, `config.toml` and the optional JSONL files.
pub fn write_outputs(report: &ExperimentReport, root: &Path, opts: &RunOptions) -> Result<PathBuf> {
    let dir = root.join(&report.spec.name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let csv = report.csv_string()?;
    write_file(&dir.join("results.csv"), |w| w.write_all(csv.as_bytes()))?;
    let spec = report.spec.to_toml_string();
    write_file(&dir.join("spec.toml"), |w| w.write_all(spec.as_bytes()))?;
    let cfg = report.config.to_toml_string();
    write_file(&dir.join("config.toml"), |w| w.write_all(cfg.as_bytes()))?;
    if report.spec.write_trials {
        write_file(&dir.join("per-trial.jsonl"), |w| {
            for p in &report.points {
                for record in &p.records {
                    serde_json::to_writer(&mut *w, &TrialLine { sweep_value: p.value, record })?;
                    writeln!(w)?;
                }
            }
            Ok(())
        })?;
    }
    if opts.debug_dump {
        write_file(&dir.join("debug.jsonl"), |w| {
            for p in &report.points {
                for (record, metrics) in p.records.iter().zip(&p.metrics) {
                    let line = DebugLine {
                        sweep_value: p.value,
                        trial: record.trial,
                        timing_metrics: metrics.iter().map(|m| m.values.as_slice()).collect(),
                    };
                    serde_json::to_writer(&mut *w, &line)?;
                    writeln!(w)?;
                }
            }
            Ok(())
        })?;
    }
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec::from_toml_str(
            r#"
name = "tiny"
sweep_var = "snr_db"
sweep_points = [10.0]
trials = 1
variants = ["first-peak", "max-peak", "compensated", "absorbed"]
[config]
nu_max_T = 1.0
"#,
        )
        .unwrap()
    }

    #[test]
    fn one_point_one_trial_table_shape() {
        let spec = tiny_spec();
        let report = run_experiment(&spec, None, &RunOptions::default()).unwrap();
        let per_user: usize = spec.variants.iter().map(|v| v.metrics().len()).sum();
        assert_eq!(report.rows.len(), 2 * per_user);
        for user in 0..2 {
            for v in &spec.variants {
                assert!(report.rows.iter().any(|r| r.user == user && r.variant == v.name()));
            }
        }
        let csv = report.csv_string().unwrap();
        assert_eq!(
            csv.lines().next().unwrap(),
            "sweep_var,sweep_value,user,variant,metric,value,ci_halfwidth,n_trials,n_failed"
        );
        assert_eq!(csv.lines().count(), 1 + report.rows.len());
    }

    #[test]
    fn spec_validation() {
        let bad = |edit: &str| {
            let text = format!("name = \"x\"\nsweep_var = \"snr_db\"\n{edit}");
            ExperimentSpec::from_toml_str(&text).is_err()
        };
        assert!(bad("sweep_points = [1.0]\ntrials = 0"));
        assert!(bad("sweep_points = []\ntrials = 1"));
        assert!(bad("sweep_points = [2.0, 1.0]\ntrials = 1"));
        assert!(bad("sweep_points = [1.0]\ntrials = 1\nbogus = 3"));
        assert!(bad("sweep_points = [1.0]\ntrials = 1\n[config]\nM2 = 3"));
        assert!(!bad("sweep_points = [1.0, 2.0]\ntrials = 1"));
    }

    #[test]
    fn overrides_split_between_spec_and_config() {
        let mut spec = tiny_spec();
        spec.apply_override("trials=7").unwrap();
        spec.apply_override("Q=4").unwrap();
        spec.apply_override("sweep_points=[0, 5]").unwrap();
        assert_eq!(spec.trials, 7);
        assert_eq!(spec.sweep_points, vec![0.0, 5.0]);
        assert_eq!(spec.base_config().unwrap().users, 4);
        assert!(spec.apply_override("nonsense=1").is_err());
    }

    #[test]
    fn sweep_sets_the_right_field() {
        let mut spec = tiny_spec();
        spec.sweep_var = SweepVar::CfoValue;
        assert_eq!(spec.config_at(0.3).unwrap().fixed_cfo, Some(0.3));
        spec.sweep_var = SweepVar::NuMaxT;
        let cfg = spec.config_at(2.0).unwrap();
        assert_eq!((cfg.nu_max_t, cfg.beta()), (2.0, 5));
    }

    #[test]
    fn failed_trials_are_counted() {
        let records = vec![
            TrialRecord { trial: 0, users: vec![], error: Some("boom".into()) },
            TrialRecord { trial: 1, users: vec![], error: None },
        ];
        let point = PointResult { value: 1.0, records, metrics: vec![] };
        let rows = aggregate(&tiny_spec(), 1, &point);
        assert!(rows.iter().all(|r| r.n_trials == 2 && r.n_failed == 1));
    }
}
