//! `otfs-sim`: run experiments, reproduce figure presets and inspect single trials.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use otfs_core::harness::presets::{run_figure, timing_metric_csv, timing_snapshot, write_timing_snapshot, PRESET_NAMES};
use otfs_core::harness::{run_experiment, run_trial, ExperimentReport, ExperimentSpec, RunOptions, TrialContext, TrialOptions};
use otfs_core::sync::Stages;
use otfs_core::{Error, SystemConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURES: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "otfs-sim", version, about = "Multiuser OTFS uplink synchronization simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file: a system config, or an experiment spec for `run`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; results go to `<out>/<experiment name>/`.
    #[arg(long, global = true, env = "OTFS_SIM_OUT")]
    out: Option<PathBuf>,
    /// Shorthand for `--override rng_seed=<seed>`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for trials (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// `key=value` override, repeatable. Dotted keys address nested tables.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Also write every trial's timing metrics to `debug.jsonl`.
    #[arg(long, global = true)]
    debug_dump: bool,
    /// Print progress to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment spec given by `--config`.
    Run,
    /// Reproduce a figure from a built-in preset.
    Figure {
        /// One of fig3, fig4a, fig4b, fig5a, fig5b, fig6.
        name: String,
    },
    /// Run one trial with every estimator and print its record as JSON.
    Trial {
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Check a config or experiment spec and print it fully resolved.
    Validate,
    /// Write the timing metric of one trial as CSV (stdout unless `--out` is set).
    DumpMetric {
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut all = self.overrides.clone();
        if let Some(seed) = self.seed {
            all.push(format!("rng_seed={seed}"));
        }
        all
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            debug_dump: self.debug_dump,
        }
    }

    fn out_root(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    fn system_config(&self) -> Result<SystemConfig, Error> {
        match &self.config {
            Some(path) => SystemConfig::load(path, &self.overrides()),
            None => SystemConfig::from_overrides(&self.overrides()),
        }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), Error> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

/// Experiment specs are the files with a top-level `sweep_var`.
fn is_experiment_spec(text: &str) -> Result<bool, Error> {
    let table: toml::Table =
        toml::from_str(text).map_err(|e| Error::Config(format!("malformed TOML: {e}")))?;
    Ok(table.contains_key("sweep_var"))
}

fn summarize(report: &ExperimentReport, dir: &Path) -> String {
    format!(
        "{}: {} trials, {} failed, {} rows -> {}",
        report.spec.name,
        report.n_trials(),
        report.n_failed(),
        report.rows.len(),
        dir.join(&report.spec.name).display()
    )
}

fn check_failures(report: &ExperimentReport) -> Result<(), Failure> {
    if report.failure_fraction() > report.spec.max_failure_fraction {
        return Err(Failure::Runtime(format!(
            "{}: {} of {} trials failed, above max_failure_fraction = {}",
            report.spec.name,
            report.n_failed(),
            report.n_trials(),
            report.spec.max_failure_fraction
        )));
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let c = &cli.common;
    match &cli.command {
        Command::Run => {
            let path = c
                .config
                .as_ref()
                .ok_or_else(|| Error::Config("`run` needs --config <experiment spec>".into()))?;
            let mut spec = ExperimentSpec::load(path)?;
            for kv in c.overrides() {
                spec.apply_override(&kv)?;
            }
            let out = c.out_root();
            let start = Instant::now();
            let report = run_experiment(&spec, Some(&out), &c.run_options())?;
            c.log(format!("finished in {:.1} s", start.elapsed().as_secs_f64()));
            println!("{}", summarize(&report, &out));
            check_failures(&report)
        }
        Command::Figure { name } => {
            if !PRESET_NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "unknown figure `{name}`; available presets: {}",
                    PRESET_NAMES.join(", ")
                ))
                .into());
            }
            let out = c.out_root();
            let start = Instant::now();
            let reports = run_figure(name, &c.overrides(), Some(&out), &c.run_options())?;
            c.log(format!("finished in {:.1} s", start.elapsed().as_secs_f64()));
            for r in &reports {
                println!("{}", summarize(r, &out));
            }
            reports.iter().try_for_each(check_failures)
        }
        Command::Trial { index } => {
            let cfg = c.system_config()?;
            let ctx = TrialContext::new(&cfg)?;
            let opts = TrialOptions {
                stages: Stages { cfo: true, channel: true },
                absorbed: true,
                keep_metrics: false,
            };
            let out = run_trial(&ctx, &opts, *index);
            let json = serde_json::to_string_pretty(&out.record).expect("records serialise");
            emit(&format!("{json}\n"))?;
            match out.record.error {
                Some(e) => Err(Failure::Runtime(format!("trial {index} failed: {e}"))),
                None => Ok(()),
            }
        }
        Command::Validate => {
            let path = c
                .config
                .as_ref()
                .ok_or_else(|| Error::Config("`validate` needs --config <file>".into()))?;
            let text = read_text(path)?;
            if is_experiment_spec(&text)? {
                let mut spec = ExperimentSpec::from_toml_str(&text)?;
                for kv in c.overrides() {
                    spec.apply_override(&kv)?;
                }
                let cfg = spec.base_config()?;
                emit(&format!("{}\n# resolved system config\n{}", spec.to_toml_string(), cfg.to_toml_string()))?;
            } else {
                emit(&c.system_config()?.to_toml_string())?;
            }
            Ok(())
        }
        Command::DumpMetric { index } => {
            let cfg = c.system_config()?;
            let snap = timing_snapshot(&cfg, *index)?;
            match &c.out {
                Some(dir) => {
                    write_timing_snapshot(&snap, dir)?;
                    c.log(format!("wrote {}", dir.join("timing_metric.csv").display()));
                }
                None => emit(&timing_metric_csv(&snap))?,
            }
            Ok(())
        }
    }
}

fn exit_code(failure: &Failure) -> u8 {
    match failure {
        Failure::Runtime(_) => EXIT_FAILURES,
        Failure::Core(Error::Io { .. }) => EXIT_IO,
        Failure::Core(e) if e.is_config() => EXIT_CONFIG,
        Failure::Core(_) => EXIT_FAILURES,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Runtime(msg) => eprintln!("error: {msg}"),
                Failure::Core(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&failure))
        }
    }
}
