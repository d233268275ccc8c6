//! Scenario configuration, topology construction and the experiment suite.

mod config;
mod world;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::can::CanError;
use crate::engine::EngineError;
use crate::eth::EthError;
use crate::gateway::GatewayError;
use crate::metrics::{export_csv, Arm, MetricsError};
use crate::traffic::TrafficError;

pub use config::{
    parse_config, CanSection, ConfigError, GatewaySection, JammerSection, NamedSender,
    OutputSection, ScenarioConfig, SwitchSection, TrafficSection,
};
pub use world::{format_credit_bits, Accounting, RunOutput, SimEvent, Simulation, JAMMER_STREAM};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Can(#[from] CanError),
    #[error(transparent)]
    Eth(#[from] EthError),
    #[error(transparent)]
    Gateway(GatewayError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl SimError {
    /// Stable machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            SimError::Config(ConfigError::Parse { .. }) => "parse",
            SimError::Config(ConfigError::Validation(_)) => "validation",
            SimError::Io { .. } | SimError::Metrics(MetricsError::Io(_)) => "io",
            SimError::Metrics(_) => "output",
            _ => "simulation",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "parse" => 2,
            "validation" => 3,
            "io" | "output" => 4,
            _ => 5,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn build_and_run(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    Simulation::new(cfg.clone())?.run()
}

pub fn csv_name(arm: Arm) -> String {
    format!("fig3_{}.csv", arm.label())
}

/// Writes the latency CSV, the summary text and any enabled traces into `dir`.
/// Returns the paths written.
pub fn write_run_outputs(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let csv = dir.join(csv_name(out.arm));
    export_csv(&out.records, &csv)?;
    written.push(csv);
    let summary = dir.join(format!("summary_{}.txt", out.arm.label()));
    fs::write(&summary, format!("{}\n", out.summary)).map_err(io_err(&summary))?;
    written.push(summary);
    if let Some(t) = &out.trace {
        let p = dir.join(format!("trace_{}.csv", out.arm.label()));
        fs::write(&p, t).map_err(io_err(&p))?;
        written.push(p);
    }
    if let Some(t) = &out.queue_trace {
        let p = dir.join(format!("queues_{}.csv", out.arm.label()));
        fs::write(&p, t).map_err(io_err(&p))?;
        written.push(p);
    }
    Ok(written)
}

/// The four arms run from one base scenario and one seed.
#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub runs: Vec<RunOutput>,
}

impl SuiteOutput {
    pub fn arm(&self, arm: Arm) -> &RunOutput {
        self.runs
            .iter()
            .find(|r| r.arm == arm)
            .expect("suite runs every arm")
    }

    /// `arm,count,min_ns,p50_ns,p99_ns,max_ns` per arm, in suite order.
    pub fn comparison_csv(&self) -> String {
        let mut s = String::from("arm,count,min_ns,p50_ns,p99_ns,max_ns\n");
        for r in &self.runs {
            match &r.summary.stats {
                Some(st) => s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.arm,
                    st.count,
                    st.min.as_nanos(),
                    st.p50.as_nanos(),
                    st.p99.as_nanos(),
                    st.max.as_nanos()
                )),
                None => s.push_str(&format!("{},0,,,,\n", r.arm)),
            }
        }
        s
    }

    pub fn comparison_table(&self) -> String {
        let mut s = format!(
            "{:<11} {:>6} {:>12} {:>12} {:>12}\n",
            "arm", "count", "p50 [ms]", "p99 [ms]", "max [ms]"
        );
        for r in &self.runs {
            let (p50, p99, max) = r
                .summary
                .stats
                .map_or((f64::NAN, f64::NAN, f64::NAN), |st| {
                    (
                        st.p50.as_millis_f64(),
                        st.p99.as_millis_f64(),
                        st.max.as_millis_f64(),
                    )
                });
            s.push_str(&format!(
                "{:<11} {:>6} {:>12.6} {:>12.6} {:>12.6}\n",
                r.arm.label(),
                r.summary.count,
                p50,
                p99,
                max
            ));
        }
        s
    }
}

/// Runs Eth_nature, Eth_jam, AVB_nature and AVB_jam from `base`, each on its
/// own thread. The arms differ only in jammer activity and CAN frame class.
pub fn run_experiment_suite(base: &ScenarioConfig) -> Result<SuiteOutput, SimError> {
    let results: Vec<Result<RunOutput, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = Arm::ALL
            .iter()
            .map(|&arm| {
                let cfg = base.for_arm(arm);
                scope.spawn(move || build_and_run(&cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("arm thread panicked"))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteOutput { runs })
}

/// Writes `fig3_<arm>.csv` for every arm plus `comparison.csv`.
pub fn write_suite_outputs(suite: &SuiteOutput, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    let mut written = Vec::new();
    for run in &suite.runs {
        written.extend(write_run_outputs(run, dir)?);
    }
    let cmp = dir.join("comparison.csv");
    let mut f = fs::File::create(&cmp).map_err(io_err(&cmp))?;
    f.write_all(suite.comparison_csv().as_bytes())
        .map_err(io_err(&cmp))?;
    written.push(cmp);
    Ok(written)
}
