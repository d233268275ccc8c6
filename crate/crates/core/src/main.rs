use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use canavb::scenario::{
    build_and_run, parse_config, run_experiment_suite, write_run_outputs, write_suite_outputs,
    ScenarioConfig, SimError,
};
use canavb::SimDuration;

#[derive(Parser)]
#[command(
    name = "canavb",
    version,
    about = "CAN / Ethernet-AVB latency simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated time, e.g. `1s` or `250ms`
        #[arg(long)]
        duration: Option<SimDuration>,
        /// Write the per-event trace and per-port queue trace
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the four experiment arms (Eth_nature, Eth_jam, AVB_nature, AVB_jam)
    Suite {
        /// Base scenario; defaults to the built-in reference scenario
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<SimDuration>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<ScenarioConfig, SimError> {
    let text = fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(parse_config(&text)?)
}

fn apply(
    cfg: &mut ScenarioConfig,
    seed: Option<u64>,
    duration: Option<SimDuration>,
    out: Option<PathBuf>,
) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
}

fn run(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            duration,
            trace,
            out,
        } => {
            let mut cfg = load(&config)?;
            apply(&mut cfg, seed, duration, out);
            if trace {
                cfg.output.trace = true;
                cfg.output.queue_trace = true;
            }
            let output = build_and_run(&cfg)?;
            let written = write_run_outputs(&output, &cfg.output.dir)?;
            println!("{}", output.summary);
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::Suite {
            config,
            seed,
            duration,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => load(&p)?,
                None => ScenarioConfig::default(),
            };
            apply(&mut cfg, seed, duration, out);
            let suite = run_experiment_suite(&cfg)?;
            let written = write_suite_outputs(&suite, &cfg.output.dir)?;
            for r in &suite.runs {
                println!("{}\n", r.summary);
            }
            print!("{}", suite.comparison_table());
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
