use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gocor_cli::commands;
use gocor_cli::config::RunConfig;

/// Optimized correlation volumes: verification, synthetic benchmarks, and
/// confidence-map export.
#[derive(Parser)]
#[command(name = "gocor", version, about)]
struct Cli {
    /// Run all kernels on the current thread (bitwise-deterministic
    /// scheduling; results are identical to the parallel path).
    #[arg(long, global = true)]
    serial: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a single key, e.g. `--set num_iter=5`. Repeatable; wins over
    /// the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        RunConfig::from_sources(self.config.as_deref(), &self.sets)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the closed-form gradient against central finite differences.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        /// Test hook: corrupt one gradient entry to exercise the failure path.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Solve for the filter map and write the correspondence volume.
    Solve {
        /// Reference feature map (FMAP file).
        reference: PathBuf,
        /// Query feature map (FMAP file).
        query: PathBuf,
        /// Output volume (CVOL file).
        #[arg(long, short)]
        out: PathBuf,
        /// Write the loss-trace report here instead of stdout.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the repeated-pattern disambiguation experiment over seeds.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the JSON report here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Include wall-clock timings in the report (breaks byte-for-byte
        /// reproducibility across runs).
        #[arg(long)]
        timings: bool,
    },
    /// Export one probe slice of a stored volume as a PGM heatmap.
    ExportHeatmap {
        /// Input volume (CVOL file).
        volume: PathBuf,
        /// Probe grid location: row column.
        #[arg(long, num_args = 2, value_names = ["I", "J"])]
        probe: Vec<usize>,
        /// Output PGM path.
        #[arg(long, short)]
        out: PathBuf,
        /// Also write the raw slice values as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the brute-force oracle equivalence suite.
    Oracle {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    gocor::exec::set_serial(cli.serial);
    match cli.command {
        Command::Gradcheck {
            config,
            corrupt_gradient,
        } => commands::cmd_gradcheck(&config.load()?, corrupt_gradient),
        Command::Solve {
            reference,
            query,
            out,
            trace,
            config,
        } => commands::cmd_solve(&reference, &query, &out, trace.as_deref(), &config.load()?),
        Command::Bench {
            config,
            out,
            timings,
        } => commands::cmd_bench(&config.load()?, out.as_deref(), timings),
        Command::ExportHeatmap {
            volume,
            probe,
            out,
            csv,
        } => commands::cmd_export_heatmap(
            &volume,
            commands::parse_probe(&probe)?,
            &out,
            csv.as_deref(),
        ),
        Command::Oracle { config } => commands::cmd_oracle(&config.load()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
