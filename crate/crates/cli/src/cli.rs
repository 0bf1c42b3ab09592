use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, RegionFlags, SimulateFlags, EXIT_ERROR, EXIT_OK, TOLERANCE_SCALE_VAR};
use crate::error::Result;

/// Certificates, spectra and structure-preserving simulation for 1-D port-Hamiltonian systems.
///
/// Tolerances are multiplied by PHS_LAB_TOLERANCE_SCALE (default 1). Exit codes: 0 pass or
/// inconclusive, 1 error in the input, 2 a check failed.
#[derive(Debug, Parser)]
#[command(name = "phs-lab", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run all applicable certificates and print a JSON report.
    Analyze {
        config: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Locate boundary eigenvalues in a rectangle of the complex plane.
    Spectrum {
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        re_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        re_max: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        im_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        im_max: Option<f64>,
        /// Error out when the region holds more eigenvalues than this.
        #[arg(long)]
        max_count: Option<usize>,
        /// CSV file for sampled eigenfunctions.
        #[arg(long)]
        eigenfunctions: Option<PathBuf>,
        /// Cells used to sample eigenfunctions.
        #[arg(long, default_value_t = 64)]
        cells: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate with the implicit midpoint scheme and report the energy balance.
    Simulate {
        config: PathBuf,
        /// Final time.
        #[arg(long = "T")]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Number of grid cells.
        #[arg(long = "N")]
        cells: Option<usize>,
        /// Trace CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON file of state snapshots keyed by step.
        #[arg(long)]
        states: Option<PathBuf>,
        /// Write the summary here instead of stdout.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// List bundled configs, or write one.
    Examples {
        name: Option<String>,
        #[arg(long, default_value = ".")]
        dir: PathBuf,
        /// Parameter override, e.g. --set R=1.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// Parses arguments, runs the command and returns the exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let scale = || commands::tolerance_scale(std::env::var(TOLERANCE_SCALE_VAR).ok().as_deref());
    match cli.command {
        Command::Analyze { config, out } => {
            let scale = scale()?;
            commands::analyze(&commands::load(&config)?, scale, out.as_deref())
        }
        Command::Spectrum { config, re_min, re_max, im_min, im_max, max_count, eigenfunctions, cells, out } => {
            let scale = scale()?;
            let flags = RegionFlags { re_min, re_max, im_min, im_max, max_count };
            let ef = eigenfunctions.as_deref().map(|p| (p, cells));
            commands::spectrum(&commands::load(&config)?, scale, flags, out.as_deref(), ef)
        }
        Command::Simulate { config, t_end, dt, cells, out, states, summary } => {
            let scale = scale()?;
            let flags = SimulateFlags { t_end, dt, cells, trace: out, states, summary };
            commands::simulate(&commands::load(&config)?, scale, &flags)
        }
        Command::Examples { name, dir, set } => commands::examples(name.as_deref(), &dir, &set),
    }
}
