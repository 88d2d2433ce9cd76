//! Command-line front end: single simulations, spectra, fits, full scenario
//! runs and the closed-form cooling numbers.

mod commands;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use units::{FilterCenter, List};

#[derive(Parser, Debug)]
#[command(name = "coldmirror", version, about = "Virtual cold-damping experiment on a high-Q mirror mode")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one closed-loop trajectory.
    Simulate(SimulateArgs),
    /// Welch spectrum of a stored trajectory.
    Spectrum(SpectrumArgs),
    /// Lorentzian fit of a stored spectrum.
    Fit(FitArgs),
    /// Run a named scenario and write its report folder.
    Scenario(ScenarioArgs),
    /// Closed-form linewidth, noise reduction and temperature for given gains.
    Oracle(OracleArgs),
}

/// Configuration source and overrides shared by `simulate` and `scenario`.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML configuration or run manifest, or `defaults`.
    #[arg(long, value_name = "PATH")]
    pub config: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Scaled units: Ω_M = 1 rad/s, Q = 1000 (the default).
    #[arg(long, conflicts_with = "physical")]
    pub scaled: bool,
    /// Parameters of the measured 1858.9 kHz mode.
    #[arg(long)]
    pub physical: bool,
    /// Worker threads for scenario points.
    #[arg(long, value_parser = units::count)]
    pub threads: Option<usize>,
    /// Gain(s) in units of Γ, comma separated.
    #[arg(long, value_name = "G", value_parser = units::list, allow_hyphen_values = true)]
    pub gain_over_gamma: Option<List>,
    /// Resolution bandwidth, e.g. `0.2hz` or `1.5k`.
    #[arg(long, value_name = "F", value_parser = units::hz)]
    pub rbw_hz: Option<f64>,
    #[arg(long, value_parser = units::count)]
    pub averages: Option<usize>,
    /// Ratio to the mode frequency, or an absolute frequency such as `800khz`.
    #[arg(long, value_name = "F", value_parser = units::filter_center)]
    pub filter_center: Option<FilterCenter>,
    #[arg(long, value_name = "Q", value_parser = units::positive)]
    pub filter_q: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Binary,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long, value_parser = units::count)]
    pub samples: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Also record the actuator force.
    #[arg(long)]
    pub record_force: bool,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    /// Trajectory file, text or binary.
    pub input: PathBuf,
    /// Defaults to eight bins per closed-loop linewidth.
    #[arg(long, value_name = "F", value_parser = units::hz)]
    pub rbw_hz: Option<f64>,
    /// Output directory; defaults to the input's.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Spectrum file.
    pub input: PathBuf,
    /// Fit band `lo:hi`, e.g. `1.85mhz:1.87mhz`; automatic when omitted.
    #[arg(long, value_name = "LO:HI", value_parser = units::band)]
    pub window: Option<(f64, f64)>,
}

#[derive(Args, Debug)]
pub struct ScenarioArgs {
    /// cooling_spectra, heating, gain_sweep, offres_cooling or oracle_check.
    pub name: String,
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    /// Intrinsic linewidth Γ/2π.
    #[arg(long, value_name = "F", value_parser = units::hz, default_value = "45")]
    pub gamma_hz: f64,
    /// Mode frequency Ω_M/2π.
    #[arg(long, value_name = "F", value_parser = units::khz, default_value = "1858.9")]
    pub fm_khz: f64,
    /// Gain(s) in units of Γ, comma separated.
    #[arg(long, value_name = "G", value_parser = units::list, allow_hyphen_values = true, default_value = "19")]
    pub g_over_gamma: List,
    /// Bath temperature, K.
    #[arg(long, value_parser = units::positive, default_value = "300")]
    pub temperature: f64,
    /// Effective mass, kg.
    #[arg(long, value_parser = units::positive, default_value = "1e-4")]
    pub mass: f64,
    /// Also write the open- and closed-loop spectra to `DIR/oracle.tsv`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Spectrum(a) => commands::spectrum(a),
        Command::Fit(a) => commands::fit(a),
        Command::Scenario(a) => commands::scenario(a),
        Command::Oracle(a) => commands::oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
