//! Command-line surface: `synth`, `clean`, `score` and `report`.
//!
//! Every subcommand reads and writes plain files only. Each option can also
//! come from a JSON config file (`--config`) using the snake_case field
//! names; a flag on the command line overrides the file. A run manifest
//! written by `clean` or `synth` is itself a valid config file.
//!
//! Exit codes: 0 success, 1 bad configuration or arguments, 2 missing or
//! unreadable input, 3 malformed input content, 4 failure writing outputs.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cluster::Linkage;
use crate::exec::Execution;
use crate::geo::{DistanceMetric, EARTH_RADIUS_M};
use crate::ingest::Strictness;
use crate::resolver::MatchPolicy;

pub use commands::{run_clean, run_report, run_score, run_synth};

pub const CLEAN_OUTPUTS: [&str; 7] = [
    "cleaned.geojson",
    "cleaned.csv",
    "retention.json",
    "coverage.json",
    "scatter_before.svg",
    "scatter_after.svg",
    "manifest.json",
];
pub const TIMINGS_FILE: &str = "timings.json";
pub const SYNTH_OUTPUTS: [&str; 3] = ["world.json", "cell_db.csv", "trace.csv"];

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Input {
        path: PathBuf,
        source: std::io::Error,
    },
    Format {
        path: PathBuf,
        line: Option<u64>,
        message: String,
    },
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Input { .. } => 2,
            CliError::Format { .. } => 3,
            CliError::Output { .. } => 4,
        }
    }

    pub(crate) fn format(path: &Path, line: Option<u64>, message: impl fmt::Display) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Input { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            CliError::Format {
                path,
                line: Some(line),
                message,
            } => write!(f, "{}:{line}: {message}", path.display()),
            CliError::Format {
                path,
                line: None,
                message,
            } => write!(f, "{}: {message}", path.display()),
            CliError::Output { path, source } => write!(f, "cannot write {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(
    name = "lacclust",
    version,
    about = "Remove spatial outliers from GSM cell-location data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic network: world manifest, cell database and trace.
    Synth(SynthOptions),
    /// Resolve, cluster and report on a trace against a cell database.
    Clean(CleanOptions),
    /// Score a cleaned result against a synthetic world's ground truth.
    Score(ScoreOptions),
    /// Print a retention table, or re-render outputs from a result CSV.
    Report(ReportOptions),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkageArg {
    Centroid,
    Single,
    Complete,
    Average,
}

impl From<LinkageArg> for Linkage {
    fn from(v: LinkageArg) -> Self {
        match v {
            LinkageArg::Centroid => Linkage::Centroid,
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Complete => Linkage::Complete,
            LinkageArg::Average => Linkage::Average,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    #[value(alias = "equirect_m")]
    #[serde(alias = "equirect_m")]
    Equirect,
    #[value(alias = "haversine_m")]
    #[serde(alias = "haversine_m")]
    Haversine,
    /// Euclidean distance on raw degrees.
    #[value(alias = "degrees_euclid")]
    #[serde(alias = "degrees_euclid")]
    Degrees,
}

impl From<MetricArg> for DistanceMetric {
    fn from(v: MetricArg) -> Self {
        match v {
            MetricArg::Equirect => DistanceMetric::EquirectM,
            MetricArg::Haversine => DistanceMetric::HaversineM,
            MetricArg::Degrees => DistanceMetric::DegreesEuclid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyArg {
    #[value(alias = "exact_only")]
    #[serde(alias = "exact_only")]
    Exact,
    #[value(alias = "allow_wildcard")]
    #[serde(alias = "allow_wildcard")]
    Wildcard,
}

impl From<PolicyArg> for MatchPolicy {
    fn from(v: PolicyArg) -> Self {
        match v {
            PolicyArg::Exact => MatchPolicy::ExactOnly,
            PolicyArg::Wildcard => MatchPolicy::AllowWildcard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrictnessArg {
    Strict,
    Lenient,
}

impl From<StrictnessArg> for Strictness {
    fn from(v: StrictnessArg) -> Self {
        match v {
            StrictnessArg::Strict => Strictness::Strict,
            StrictnessArg::Lenient => Strictness::Lenient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionArg {
    Sequential,
    Parallel,
}

impl From<ExecutionArg> for Execution {
    fn from(v: ExecutionArg) -> Self {
        match v {
            ExecutionArg::Sequential => Execution::Sequential,
            ExecutionArg::Parallel => Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbFormatArg {
    /// `mcc,mnc,lac,cell_id,lat,lon,freshness`
    Native,
    /// OpenCellID export column order.
    Opencellid,
}

/// Options for `clean`. Field names double as config-file keys.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanOptions {
    /// JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trace CSV (`timestamp,mcc,mnc,lac,cell_id`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Cell database CSV.
    #[arg(long)]
    pub cell_db: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub cell_db_format: Option<DbFormatArg>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub linkage: Option<LinkageArg>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Merge cutoff in the metric's units (meters, or degrees for `degrees`).
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Smallest cluster accepted as an area's representative.
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    pub strictness: Option<StrictnessArg>,
    /// Events per coverage bin.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum)]
    pub execution: Option<ExecutionArg>,
}

/// Options for `synth`.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of location areas.
    #[arg(long)]
    pub lacs: Option<usize>,
    #[arg(long)]
    pub cells_per_lac: Option<usize>,
    /// Hexagonal cell circumradius in meters.
    #[arg(long)]
    pub cell_radius: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lat_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lat_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lon_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lon_max: Option<f64>,
    /// Minimum distance between area centers, meters.
    #[arg(long)]
    pub min_separation: Option<f64>,
    #[arg(long)]
    pub first_lac: Option<u16>,
    #[arg(long)]
    pub mcc: Option<u16>,
    #[arg(long)]
    pub mnc: Option<u16>,
    /// Fraction of each area's cells to displace.
    #[arg(long)]
    pub outlier_rate: Option<f64>,
    #[arg(long)]
    pub displacement_min: Option<f64>,
    #[arg(long)]
    pub displacement_max: Option<f64>,
    /// Trace length; defaults to ten events per cell.
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop mcc/mnc from trace events.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strip_operator: Option<bool>,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreOptions {
    /// `cleaned.csv` written by `clean`.
    #[arg(long)]
    pub result: PathBuf,
    /// `world.json` written by `synth`.
    #[arg(long)]
    pub world: PathBuf,
    /// Also write the score JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["retention", "result"])))]
pub struct ReportOptions {
    /// Print the retention table for TOTAL RESOLVED RETAINED.
    #[arg(long, num_args = 3, value_names = ["TOTAL", "RESOLVED", "RETAINED"])]
    pub retention: Option<Vec<usize>>,
    /// Externally reported retained percentage to compare against.
    #[arg(long, requires = "retention")]
    pub claimed_retained_pct: Option<f64>,
    /// Re-render GeoJSON and SVG from a result CSV.
    #[arg(long, requires = "out")]
    pub result: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Default cutoff: 35 km, expressed in the metric's units.
pub fn default_cutoff(metric: DistanceMetric) -> f64 {
    let meters = crate::cluster::DEFAULT_CUTOFF_M;
    match metric {
        DistanceMetric::DegreesEuclid => meters / (EARTH_RADIUS_M * std::f64::consts::PI / 180.0),
        _ => meters,
    }
}

/// Load a JSON config file. A run manifest is accepted too: its `config`
/// member is used.
pub(crate) fn load_config_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value = match value.get("config") {
        Some(inner) if value.get("tool").is_some() => inner.clone(),
        _ => value,
    };
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parse arguments and run. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let outcome = match cli.command {
        Command::Synth(o) => run_synth(&o),
        Command::Clean(o) => run_clean(&o),
        Command::Score(o) => run_score(&o),
        Command::Report(o) => run_report(&o),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lacclust: {e}");
            e.exit_code()
        }
    }
}
