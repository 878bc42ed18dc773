//! Command-line surface: `band`, `estimate`, `simulate`, `coverage`.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bandsolver::{linspace, SolveError};
use crate::calib::CriticalMode;
use crate::livuong::{amise_bandwidth, default_h_grid, estimate_charfn, estimate_density, normal_reference_roughness};
use crate::pipeline::{run_band, BandSettings, BOOTSTRAP_CHECK_REPS};
use crate::restriction::Dataset;
use crate::simlab::{draw_sample, run_coverage_multi, CoverageReport, CoverageTarget, ExperimentConfig, SimulationModel};
use crate::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kband", version, about = "Confidence bands for a latent density from repeated noisy measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Confidence band from a y1,y2 CSV.
    Band(Flags),
    /// Li–Vuong deconvolution estimate from a y1,y2 CSV.
    Estimate(Flags),
    /// Simulated y1,y2 sample from model 1, 2 or 3.
    Simulate(Flags),
    /// Monte Carlo coverage of the truth or of a shifted alternative.
    Coverage(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriticalArg {
    Conservative,
    Bootstrap,
}

impl From<CriticalArg> for CriticalMode {
    fn from(c: CriticalArg) -> Self {
        match c {
            CriticalArg::Conservative => CriticalMode::Conservative,
            CriticalArg::Bootstrap => CriticalMode::Bootstrap,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    /// Sieve degree.
    #[arg(long)]
    q: Option<usize>,
    /// Smoothness bound.
    #[arg(long = "M")]
    m_bound: Option<f64>,
    /// Frequency bound.
    #[arg(long = "T")]
    t_bound: Option<f64>,
    /// Number of frequencies.
    #[arg(long = "L")]
    frequencies: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of evaluation points over the interval.
    #[arg(long = "x-grid")]
    x_grid: Option<usize>,
    /// Evaluation interval as `lo,hi`.
    #[arg(long, allow_hyphen_values = true)]
    interval: Option<String>,
    #[arg(long = "critical-value", value_enum)]
    critical_value: Option<CriticalArg>,
    /// Bootstrap replications (band) or Monte Carlo replications (coverage).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, env = "KBAND_THREADS")]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulation model (1, 2 or 3).
    #[arg(long)]
    model: Option<u8>,
    /// Sample size for simulate and coverage.
    #[arg(long)]
    n: Option<usize>,
    /// Location shift of the alternative whose coverage is recorded.
    #[arg(long, allow_hyphen_values = true)]
    shift: Option<f64>,
    /// Fixed bandwidth for estimate; selected by AMISE when absent.
    #[arg(long)]
    bandwidth: Option<f64>,
}

/// Keys accepted in the `--config` TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    q: Option<usize>,
    #[serde(rename = "M")]
    m_bound: Option<f64>,
    #[serde(rename = "T")]
    t_bound: Option<f64>,
    #[serde(rename = "L")]
    frequencies: Option<usize>,
    alpha: Option<f64>,
    x_grid: Option<usize>,
    interval: Option<[f64; 2]>,
    critical_value: Option<CriticalMode>,
    reps: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    format: Option<Format>,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    model: Option<u8>,
    n: Option<usize>,
    shift: Option<f64>,
    bandwidth: Option<f64>,
}

/// Resolved parameters: flags, then the config file, then built-in defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub q: usize,
    pub m_bound: Option<f64>,
    pub t_bound: f64,
    pub frequencies: usize,
    pub alpha: f64,
    pub x_points: usize,
    pub interval: Option<(f64, f64)>,
    pub critical: CriticalMode,
    pub reps: Option<usize>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub format: Format,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: u8,
    pub n: Option<usize>,
    pub shift: Option<f64>,
    pub bandwidth: Option<f64>,
}

fn parse_interval(s: &str) -> Result<(f64, f64), Error> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parsed: Vec<f64> = parts.iter().filter_map(|p| p.parse().ok()).collect();
    match (parts.len(), parsed.as_slice()) {
        (2, &[lo, hi]) => Ok((lo, hi)),
        _ => Err(Error::Config(format!("interval must look like `lo,hi`, got `{s}`"))),
    }
}

impl RunConfig {
    fn resolve(flags: Flags) -> Result<Self, Error> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let interval = match flags.interval.as_deref() {
            Some(s) => Some(parse_interval(s)?),
            None => file.interval.map(|[a, b]| (a, b)),
        };
        let config = RunConfig {
            q: flags.q.or(file.q).unwrap_or(7),
            m_bound: flags.m_bound.or(file.m_bound),
            t_bound: flags.t_bound.or(file.t_bound).unwrap_or(5.0),
            frequencies: flags.frequencies.or(file.frequencies).unwrap_or(50),
            alpha: flags.alpha.or(file.alpha).unwrap_or(0.05),
            x_points: flags.x_grid.or(file.x_grid).unwrap_or(101),
            interval,
            critical: flags.critical_value.map(CriticalMode::from).or(file.critical_value).unwrap_or_default(),
            reps: flags.reps.or(file.reps),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            threads: flags.threads.or(file.threads),
            format: flags.format.or(file.format).unwrap_or(Format::Csv),
            input: flags.input.or(file.input),
            output: flags.output.or(file.output),
            model: flags.model.or(file.model).unwrap_or(1),
            n: flags.n.or(file.n),
            shift: flags.shift.or(file.shift),
            bandwidth: flags.bandwidth.or(file.bandwidth),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), Error> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return fail(format!("alpha must lie in (0, 1/2), got {}", self.alpha));
        }
        if self.q < 1 {
            return fail("q must be at least 1".into());
        }
        if let Some(m) = self.m_bound {
            if !(m > 0.0) || !m.is_finite() {
                return fail(format!("M must be positive, got {m}"));
            }
        }
        if !(self.t_bound > 0.0) || !self.t_bound.is_finite() {
            return fail(format!("T must be positive, got {}", self.t_bound));
        }
        if self.frequencies < 1 {
            return fail("L must be at least 1".into());
        }
        if self.x_points < 1 {
            return fail("x-grid needs at least one point".into());
        }
        if let Some((lo, hi)) = self.interval {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return fail(format!("interval [{lo}, {hi}] is empty or not finite"));
            }
        }
        if !(1..=3).contains(&self.model) {
            return fail(format!("model must be 1, 2 or 3, got {}", self.model));
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return fail(format!("bandwidth must be positive, got {h}"));
            }
        }
        Ok(())
    }

    fn model_m_bound(&self) -> f64 {
        self.m_bound.unwrap_or(match self.model {
            2 => 25.0,
            3 => 35.0,
            _ => 15.0,
        })
    }

    fn require_input(&self) -> Result<&Path, Error> {
        self.input.as_deref().ok_or_else(|| Error::Config("--input is required".into()))
    }
}

/// Reads a two-column CSV of `(y1, y2)` pairs with an optional `y1,y2` header.
pub fn ingest_csv(path: &Path) -> Result<Dataset, Error> {
    let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    let mut y1 = Vec::new();
    let mut y2 = Vec::new();
    let mut swap = false;
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(Error::Input(format!("line {line}: expected 2 columns, found {}", record.len())));
        }
        if first {
            first = false;
            let is_data = record.iter().all(|f| f.parse::<f64>().is_ok());
            if !is_data {
                let names: Vec<String> = record.iter().map(|f| f.to_ascii_lowercase()).collect();
                match (names[0].as_str(), names[1].as_str()) {
                    ("y1", "y2") => {}
                    ("y2", "y1") => swap = true,
                    _ => {
                        let numeric = record.iter().any(|f| f.parse::<f64>().is_ok());
                        let what = if numeric { "cannot parse row" } else { "expected header y1,y2" };
                        return Err(Error::Input(format!("line {line}: {what}: `{}`", record.iter().collect::<Vec<_>>().join(","))));
                    }
                }
                continue;
            }
        }
        let mut values = [0.0; 2];
        for (slot, field) in values.iter_mut().zip(record.iter()) {
            *slot = field
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("line {line}: cannot parse `{field}` as a number")))?;
            if !slot.is_finite() {
                return Err(Error::Input(format!("line {line}: non-finite value `{field}`")));
            }
        }
        if swap {
            values.swap(0, 1);
        }
        y1.push(values[0]);
        y2.push(values[1]);
    }
    if y1.len() < 2 {
        return Err(Error::Input(format!("{}: need at least 2 observations, found {}", path.display(), y1.len())));
    }
    Ok(Dataset::new(y1, y2)?)
}

/// `[mean(Y1) - 2 sqrt(Cov(Y1, Y2)), mean(Y1) + 2 sqrt(Cov(Y1, Y2))]`.
pub fn default_interval(data: &Dataset) -> Result<(f64, f64), Error> {
    let n = data.len() as f64;
    let m1 = data.y1().iter().sum::<f64>() / n;
    let m2 = data.y2().iter().sum::<f64>() / n;
    let cov = data.pairs().map(|(a, b)| (a - m1) * (b - m2)).sum::<f64>() / n;
    if !(cov > 0.0) {
        return Err(Error::Input(format!(
            "Cov(y1, y2) = {cov} is not positive; pass --interval explicitly"
        )));
    }
    Ok((m1 - 2.0 * cov.sqrt(), m1 + 2.0 * cov.sqrt()))
}

/// One evaluation point of a band with its run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRecord {
    pub schema_version: u32,
    pub x: f64,
    pub lower: f64,
    pub upper: f64,
    pub eta: f64,
    pub q: usize,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub alpha: f64,
    pub n: usize,
    pub seed: u64,
    pub critical_mode: CriticalMode,
    pub critical_value: f64,
    pub bootstrap_reps: Option<usize>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub schema_version: u32,
    pub x: f64,
    pub f_hat: f64,
    pub h: f64,
    pub n: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub y1: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub schema_version: u32,
    pub model: String,
    pub target: String,
    pub n: usize,
    pub q: usize,
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub critical_mode: CriticalMode,
    pub reps: usize,
    pub seed: u64,
    pub coverage: f64,
    pub average_length: f64,
    pub bias: f64,
    pub stochastic_length: f64,
    pub infeasible: usize,
    pub version: String,
}

impl From<&CoverageReport> for CoverageRecord {
    fn from(r: &CoverageReport) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: r.model.clone(),
            target: r.target.clone(),
            n: r.n,
            q: r.q,
            m_bound: r.m_bound,
            critical_mode: r.critical,
            reps: r.reps,
            seed: r.seed,
            coverage: r.coverage,
            average_length: r.average_length,
            bias: r.bias,
            stochastic_length: r.stochastic_length,
            infeasible: r.infeasible,
            version: VERSION.to_string(),
        }
    }
}

/// Serializes `records` in the requested format.
pub fn encode<T: Serialize>(records: &[T], format: Format) -> Result<Vec<u8>, Error> {
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(records).map_err(|e| Error::Io(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in records {
                w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
            }
            w.into_inner().map_err(|e| Error::Io(e.to_string()))
        }
    }
}

/// Inverse of [`encode`].
pub fn decode<T: for<'de> Deserialize<'de>>(bytes: &[u8], format: Format) -> Result<Vec<T>, Error> {
    match format {
        Format::Json => serde_json::from_slice(bytes).map_err(|e| Error::Input(e.to_string())),
        Format::Csv => csv::Reader::from_reader(bytes)
            .deserialize()
            .collect::<Result<Vec<T>, _>>()
            .map_err(|e| Error::Input(e.to_string())),
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run never leaves a partial file.
fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), Error> {
    let io = |e: std::io::Error| Error::Io(e.to_string());
    match path {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).map_err(io)?;
            out.flush().map_err(io)
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
            tmp.write_all(bytes).map_err(io)?;
            tmp.as_file().sync_all().map_err(io)?;
            tmp.persist(path).map_err(|e| io(e.error))?;
            Ok(())
        }
    }
}

pub fn cmd_band(config: &RunConfig) -> Result<Vec<BandRecord>, Error> {
    let data = ingest_csv(config.require_input()?)?;
    let interval = match config.interval {
        Some(i) => i,
        None => default_interval(&data)?,
    };
    let bootstrap_reps = config.reps.unwrap_or(BOOTSTRAP_CHECK_REPS);
    let settings = BandSettings {
        q: config.q,
        m_bound: config.m_bound.unwrap_or(15.0),
        t_bound: config.t_bound,
        frequencies: config.frequencies,
        alpha: config.alpha,
        interval,
        x_points: config.x_points,
        critical: config.critical,
        bootstrap_reps,
        seed: config.seed,
        ..BandSettings::default()
    };
    let run = run_band(&data, &settings, &[])?;
    if !run.band.feasible {
        return Err(SolveError::Infeasible.into());
    }
    let band = &run.band;
    Ok(band
        .x
        .iter()
        .enumerate()
        .map(|(k, &x)| BandRecord {
            schema_version: SCHEMA_VERSION,
            x,
            lower: band.lower[k],
            upper: band.upper[k],
            eta: band.eta,
            q: settings.q,
            m_bound: settings.m_bound,
            alpha: settings.alpha,
            n: data.len(),
            seed: settings.seed,
            critical_mode: settings.critical,
            critical_value: run.critical_value,
            bootstrap_reps: (settings.critical == CriticalMode::Bootstrap).then_some(bootstrap_reps),
            version: VERSION.to_string(),
        })
        .collect())
}

pub fn cmd_estimate(config: &RunConfig) -> Result<Vec<DensityRecord>, Error> {
    let data = ingest_csv(config.require_input()?)?;
    let interval = match config.interval {
        Some(i) => i,
        None => default_interval(&data)?,
    };
    let estimate = estimate_charfn(&data, 10.0, 2001)?;
    let h = match config.bandwidth {
        Some(h) => h,
        None => amise_bandwidth(&estimate, data.len(), normal_reference_roughness(&data)?, &default_h_grid())?,
    };
    let xs = linspace(interval.0, interval.1, config.x_points);
    let density = estimate_density(&estimate, h, &xs)?;
    Ok(density
        .x_grid
        .iter()
        .zip(&density.f_hat)
        .map(|(&x, &f)| DensityRecord {
            schema_version: SCHEMA_VERSION,
            x,
            f_hat: f,
            h,
            n: data.len(),
            version: VERSION.to_string(),
        })
        .collect())
}

pub fn cmd_simulate(config: &RunConfig) -> Result<Vec<SampleRecord>, Error> {
    let n = config.n.ok_or_else(|| Error::Config("--n is required".into()))?;
    if n < 1 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let model = SimulationModel::numbered(config.model).expect("validated");
    let data = draw_sample(&model, n, config.seed)?;
    Ok(data.pairs().map(|(y1, y2)| SampleRecord { y1, y2 }).collect())
}

pub fn cmd_coverage(config: &RunConfig) -> Result<Vec<CoverageRecord>, Error> {
    let mut experiment = ExperimentConfig::study(config.model, config.q, config.n.unwrap_or(1000), config.reps.unwrap_or(200), config.seed)?;
    experiment.m_bound = config.model_m_bound();
    experiment.t_bound = config.t_bound;
    experiment.frequencies = config.frequencies;
    experiment.alpha = config.alpha;
    experiment.x_points = config.x_points;
    experiment.critical = config.critical;
    let target = match config.shift {
        Some(s) => CoverageTarget::Alternative(experiment.model.shifted(s)),
        None => CoverageTarget::Truth,
    };
    let reports = run_coverage_multi(&experiment, &[target])?;
    Ok(reports.iter().map(CoverageRecord::from).collect())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Solve(SolveError::Infeasible) => EXIT_INFEASIBLE,
        Error::Io(_) => EXIT_FAILURE,
        _ => EXIT_INPUT,
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    let (flags, kind) = match command {
        Command::Band(f) => (f, 0),
        Command::Estimate(f) => (f, 1),
        Command::Simulate(f) => (f, 2),
        Command::Coverage(f) => (f, 3),
    };
    let config = RunConfig::resolve(flags)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = config.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| Error::Config(e.to_string()))?
    };
    let bytes = pool.install(|| match kind {
        0 => encode(&cmd_band(&config)?, config.format),
        1 => encode(&cmd_estimate(&config)?, config.format),
        2 => encode(&cmd_simulate(&config)?, config.format),
        _ => encode(&cmd_coverage(&config)?, config.format),
    })?;
    write_output(config.output.as_deref(), &bytes)
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("kband: {e}");
            exit_code(&e)
        }
    }
}
