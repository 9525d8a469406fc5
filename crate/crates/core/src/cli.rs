//! Command-line front end: `band`, `simulate` and `selftest`.
//!
//! Exit codes: 0 success, 1 selftest failure, 2 bad input or I/O error,
//! 3 too few samples, 4 band written but some pointwise bound unusable.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::band::{compute_band, BandMode, ConfidenceBand};
use crate::ccp::{CcpConfig, InitStrategy};
use crate::error::Error;
use crate::selftest;
use crate::simulate::{format_table, run_study, Dist, StudySpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_TOO_FEW: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "lcband", version, about = "Confidence bands for log-concave densities")]
pub struct Cli {
    /// Worker threads (defaults to all cores); results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a band from a file with one sample per line.
    Band(BandArgs),
    /// Run a coverage and width study.
    Simulate(SimulateArgs),
    /// Run the oracle suites and print one line per suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Data,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Guaranteed,
    Interpolated,
}

impl From<ModeArg> for BandMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Guaranteed => BandMode::Guaranteed,
            ModeArg::Interpolated => BandMode::Interpolated,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistArg {
    Gaussian,
    Uniform,
    Chisq,
    Gamma,
    All,
}

#[derive(Debug, Args)]
pub struct CcpArgs {
    #[arg(long, default_value_t = CcpConfig::default().tau0)]
    pub tau0: f64,
    #[arg(long, default_value_t = CcpConfig::default().kappa)]
    pub kappa: f64,
    #[arg(long = "tau-max", default_value_t = CcpConfig::default().tau_max)]
    pub tau_max: f64,
    #[arg(long, default_value_t = CcpConfig::default().k_max)]
    pub kmax: usize,
    #[arg(long, value_enum, default_value = "data")]
    pub init: InitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl CcpArgs {
    fn config(&self) -> CcpConfig {
        CcpConfig {
            tau0: self.tau0,
            kappa: self.kappa,
            tau_max: self.tau_max,
            k_max: self.kmax,
            init: match self.init {
                InitArg::Data => InitStrategy::Data,
                InitArg::Random => InitStrategy::Random,
            },
            seed: self.seed,
            ..CcpConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct BandArgs {
    /// Text file with one sample per line; `#` starts a comment.
    pub input: PathBuf,
    /// Band JSON path; the CSV is written next to it with extension `csv`.
    #[arg(long, default_value = "band.json")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long = "subset-frac", default_value_t = 1.0)]
    pub subset_frac: f64,
    #[arg(long, value_enum, default_value = "guaranteed")]
    pub mode: ModeArg,
    /// Number of CSV evaluation points.
    #[arg(long, default_value_t = 1000)]
    pub grid: usize,
    #[command(flatten)]
    pub ccp: CcpArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub dist: DistArg,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long = "subset-frac", default_value_t = 0.3)]
    pub subset_frac: f64,
    #[arg(long, value_enum, default_value = "interpolated")]
    pub mode: ModeArg,
    /// Coverage grid size over the data range.
    #[arg(long, default_value_t = 10_000)]
    pub grid: usize,
    /// Report JSON path; the text table is written next to it with extension `txt`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub ccp: CcpArgs,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses one sample per line, skipping blank lines and `#` comments.
pub fn parse_samples(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ => return Err(format!("line {}: cannot parse {line:?} as a finite number", i + 1)),
        }
    }
    Ok(out)
}

/// `count` evenly spaced points over the knot range widened by 10% on each side.
pub fn eval_grid(band: &ConfidenceBand, count: usize) -> Vec<f64> {
    let (a, z) = (band.knots[0], band.knots[band.m() - 1]);
    let pad = 0.1 * (z - a);
    let (lo, hi) = (a - pad, z + pad);
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count).map(|j| lo + (hi - lo) * j as f64 / (count - 1) as f64).collect()
}

/// `(lower_density, upper_density, lower_log, upper_log)` at `x`.
pub fn eval_row(band: &ConfidenceBand, x: f64) -> [f64; 4] {
    let (lo, hi) = band.eval_density_band(x);
    let upper_log = match band.mode {
        BandMode::Guaranteed => band.eval_upper(x),
        BandMode::Interpolated => hi.ln(),
    };
    [lo, hi, band.eval_lower(x), upper_log]
}

pub fn band_csv(band: &ConfidenceBand, count: usize) -> String {
    let mut out = String::from("x,lower_density,upper_density,lower_log,upper_log\n");
    for x in eval_grid(band, count) {
        let [a, b, c, d] = eval_row(band, x);
        let _ = writeln!(out, "{x},{a},{b},{c},{d}");
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), i32> {
    std::fs::write(path, text).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        EXIT_INPUT
    })
}

fn cmd_band(args: &BandArgs) -> Result<i32, i32> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", args.input.display());
        EXIT_INPUT
    })?;
    let samples = parse_samples(&text).map_err(|msg| {
        eprintln!("error: {}: {msg}", args.input.display());
        EXIT_INPUT
    })?;
    if args.grid < 1 {
        eprintln!("error: --grid must be at least 1");
        return Err(EXIT_INPUT);
    }
    let (band, intervals) =
        match compute_band(&samples, args.alpha, args.subset_frac, &args.ccp.config(), args.mode.into()) {
            Ok(r) => r,
            Err(e @ Error::TooFewSamples { .. }) => {
                eprintln!("error: {e}");
                return Err(EXIT_TOO_FEW);
            }
            Err(e) => {
                eprintln!("error: {e}");
                return Err(EXIT_INPUT);
            }
        };
    write(&args.output, &band.to_json())?;
    write(&args.output.with_extension("csv"), &band_csv(&band, args.grid))?;
    println!(
        "n = {}, {} knots, {} of {} pointwise bounds unusable; wrote {}",
        band.n,
        band.m(),
        intervals.num_unusable(),
        2 * band.m(),
        args.output.display()
    );
    if band.partial {
        eprintln!("warning: band is partial; unusable bounds were replaced by infinite values");
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32, i32> {
    let dists: Vec<Dist> = match args.dist {
        DistArg::Gaussian => vec![Dist::Gaussian],
        DistArg::Uniform => vec![Dist::Uniform],
        DistArg::Chisq => vec![Dist::Chisq],
        DistArg::Gamma => vec![Dist::Gamma],
        DistArg::All => Dist::ALL.to_vec(),
    };
    let mut reports = Vec::new();
    for distribution in dists {
        let spec = StudySpec {
            distribution,
            n: args.n,
            reps: args.reps,
            alpha: args.alpha,
            subset_frac: args.subset_frac,
            seed: args.ccp.seed,
            grid_points: args.grid,
            mode: args.mode.into(),
            ccp: args.ccp.config(),
        };
        reports.push(run_study(&spec).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_INPUT
        })?);
    }
    let table = format_table(&reports);
    print!("{table}");
    if let Some(path) = &args.output {
        write(path, &serde_json::to_string_pretty(&reports).expect("reports serialize"))?;
        write(&path.with_extension("txt"), &table)?;
    }
    Ok(EXIT_OK)
}

fn cmd_selftest(args: &SelftestArgs) -> i32 {
    let reports = selftest::run_all(args.seed);
    for r in &reports {
        println!("{}", r.line());
        if let Some(f) = &r.first_failure {
            println!("    first failure: {f}");
        }
    }
    if reports.iter().all(|r| r.passed()) {
        EXIT_OK
    } else {
        EXIT_SELFTEST
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
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
    let go = || match &cli.command {
        Command::Band(a) => cmd_band(a).unwrap_or_else(|c| c),
        Command::Simulate(a) => cmd_simulate(a).unwrap_or_else(|c| c),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                eprintln!("error: cannot start {t} threads: {e}");
                EXIT_INPUT
            }
        },
        None => go(),
    }
}
