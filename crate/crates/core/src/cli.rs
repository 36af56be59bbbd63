//! `invivo` command-line front end.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::dataset::{
    average_over_regions_linear, export_csv, filter_by_return_loss, generate_synthetic_grid, ingest_csv,
    variance_by_depth, Coverage, DatasetError, PathLossDataset, SyntheticConfig, DEFAULT_RETURN_LOSS_THRESHOLD_DB,
    DEFAULT_SIGMA_M,
};
use crate::fitting::{fit_ols, fit_gd, DepthSample, FitError, FitResult, GradientDescent, ModelKind};
use crate::link_budget::{
    max_reliable_depth_for, outage_probability, received_power, BudgetError, DepthReport, LinkBudgetSpec,
    OutageMethod, OutageReport,
};
use crate::model::{lookup_params, parameter_table, BodyArea, Extrapolation, FieldZone, ModelError};
use crate::multipath::{
    pdp_csv_string, read_pdp_csv, synthesize_pdp, MultipathError, PdpConfig, PowerDelayProfile,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{kind}: {message}")]
    Domain { kind: &'static str, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Domain { .. } | CliError::Io(_) => EXIT_DOMAIN,
        }
    }

    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

macro_rules! domain_error {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Domain { kind: e.kind(), message: e.to_string() }
            }
        }
    )*};
}

domain_error!(ModelError, FitError, DatasetError, BudgetError, MultipathError);

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "invivo", version, about = "In vivo implant channel model: path loss, fitting, grid analysis, link budgets")]
pub struct Cli {
    /// Output format
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Seed for every random draw; required whenever a command samples
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write results here instead of standard output
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the embedded path-loss parameter table
    Table,
    /// Mean (or sampled) path loss at a depth
    Pl(PlArgs),
    /// Fit depth models to a dataset CSV
    Fit(FitArgs),
    /// Write a seeded synthetic measurement grid
    Generate(GenerateArgs),
    /// Per-angle averages or per-depth variance of a dataset
    Analyze(AnalyzeArgs),
    /// Received power, outage, or deepest reliable implant position
    Budget(BudgetArgs),
    /// Synthesize or summarize a power delay profile
    Pdp(PdpArgs),
}

#[derive(Debug, Args)]
pub struct PlArgs {
    #[arg(value_parser = parse_area)]
    pub area: BodyArea,
    #[arg(value_parser = parse_zone)]
    pub zone: FieldZone,
    /// Implant depth, mm
    pub depth: f64,
    /// Draw this many shadowed samples instead of the mean
    #[arg(long)]
    pub sample: Option<usize>,
    /// Allow depths beyond 100 mm
    #[arg(long)]
    pub extrapolate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Linear,
    Log,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Ols,
    Gd,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    pub model: ModelChoice,
    #[arg(long, value_enum, default_value = "ols")]
    pub solver: Solver,
    /// Only fit this region
    #[arg(long, value_parser = parse_area)]
    pub region: Option<BodyArea>,
    /// Only fit this zone
    #[arg(long, value_parser = parse_zone)]
    pub zone: Option<FieldZone>,
    /// Discard records whose return loss exceeds this, dB
    #[arg(long, default_value_t = DEFAULT_RETURN_LOSS_THRESHOLD_DB, allow_hyphen_values = true)]
    pub return_loss_threshold: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: u64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Write scatter points and fitted lines as CSV
    #[arg(long)]
    pub emit_plotdata: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output CSV (defaults to --output or standard output)
    pub out: Option<PathBuf>,
    /// Spread of the per-angle decay rate
    #[arg(long, default_value_t = DEFAULT_SIGMA_M)]
    pub sigma_m: f64,
    /// Force every shadowing deviation to zero
    #[arg(long)]
    pub no_shadowing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Report {
    Angles,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CoverageArg {
    All,
    Any,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub report: Report,
    /// `all`: every region must be present in every cell
    #[arg(long, value_enum, default_value = "all")]
    pub coverage: CoverageArg,
    #[arg(long, default_value_t = DEFAULT_RETURN_LOSS_THRESHOLD_DB, allow_hyphen_values = true)]
    pub return_loss_threshold: f64,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long, value_parser = parse_area)]
    pub area: BodyArea,
    #[arg(long, value_parser = parse_zone)]
    pub zone: FieldZone,
    /// Largest tolerable path loss, dB (instead of a full link description)
    #[arg(long, conflicts_with_all = ["tx_power", "tx_gain", "rx_gain", "sensitivity", "margin"], allow_hyphen_values = true)]
    pub plmax: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tx_power: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tx_gain: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rx_gain: Option<f64>,
    /// Receiver sensitivity, dBm
    #[arg(long, allow_hyphen_values = true)]
    pub sensitivity: Option<f64>,
    /// Required margin above sensitivity, dB
    #[arg(long)]
    pub margin: Option<f64>,
    /// Ceiling on transmit power, dBm
    #[arg(long, allow_hyphen_values = true)]
    pub tx_cap: Option<f64>,
    /// Evaluate received power and outage at this depth instead of solving for depth
    #[arg(long)]
    pub depth: Option<f64>,
    /// Outage target for the depth solve; without it shadowing is ignored
    #[arg(long)]
    pub target_outage: Option<f64>,
    /// Also estimate outage by Monte Carlo with this many draws (needs --seed)
    #[arg(long)]
    pub mc_samples: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PdpArgs {
    /// anterior, posterior, left-lateral, right-lateral (or `lateral`)
    #[arg(long, value_parser = parse_direction, required_unless_present = "input")]
    pub direction: Option<BodyArea>,
    /// Summarize instead of printing taps
    #[arg(long)]
    pub stats: bool,
    /// Read the profile from a CSV file instead of synthesizing it
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Decay constant, ns
    #[arg(long)]
    pub decay: Option<f64>,
    /// Dynamic range floor, dB
    #[arg(long)]
    pub floor: Option<f64>,
    /// Per-tap fading deviation, dB (needs --seed when > 0)
    #[arg(long)]
    pub sigma_tap: Option<f64>,
    #[arg(long)]
    pub max_taps: Option<usize>,
}

fn parse_area(s: &str) -> Result<BodyArea, String> {
    s.parse().map_err(|e: ModelError| e.to_string())
}

fn parse_zone(s: &str) -> Result<FieldZone, String> {
    s.parse().map_err(|e: ModelError| e.to_string())
}

fn parse_direction(s: &str) -> Result<BodyArea, String> {
    if s.eq_ignore_ascii_case("lateral") {
        return Ok(BodyArea::LeftLateral);
    }
    let area = parse_area(s)?;
    if area.is_side() {
        Ok(area)
    } else {
        Err(format!("{area} is not a side; use anterior, posterior, left-lateral or right-lateral"))
    }
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = write!(sink, "{rendered}");
            return code;
        }
    };
    match execute(&cli) {
        Ok(text) => match emit(cli.output.as_deref(), &text, stdout) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(stderr, "error: {}", CliError::from(e));
                EXIT_DOMAIN
            }
        },
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> io::Result<()> {
    match path {
        Some(path) => File::create(path)?.write_all(text.as_bytes()),
        None => stdout.write_all(text.as_bytes()),
    }
}

/// Runs the parsed command and returns what should be written out.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Table => Ok(cmd_table(cli.format.unwrap_or(Format::Text))),
        Command::Pl(args) => cmd_pl(cli, args),
        Command::Fit(args) => cmd_fit(cli, args),
        Command::Generate(args) => cmd_generate(cli, args),
        Command::Analyze(args) => cmd_analyze(cli, args),
        Command::Budget(args) => cmd_budget(cli, args),
        Command::Pdp(args) => cmd_pdp(cli, args),
    }
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results always serialize");
    s.push('\n');
    s
}

pub fn cmd_table(format: Format) -> String {
    let rows = parameter_table();
    let mut out = String::new();
    match format {
        Format::Json => return to_json(&rows),
        Format::Csv => {
            out.push_str("area,zone,pl0_db,m,sigma_db\n");
            for r in &rows {
                writeln!(out, "{},{},{:.2},{:.2},{:.2}", r.area, r.zone, r.pl0_db, r.m, r.sigma_db).unwrap();
            }
        }
        Format::Text => {
            writeln!(out, "{:<14} {:<4} {:>8} {:>6} {:>10}", "area", "zone", "PL0[dB]", "m", "sigma[dB]").unwrap();
            for r in &rows {
                writeln!(
                    out,
                    "{:<14} {:<4} {:>8.2} {:>6.2} {:>10.2}",
                    r.area.name(),
                    r.zone.name(),
                    r.pl0_db,
                    r.m,
                    r.sigma_db
                )
                .unwrap();
            }
        }
    }
    out
}

fn require_seed(cli: &Cli, what: &str) -> Result<u64, CliError> {
    cli.seed
        .ok_or_else(|| CliError::usage(format!("{what} draws random numbers; pass --seed <u64>")))
}

fn cmd_pl(cli: &Cli, args: &PlArgs) -> Result<String, CliError> {
    let params = lookup_params(args.area, args.zone);
    let extrapolation = if args.extrapolate {
        Extrapolation::Allow
    } else {
        Extrapolation::Forbid
    };
    let format = cli.format.unwrap_or(Format::Text);
    let mean = params.mean_db(args.depth, extrapolation)?;
    let Some(n) = args.sample else {
        return Ok(match format {
            Format::Text => format!("{mean:.4}\n"),
            Format::Csv => format!("depth_mm,path_loss_db\n{},{mean:.4}\n", args.depth),
            Format::Json => to_json(&json!({
                "area": args.area,
                "zone": args.zone,
                "depth_mm": args.depth,
                "mean_path_loss_db": mean,
            })),
        });
    };
    let seed = require_seed(cli, "--sample")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = (0..n)
        .map(|_| params.sample_db(args.depth, extrapolation, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = String::new();
    match format {
        Format::Text => draws.iter().for_each(|v| writeln!(out, "{v:.4}").unwrap()),
        Format::Csv => {
            out.push_str("depth_mm,path_loss_db\n");
            draws.iter().for_each(|v| writeln!(out, "{},{v:.4}", args.depth).unwrap());
        }
        Format::Json => {
            out = to_json(&json!({
                "area": args.area,
                "zone": args.zone,
                "depth_mm": args.depth,
                "mean_path_loss_db": mean,
                "seed": seed,
                "samples": draws,
            }))
        }
    }
    Ok(out)
}

fn read_input(path: &Path) -> Result<PathLossDataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::Domain {
        kind: "IoError",
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(ingest_csv(BufReader::new(file))?)
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<String, CliError> {
    if args.solver == Solver::Gd {
        // validated here so a bad flag is a usage error, not a fit failure
        if !(args.lr > 0.0) || !args.lr.is_finite() {
            return Err(CliError::usage(format!("--lr must be > 0, got {}", args.lr)));
        }
    }
    let ds = filter_by_return_loss(&read_input(&args.input)?, args.return_loss_threshold);
    let samples = ds.depth_samples(args.region, args.zone);
    let kinds: &[ModelKind] = match args.model {
        ModelChoice::Linear => &[ModelKind::Linear],
        ModelChoice::Log => &[ModelKind::LogDistance],
        ModelChoice::Both => &[ModelKind::Linear, ModelKind::LogDistance],
    };
    let settings = GradientDescent {
        lr: args.lr,
        max_iters: args.max_iters,
        tol: args.tol,
    };
    let mut fits = kinds
        .iter()
        .map(|&kind| match args.solver {
            Solver::Ols => fit_ols(&samples, kind),
            Solver::Gd => fit_gd(&samples, kind, settings),
        })
        .collect::<Result<Vec<_>, _>>()?;
    // stable sort keeps Linear first on an exact tie
    fits.sort_by(|a, b| a.mse_db2.total_cmp(&b.mse_db2));

    if let Some(path) = &args.emit_plotdata {
        let mut file = File::create(path)?;
        file.write_all(plot_data(&samples, &fits).as_bytes())?;
    }

    Ok(match cli.format.unwrap_or(Format::Json) {
        Format::Json if fits.len() == 1 => to_json(&fits[0]),
        Format::Json => to_json(&fits),
        Format::Csv => {
            let mut out = String::from("model_kind,intercept_db,slope,sigma_db,mse_db2,n_samples,iterations\n");
            for f in &fits {
                let iters = f.iterations.map(|i| i.to_string()).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{},{},{iters}",
                    f.model_kind, f.intercept_db, f.slope, f.sigma_db, f.mse_db2, f.n_samples
                )
                .unwrap();
            }
            out
        }
        Format::Text => {
            let mut out = String::new();
            for f in &fits {
                writeln!(
                    out,
                    "{}: PL0 = {:.4} dB, slope = {:.4}, sigma = {:.4} dB, mse = {:.6} dB^2, n = {}",
                    f.model_kind, f.intercept_db, f.slope, f.sigma_db, f.mse_db2, f.n_samples
                )
                .unwrap();
            }
            out
        }
    })
}

/// Scatter rows followed by each fitted line on a 1 mm grid over the sample range.
fn plot_data(samples: &[DepthSample], fits: &[FitResult]) -> String {
    let mut out = String::from("series,depth_mm,path_loss_db\n");
    for s in samples {
        writeln!(out, "sample,{},{:.4}", s.depth_mm, s.path_loss_db).unwrap();
    }
    let lo = samples.iter().map(|s| s.depth_mm).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.depth_mm).fold(f64::NEG_INFINITY, f64::max);
    let steps = (hi - lo).ceil() as usize;
    for f in fits {
        for k in 0..=steps {
            let d = (lo + k as f64).min(hi);
            writeln!(out, "{},{},{:.4}", f.model_kind, d, f.predict(d)).unwrap();
        }
    }
    out
}

fn cmd_generate(cli: &Cli, args: &GenerateArgs) -> Result<String, CliError> {
    let seed = require_seed(cli, "generate")?;
    if !(args.sigma_m >= 0.0) {
        return Err(CliError::usage(format!("--sigma-m must be >= 0, got {}", args.sigma_m)));
    }
    let mut config = SyntheticConfig::default().with_sigma_m(args.sigma_m);
    if args.no_shadowing {
        config = config.without_shadowing();
    }
    let ds = generate_synthetic_grid(&config, seed)?;
    let mut buf = Vec::new();
    export_csv(&ds, &mut buf)?;
    let text = String::from_utf8(buf).expect("CSV output is ASCII");
    match &args.out {
        Some(path) => {
            File::create(path)?.write_all(text.as_bytes())?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<String, CliError> {
    let ds = filter_by_return_loss(&read_input(&args.input)?, args.return_loss_threshold);
    let json = cli.format == Some(Format::Json);
    let mut out = String::new();
    match args.report {
        Report::Angles => {
            let coverage = match args.coverage {
                CoverageArg::All => Coverage::AllRegions,
                CoverageArg::Any => Coverage::AnyRegion,
            };
            let mut rows = Vec::new();
            for zone in ds.zones() {
                for (cell, pl) in average_over_regions_linear(&ds, zone, coverage)? {
                    rows.push((zone, cell.angle.degrees(), cell.depth_mm.0, pl));
                }
            }
            if json {
                let v: Vec<_> = rows
                    .iter()
                    .map(|(zone, angle, depth, pl)| {
                        json!({"zone": zone, "angle_deg": angle, "depth_mm": depth, "path_loss_db": pl})
                    })
                    .collect();
                return Ok(to_json(&v));
            }
            out.push_str("zone,angle_deg,depth_mm,path_loss_db\n");
            for (zone, angle, depth, pl) in rows {
                writeln!(out, "{zone},{angle:.1},{depth},{pl:.4}").unwrap();
            }
        }
        Report::Variance => {
            let mut rows = Vec::new();
            for (region, zone) in ds.region_zones() {
                for (depth, var) in variance_by_depth(&ds, region, zone)? {
                    rows.push((region, zone, depth.0, var));
                }
            }
            if json {
                let v: Vec<_> = rows
                    .iter()
                    .map(|(region, zone, depth, var)| {
                        json!({"region": region, "zone": zone, "depth_mm": depth, "variance_db2": var})
                    })
                    .collect();
                return Ok(to_json(&v));
            }
            out.push_str("region,zone,depth_mm,variance_db2\n");
            for (region, zone, depth, var) in rows {
                writeln!(out, "{region},{zone},{depth},{var:.4}").unwrap();
            }
        }
    }
    Ok(out)
}

fn budget_spec(args: &BudgetArgs) -> Result<LinkBudgetSpec, CliError> {
    let spec = match (args.plmax, args.sensitivity) {
        (Some(plmax), _) => LinkBudgetSpec::from_path_loss_budget(plmax)?,
        (None, Some(sensitivity)) => LinkBudgetSpec::new(
            args.tx_power.unwrap_or(0.0),
            args.tx_gain.unwrap_or(0.0),
            args.rx_gain.unwrap_or(0.0),
            sensitivity,
            args.margin.unwrap_or(0.0),
        )?,
        (None, None) => return Err(CliError::usage("budget needs --plmax or --sensitivity")),
    };
    Ok(match args.tx_cap {
        Some(cap) => spec.with_tx_power_cap(cap)?,
        None => spec,
    })
}

fn cmd_budget(cli: &Cli, args: &BudgetArgs) -> Result<String, CliError> {
    let spec = budget_spec(args)?;
    let format = cli.format.unwrap_or(Format::Text);
    if let Some(p) = args.target_outage {
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::usage(format!("--target-outage must lie in (0, 1), got {p}")));
        }
    }
    if let Some(depth) = args.depth {
        let params = lookup_params(args.area, args.zone);
        let mean = params.mean_db(depth, Extrapolation::Forbid)?;
        let rx = received_power(&spec, mean);
        let analytic = outage_probability(&spec, args.area, args.zone, depth, OutageMethod::Analytic)?;
        let mut reports = vec![OutageReport {
            outage: analytic,
            area: args.area,
            zone: args.zone,
            depth_mm: depth,
            method: OutageMethod::Analytic,
            spec,
        }];
        if let Some(samples) = args.mc_samples {
            let seed = require_seed(cli, "--mc-samples")?;
            let method = OutageMethod::MonteCarlo { samples, seed };
            reports.push(OutageReport {
                outage: outage_probability(&spec, args.area, args.zone, depth, method)?,
                method,
                ..reports[0].clone()
            });
        }
        return Ok(match format {
            Format::Json => to_json(&json!({
                "received_power_dbm": rx,
                "path_loss_db": mean,
                "outage": reports,
            })),
            Format::Csv => {
                let mut out = String::from("area,zone,depth_mm,path_loss_db,received_power_dbm,method,outage\n");
                for r in &reports {
                    let method = match r.method {
                        OutageMethod::Analytic => "analytic",
                        OutageMethod::MonteCarlo { .. } => "monte-carlo",
                    };
                    writeln!(out, "{},{},{depth},{mean:.4},{rx:.4},{method},{}", args.area, args.zone, r.outage).unwrap();
                }
                out
            }
            Format::Text => {
                let mut out = format!("path_loss_db {mean:.4}\nreceived_power_dbm {rx:.4}\n");
                for r in &reports {
                    match r.method {
                        OutageMethod::Analytic => writeln!(out, "outage_analytic {:.6}", r.outage).unwrap(),
                        OutageMethod::MonteCarlo { samples, .. } => {
                            writeln!(out, "outage_monte_carlo {:.6} (n = {samples})", r.outage).unwrap()
                        }
                    }
                }
                out
            }
        });
    }

    let params = lookup_params(args.area, args.zone);
    let (params, target) = match args.target_outage {
        Some(p) => (params, p),
        // without shadowing any target in (0, 1) gives the same depth
        None => (params.without_shadowing(), 0.5),
    };
    let limit = max_reliable_depth_for(&spec, params, target)?;
    let report = DepthReport {
        max_depth_mm: limit.max_depth_mm,
        saturated: limit.saturated,
        area: args.area,
        zone: args.zone,
        target_outage: args.target_outage,
        spec,
    };
    Ok(match format {
        Format::Json => to_json(&report),
        Format::Csv => format!(
            "area,zone,max_depth_mm,saturated\n{},{},{},{}\n",
            report.area, report.zone, report.max_depth_mm, report.saturated
        ),
        Format::Text => format!(
            "{:.1} mm{}\n",
            report.max_depth_mm,
            if report.saturated { " (saturated)" } else { "" }
        ),
    })
}

fn cmd_pdp(cli: &Cli, args: &PdpArgs) -> Result<String, CliError> {
    let pdp = match &args.input {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::Domain {
                kind: "IoError",
                message: format!("{}: {e}", path.display()),
            })?;
            read_pdp_csv(BufReader::new(file))?
        }
        None => synthesize_from_args(cli, args)?,
    };
    let format = cli.format.unwrap_or(Format::Text);
    if !args.stats {
        return Ok(match format {
            Format::Json => to_json(&pdp),
            _ => pdp_csv_string(&pdp),
        });
    }
    let stats = pdp.stats();
    Ok(match format {
        Format::Json => to_json(&json!({
            "direction": pdp.direction(),
            "taps": pdp.taps().len(),
            "mean_excess_delay_ns": stats.mean_excess_delay_ns,
            "rms_delay_spread_ns": stats.rms_delay_spread_ns,
            "total_power_db": stats.total_power_db,
        })),
        Format::Csv => format!(
            "direction,taps,mean_excess_delay_ns,rms_delay_spread_ns,total_power_db\n{},{},{},{},{}\n",
            pdp.direction(),
            pdp.taps().len(),
            stats.mean_excess_delay_ns,
            stats.rms_delay_spread_ns,
            stats.total_power_db
        ),
        Format::Text => format!(
            "direction {}\ntaps {}\nmean_excess_delay_ns {:.6}\nrms_delay_spread_ns {:.6}\ntotal_power_db {:.4}\n",
            pdp.direction(),
            pdp.taps().len(),
            stats.mean_excess_delay_ns,
            stats.rms_delay_spread_ns,
            stats.total_power_db
        ),
    })
}

fn synthesize_from_args(cli: &Cli, args: &PdpArgs) -> Result<PowerDelayProfile, CliError> {
    let direction = args
        .direction
        .ok_or_else(|| CliError::usage("--direction is required without --input"))?;
    let defaults = PdpConfig::default_for(direction)?;
    let config = PdpConfig {
        spacing_ns: args.spacing.unwrap_or(defaults.spacing_ns),
        decay_ns: args.decay.unwrap_or(defaults.decay_ns),
        floor_db: args.floor.unwrap_or(defaults.floor_db),
        sigma_tap_db: args.sigma_tap.unwrap_or(defaults.sigma_tap_db),
        max_taps: args.max_taps.unwrap_or(defaults.max_taps),
    };
    let seed = if config.sigma_tap_db > 0.0 {
        require_seed(cli, "--sigma-tap")?
    } else {
        cli.seed.unwrap_or(0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(synthesize_pdp(direction, &config, &mut rng)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("invivo").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn table_formats() {
        let (code, out, _) = run_args(&["table", "--format", "csv"]);
        assert_eq!(code, 0);
        assert!(out.lines().any(|l| l == "Region2,Near,22.70,1.96,2.38"));
        let (_, text, _) = run_args(&["table"]);
        assert_eq!(text.lines().count(), 19);
        let (code, _, err) = run_args(&["table", "--format", "xml"]);
        assert_eq!(code, 2);
        assert!(err.contains("xml"));
    }

    #[test]
    fn pl_mean_and_errors() {
        let (code, out, _) = run_args(&["pl", "Region1", "near", "10"]);
        assert_eq!(code, 0);
        assert!((out.trim().parse::<f64>().unwrap() - 27.05).abs() < 1e-9);
        let (code, _, err) = run_args(&["pl", "Region1", "near", "5"]);
        assert_eq!(code, 1);
        assert!(err.contains("d >= d0"), "{err}");
        let (code, _, _) = run_args(&["pl", "Region1", "near", "20", "--sample", "3"]);
        assert_eq!(code, 2);
        let (code, out, _) = run_args(&["pl", "Region1", "near", "20", "--sample", "3", "--seed", "4"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 3);
        let (code, _, _) = run_args(&["pl", "Region9", "near", "20"]);
        assert_eq!(code, 2);
        let (code, _, _) = run_args(&["pl", "Region1", "near", "20", "--bogus"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn budget_and_pdp_usage() {
        let (code, out, _) = run_args(&["budget", "--area", "OverallTorso", "--zone", "near", "--plmax", "40"]);
        assert_eq!(code, 0);
        assert_eq!(out.trim(), "72.1 mm");
        let (code, _, _) = run_args(&["budget", "--area", "OverallTorso", "--zone", "near"]);
        assert_eq!(code, 2);
        let (code, _, err) = run_args(&["pdp", "--direction", "Region1"]);
        assert_eq!(code, 2, "{err}");
        let (code, _, _) = run_args(&["pdp", "--direction", "anterior", "--sigma-tap", "1"]);
        assert_eq!(code, 2);
    }
}
