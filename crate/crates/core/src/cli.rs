//! Command-line frontend. The `rcp` binary calls [`main_with_args`].
//!
//! Exit codes: 0 when the command ran (and, for `test`, did not reject),
//! 2 when `test` rejects the null hypothesis, 1 on any error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baselines::{scale_cusum_test, ScaleCusumResult, ScaleEstimator};
use crate::critvals::{lookup_quantile, simulate_bessel_sup_quantile, BridgeEngine, McConfig};
use crate::cusum::{run_test, CriticalSource, Functional, TestConfig, TestOutcome};
use crate::error::{Error, Result};
use crate::longrun::Kernel;
use crate::psi::{parse_threshold, CrossProduct, PsiSpec, PsiVariant};
use crate::series::TimeSeries;
use crate::simlab::{run_experiment, ExperimentConfig, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rcp", version, about = "Robust cusum change-point tests")]
pub struct Cli {
    /// Worker threads for simulations (default: all cores).
    #[arg(long, global = true, env = "RCP_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test a CSV series for a change point and print a JSON report.
    Test(TestArgs),
    /// Print a quantile of the supremum of a squared Bessel bridge.
    Quantile(QuantileArgs),
    /// Write one simulated series as CSV.
    Simulate(SimulateArgs),
    /// Run a size/power experiment described in a TOML file.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Psi,
    Md,
    Gmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FunctionalArg {
    Sup,
    Integral,
    WeightedSup,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV file: one column per component, optional header row.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "psi")]
    pub method: Method,
    /// TOML file with `[psi]` and `[test]` tables; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Transformation variant (e.g. hubervar, huberg, spatialsign).
    #[arg(long)]
    pub psi: Option<String>,
    /// Threshold k (`inf` for the classical statistic).
    #[arg(long, conflicts_with = "chi2_level")]
    pub k: Option<String>,
    /// Threshold as `sqrt` of a chi-square(1) quantile at this level.
    #[arg(long)]
    pub chi2_level: Option<f64>,
    /// Projection direction, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub direction: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub cross_product: Option<CrossProductArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub functional: Option<FunctionalArg>,
    /// Exponent g of the weight (x(1-x))^g for weighted-sup.
    #[arg(long)]
    pub weight_exponent: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Disable the finite-sample correction.
    #[arg(long)]
    pub no_correction: bool,
    /// Always simulate the critical value.
    #[arg(long)]
    pub monte_carlo: bool,
    /// Also report a simulated p-value.
    #[arg(long)]
    pub p_value: bool,
    #[command(flatten)]
    pub mc: McArgs,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CrossProductArg {
    Clamped,
    SquaredClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    FlatTop,
    Bartlett,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    BesselMarkov,
    PartialSums,
}

#[derive(Debug, Default, Args)]
pub struct McArgs {
    #[arg(long)]
    pub mc_grid: Option<usize>,
    #[arg(long)]
    pub mc_reps: Option<usize>,
    #[arg(long)]
    pub mc_seed: Option<u64>,
    /// Do not shift simulated suprema for the grid discretization.
    #[arg(long)]
    pub mc_no_correction: bool,
    #[arg(long, value_enum)]
    pub mc_engine: Option<EngineArg>,
}

impl McArgs {
    fn apply(&self, mut cfg: McConfig) -> McConfig {
        if let Some(v) = self.mc_grid {
            cfg.n_grid = v;
        }
        if let Some(v) = self.mc_reps {
            cfg.n_rep = v;
        }
        if let Some(v) = self.mc_seed {
            cfg.seed = v;
        }
        if self.mc_no_correction {
            cfg.correction = false;
        }
        if let Some(e) = self.mc_engine {
            cfg.engine = match e {
                EngineArg::BesselMarkov => BridgeEngine::BesselMarkov,
                EngineArg::PartialSums => BridgeEngine::PartialSums,
            };
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct QuantileArgs {
    /// Dimension of the transformed series.
    #[arg(short = 's', long)]
    pub dim: usize,
    /// Quantile level, e.g. 0.95.
    #[arg(short = 'a', long)]
    pub level: f64,
    /// Simulate even when the value is tabulated.
    #[arg(long)]
    pub mc: bool,
    #[command(flatten)]
    pub mc_args: McArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML file with a `[generator]` table and an optional `[break]` table.
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replication index within the seed's streams.
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub config: PathBuf,
    /// Output prefix; overrides `output` in the config.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write `<prefix>_plot.csv` with (method, x, rate, mc_se).
    #[arg(long)]
    pub plot_data: bool,
    #[arg(long)]
    pub n_rep: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Optional TOML given with `test --config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFile {
    pub psi: Option<PsiSpec>,
    #[serde(default)]
    pub test: TestConfig,
}

/// Series read from CSV together with the file line of each observation.
#[derive(Debug, Clone)]
pub struct CsvSeries {
    pub series: TimeSeries,
    pub header: Option<Vec<String>>,
    pub lines: Vec<u64>,
}

fn is_number(s: &str) -> bool {
    s.trim().parse::<f64>().is_ok()
}

/// Reads a numeric CSV. A first row with no numeric cell is a header.
pub fn read_csv(path: &Path) -> Result<CsvSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    read_csv_from(file, &path.display().to_string())
}

pub fn read_csv_from<R: std::io::Read>(reader: R, name: &str) -> Result<CsvSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header = None;
    let mut width = None;
    let mut values = Vec::new();
    let mut lines = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("{name}: {e}")))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        if i == 0 && !rec.iter().any(is_number) {
            header = Some(rec.iter().map(str::to_string).collect());
            width = Some(rec.len());
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Input(format!(
                "{name}: line {line}: expected {w} columns, found {}",
                rec.len()
            )));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Input(format!("{name}: line {line}, column {}: '{cell}' is not a number", j + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "{name}: line {line}, column {}: non-finite value '{cell}'",
                    j + 1
                )));
            }
            values.push(v);
        }
        lines.push(line);
    }
    let n = lines.len();
    let Some(p) = width else {
        return Err(Error::Input(format!("{name}: no data rows")));
    };
    if n == 0 {
        return Err(Error::Input(format!("{name}: no data rows")));
    }
    Ok(CsvSeries { series: TimeSeries::from_row_major(&values, n, p)?, header, lines })
}

/// Writes a series as CSV with header `x1..xp`, using the shortest
/// decimal form that reads back to the same `f64`.
pub fn write_csv<W: Write>(x: &TimeSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let head: Vec<String> = (1..=x.dim()).map(|j| format!("x{j}")).collect();
    w.write_record(&head).map_err(|e| Error::Input(e.to_string()))?;
    for i in 0..x.n_obs() {
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct PValueReport {
    pub p: f64,
    pub mc_error: f64,
    pub mode: &'static str,
}

#[derive(Debug, Serialize)]
pub struct TestReport {
    pub schema_version: u32,
    pub input: String,
    pub method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiSpec>,
    pub n_obs: usize,
    pub dim: usize,
    pub statistic: f64,
    pub corrected_statistic: Option<f64>,
    pub statistic_used: f64,
    pub critical_value: f64,
    pub critical_source: &'static str,
    pub alpha: f64,
    pub p_value: Option<PValueReport>,
    pub reject: bool,
    pub change_point_index: usize,
    /// File line holding observation `change_point_index`.
    pub change_point_line: u64,
    pub diagnostics: serde_json::Value,
}

fn psi_report(input: &str, csv: &CsvSeries, spec: &PsiSpec, out: &TestOutcome) -> Result<TestReport> {
    Ok(TestReport {
        schema_version: SCHEMA_VERSION,
        input: input.to_string(),
        method: "psi",
        psi: Some(spec.clone()),
        n_obs: csv.series.n_obs(),
        dim: csv.series.dim(),
        statistic: out.statistic,
        corrected_statistic: out.corrected_statistic,
        statistic_used: out.statistic_used(),
        critical_value: out.critical_value,
        critical_source: match out.critical_source {
            crate::cusum::ValueSource::Table => "table",
            crate::cusum::ValueSource::MonteCarlo => "monte-carlo",
        },
        alpha: out.alpha,
        p_value: out.p_value.map(|p| PValueReport { p: p.p, mc_error: p.mc_error, mode: "monte-carlo" }),
        reject: out.reject,
        change_point_index: out.change_point_index,
        change_point_line: csv.lines[out.change_point_index - 1],
        diagnostics: serde_json::to_value(&out.diagnostics).map_err(|e| Error::Input(e.to_string()))?,
    })
}

fn scale_report(input: &str, csv: &CsvSeries, r: &ScaleCusumResult) -> Result<TestReport> {
    Ok(TestReport {
        schema_version: SCHEMA_VERSION,
        input: input.to_string(),
        method: r.estimator_id.name(),
        psi: None,
        n_obs: csv.series.n_obs(),
        dim: 1,
        statistic: r.uncorrected_statistic,
        corrected_statistic: Some(r.statistic),
        statistic_used: r.statistic,
        critical_value: r.critical_value,
        critical_source: "table",
        alpha: r.alpha,
        p_value: None,
        reject: r.reject,
        change_point_index: r.change_point_index,
        change_point_line: csv.lines[r.change_point_index - 1],
        diagnostics: serde_json::json!({
            "v_hat": r.v_hat,
            "bandwidth": r.bandwidth,
            "kernel": Kernel::FlatTop,
            "scale": "sup-abs",
        }),
    })
}

/// Builds the psi spec and test config from `--config` and flags.
pub fn test_settings(args: &TestArgs, dim: usize) -> Result<(PsiSpec, TestConfig)> {
    let file = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
            toml::from_str::<TestFile>(&text).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?
        }
        None => TestFile::default(),
    };
    let mut spec = match (&args.psi, file.psi) {
        (Some(v), _) => PsiSpec::new(v.parse::<PsiVariant>()?),
        (None, Some(s)) => s,
        (None, None) => PsiSpec::new(if dim == 1 { PsiVariant::HuberVar } else { PsiVariant::HuberCovJoint })
            .with_chi2_level(0.95),
    };
    if let Some(k) = &args.k {
        spec.k = Some(parse_threshold(k)?);
        spec.chi2_level = None;
    }
    if let Some(l) = args.chi2_level {
        spec.chi2_level = Some(l);
        spec.k = None;
    }
    if spec.variant.needs_threshold() && spec.k.is_none() && spec.chi2_level.is_none() {
        spec.chi2_level = Some(0.95);
    }
    if let Some(d) = &args.direction {
        spec.direction = Some(d.clone());
    }
    if let Some(c) = args.cross_product {
        spec.cross_product = match c {
            CrossProductArg::Clamped => CrossProduct::Clamped,
            CrossProductArg::SquaredClamped => CrossProduct::SquaredClamped,
        };
    }

    let mut cfg = file.test;
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(f) = args.functional {
        cfg.functional = match f {
            FunctionalArg::Sup => Functional::Sup,
            FunctionalArg::Integral => Functional::Integral,
            FunctionalArg::WeightedSup => Functional::WeightedSup { exponent: args.weight_exponent.unwrap_or(0.5) },
        };
    } else if let (Some(g), Functional::WeightedSup { .. }) = (args.weight_exponent, cfg.functional) {
        cfg.functional = Functional::WeightedSup { exponent: g };
    }
    if args.bandwidth.is_some() {
        cfg.bandwidth = args.bandwidth;
    }
    if let Some(k) = args.kernel {
        cfg.kernel = match k {
            KernelArg::FlatTop => Kernel::FlatTop,
            KernelArg::Bartlett => Kernel::Bartlett,
        };
    }
    if args.no_correction {
        cfg.correction = false;
    }
    if args.monte_carlo {
        cfg.critical = CriticalSource::MonteCarlo;
    }
    if args.p_value {
        cfg.p_value = true;
    }
    cfg.mc = args.mc.apply(cfg.mc);
    cfg.validate()?;
    Ok((spec, cfg))
}

fn cmd_test(args: &TestArgs, stdout: &mut dyn Write) -> Result<i32> {
    let input = args.input.display().to_string();
    let csv = read_csv(&args.input)?;
    let report = match args.method {
        Method::Psi => {
            let (spec, cfg) = test_settings(args, csv.series.dim())?;
            let out = run_test(&csv.series, &spec, &cfg)?;
            psi_report(&input, &csv, &spec, &out)?
        }
        Method::Md | Method::Gmd => {
            if csv.series.dim() != 1 {
                return Err(Error::Input(format!(
                    "{input}: --method md/gmd needs one column, found {}",
                    csv.series.dim()
                )));
            }
            let est = if args.method == Method::Md { ScaleEstimator::Md } else { ScaleEstimator::Gmd };
            let r = scale_cusum_test(csv.series.column(0), est, args.alpha.unwrap_or(0.05))?;
            scale_report(&input, &csv, &r)?
        }
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    match &args.output {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => writeln!(stdout, "{json}")?,
    }
    Ok(if report.reject { EXIT_REJECT } else { EXIT_OK })
}

#[derive(Debug, Serialize)]
struct QuantileReport {
    s: usize,
    level: f64,
    value: f64,
    source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mc: Option<McConfig>,
}

fn cmd_quantile(args: &QuantileArgs, stdout: &mut dyn Write) -> Result<i32> {
    if args.dim == 0 {
        return Err(Error::invalid("s must be at least 1"));
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {}", args.level)));
    }
    let table = if args.mc { None } else { lookup_quantile(args.dim, args.level).ok() };
    let report = match table {
        Some(v) => QuantileReport { s: args.dim, level: args.level, value: v, source: "table", mc: None },
        None => {
            let cfg = args.mc_args.apply(McConfig::default());
            let v = simulate_bessel_sup_quantile(args.dim, args.level, &cfg)?;
            QuantileReport { s: args.dim, level: args.level, value: v, source: "monte-carlo", mc: Some(cfg) }
        }
    };
    if args.json {
        writeln!(stdout, "{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?)?;
    } else {
        match &report.mc {
            None => writeln!(stdout, "{}", report.value)?,
            Some(c) => writeln!(
                stdout,
                "{:.4}\t(monte-carlo: n_grid={} n_rep={} seed={} correction={} engine={:?})",
                report.value, c.n_grid, c.n_rep, c.seed, c.correction, c.engine
            )?,
        }
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| Error::Input(format!("{}: {e}", args.spec.display())))?;
    let sc: Scenario = toml::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", args.spec.display())))?;
    sc.validate()?;
    let x = sc.generate(args.seed, args.rep)?;
    match &args.output {
        Some(p) => write_csv(&x, std::fs::File::create(p)?)?,
        None => write_csv(&x, stdout)?,
    }
    Ok(EXIT_OK)
}

fn cmd_experiment(args: &ExperimentArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(n) = args.n_rep {
        cfg.n_rep = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let table = run_experiment(&cfg)?;
    let prefix = args.output.clone().or_else(|| cfg.output.as_ref().map(PathBuf::from));
    let csv = table.to_csv()?;
    match prefix {
        Some(prefix) => {
            let with = |suffix: &str| {
                let mut s = prefix.clone().into_os_string();
                s.push(suffix);
                PathBuf::from(s)
            };
            if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(with(".csv"), &csv)?;
            std::fs::write(with(".json"), table.to_json()? + "\n")?;
            if args.plot_data {
                std::fs::write(with("_plot.csv"), table.plot_csv()?)?;
            }
            for r in &table.rows {
                writeln!(
                    stdout,
                    "{:<24} {:<28} rate={:.4} se={:.4} fail={}",
                    r.method, r.scenario, r.rate, r.mc_se, r.n_fail
                )?;
            }
        }
        None => {
            write!(stdout, "{csv}")?;
            if args.plot_data {
                write!(stdout, "{}", table.plot_csv()?)?;
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: impl IntoIterator<Item = OsString>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // the global pool can be set only once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a, stdout),
        Command::Quantile(a) => cmd_quantile(a, stdout),
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Experiment(a) => cmd_experiment(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}
