//! Command-line driver. Settings come from an optional TOML file; flags override it.
//!
//! Exit status: 0 on success, 1 on configuration or input errors, 2 when fitting fails
//! (for `grid-scan`, when every gridpoint fails).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use limflow::analysis::{
    export_correlation_panels, grid_scan, heatmap_svg, read_coords, write_panels_csv,
    write_results_csv, AnalysisConfig, Direction, Method,
};
use limflow::colored::{colored_diffusion, fit_colored};
use limflow::infoflow::{info_flow_from_model, info_flow_liang, InfoFlowMatrix};
use limflow::linalg::Matrix;
use limflow::simulate::{simulate, Scheme, SimSpec};
use limflow::timeseries::{lagged_correlation, read_csv, write_csv, TimeSeriesMatrix};
use limflow::white::fit_white;
use limflow::Error;

#[derive(Parser)]
#[command(
    name = "limflow",
    version,
    about = "Linear inverse models and information flow"
)]
struct Cli {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a white- or colored-noise linear system to CSV.
    Simulate(SimulateArgs),
    /// Fit white-noise dynamics to a CSV series.
    FitWhite(FitArgs),
    /// Fit colored-noise dynamics and memory time to a CSV series.
    FitColored(FitArgs),
    /// Information-flow matrices from the fitted models and the direct estimator.
    Infoflow(InfoflowArgs),
    /// Pair an index series with every column of a grid CSV.
    GridScan(GridScanArgs),
    /// Observed and model correlation functions in long CSV format.
    Panels(PanelArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Drift matrix, rows separated by ';' (e.g. "-1,0.5;-0.2,-0.8").
    #[arg(long)]
    a: Option<String>,
    /// Diffusion matrix; for colored runs this is Qc. Defaults to one derived from --target-cov.
    #[arg(long)]
    q: Option<String>,
    /// Stationary covariance used to derive Qc when --q is absent (default identity).
    #[arg(long)]
    target_cov: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Exact,
    EulerMaruyama,
}

/// Shared analysis overrides.
#[derive(Args, Clone)]
struct AnalysisArgs {
    /// Sampling interval in months.
    #[arg(long)]
    dt: Option<f64>,
    /// Fit window in months.
    #[arg(long)]
    window: Option<f64>,
    /// Seasonal period in samples (0 disables).
    #[arg(long)]
    climatology_period: Option<usize>,
    /// Running-mean width in samples (1 disables).
    #[arg(long)]
    running_mean: Option<usize>,
    /// Scale variables to unit variance before fitting.
    #[arg(long)]
    standardize: bool,
    /// Display clip for flows (0 disables).
    #[arg(long)]
    mask: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowChoice {
    White,
    Colored,
    Liang,
    All,
}

#[derive(Args)]
struct InfoflowArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    method: FlowChoice,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridScanArgs {
    /// Single-column index CSV (`time,index`).
    #[arg(long)]
    index: PathBuf,
    /// Grid CSV (`time,cell_0,cell_1,...`).
    #[arg(long)]
    grid: PathBuf,
    /// Optional `cell_id,lon,lat` CSV.
    #[arg(long)]
    coords: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write SVG maps of every method and direction.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    analysis: AnalysisArgs,
}

#[derive(Args)]
struct PanelArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    analysis: AnalysisConfig,
    simulate: SimulateConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    a: Vec<Vec<f64>>,
    q: Option<Vec<Vec<f64>>>,
    target_cov: Option<Vec<Vec<f64>>>,
    tau: f64,
    dt: f64,
    steps: usize,
    seed: u64,
    burn_in: usize,
    scheme: Scheme,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            a: vec![vec![-1.0, 0.5], vec![-0.2, -0.8]],
            q: None,
            target_cov: None,
            tau: 0.0,
            dt: 0.1,
            steps: 200_000,
            seed: 1,
            burn_in: 0,
            scheme: Scheme::Exact,
        }
    }
}

/// Failure split by exit status.
enum CliError {
    Input(String),
    Fit(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Io(_) | Error::InvalidArgument(_) | Error::Dimension(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Fit(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn parse_matrix(s: &str) -> CliResult<Matrix> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| input_err(format!("{v:?}: {e}")))
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    matrix_from_rows(&rows)
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> CliResult<Matrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(input_err(
            "matrix rows must be non-empty and of equal length",
        ));
    }
    Ok(Matrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn apply_overrides(mut cfg: AnalysisConfig, args: &AnalysisArgs) -> AnalysisConfig {
    if let Some(v) = args.dt {
        cfg.dt = v;
    }
    if let Some(v) = args.window {
        cfg.fit.window = v;
    }
    if let Some(v) = args.climatology_period {
        cfg.climatology_period = v;
    }
    if let Some(v) = args.running_mean {
        cfg.running_mean = v;
    }
    if args.standardize {
        cfg.standardize = true;
    }
    if let Some(v) = args.mask {
        cfg.mask = v;
    }
    if let Some(v) = args.seed {
        cfg.fit.seed = v;
    }
    cfg
}

fn read_series(path: &Path, dt: f64) -> CliResult<TimeSeriesMatrix> {
    let file = File::open(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    read_csv(BufReader::new(file), dt).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| input_err(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> CliResult<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(input_err)?;
    writeln!(w).map_err(input_err)?;
    Ok(())
}

fn flow_json(t: &InfoFlowMatrix, mask: f64) -> serde_json::Value {
    json!({
        "method": t.method,
        "units": "nats per time unit",
        "T": rows_of(&t.t),
        "display": rows_of(&t.clone().with_mask(mask).display()),
    })
}

fn run_simulate(args: SimulateArgs, file: FileConfig) -> CliResult<()> {
    let sc = file.simulate;
    let a = match &args.a {
        Some(s) => parse_matrix(s)?,
        None => matrix_from_rows(&sc.a)?,
    };
    let tau = args.tau.unwrap_or(sc.tau);
    let q = match (&args.q, &sc.q) {
        (Some(s), _) => parse_matrix(s)?,
        (None, Some(rows)) => matrix_from_rows(rows)?,
        (None, None) => {
            let c = match (&args.target_cov, &sc.target_cov) {
                (Some(s), _) => parse_matrix(s)?,
                (None, Some(rows)) => matrix_from_rows(rows)?,
                (None, None) => Matrix::identity(a.nrows(), a.nrows()),
            };
            colored_diffusion(&a, tau, &c)?
        }
    };
    let spec = SimSpec {
        a,
        q,
        tau,
        dt: args.dt.unwrap_or(sc.dt),
        steps: args.steps.unwrap_or(sc.steps),
        seed: args.seed.unwrap_or(sc.seed),
        burn_in: args.burn_in.unwrap_or(sc.burn_in),
        scheme: match args.scheme {
            Some(SchemeArg::Exact) => Scheme::Exact,
            Some(SchemeArg::EulerMaruyama) => Scheme::EulerMaruyama,
            None => sc.scheme,
        },
    };
    spec.validate().map_err(input_err)?;
    let x = simulate(&spec)?;
    write_csv(&x, output(args.out.as_deref())?)?;
    Ok(())
}

fn prepared_correlations(
    input: &Path,
    cfg: &AnalysisConfig,
) -> CliResult<(TimeSeriesMatrix, limflow::timeseries::LaggedCorrelation)> {
    let raw = read_series(input, cfg.dt)?;
    let x = cfg.preprocess(&raw)?;
    let max_lag = (cfg.fit.window.max(cfg.lag_span) / cfg.dt - 1e-9).ceil() as usize;
    let k = lagged_correlation(&x, max_lag)?;
    Ok((x, k))
}

fn run_fit(args: FitArgs, file: FileConfig, colored: bool) -> CliResult<()> {
    let cfg = apply_overrides(file.analysis, &args.analysis);
    let (_, k) = prepared_correlations(&args.input, &cfg)?;
    let value = if colored {
        let m = fit_colored(&k, &cfg.fit)?;
        json!({
            "model": "colored",
            "A": rows_of(&m.a),
            "tau": m.tau,
            "Qc": rows_of(&m.qc),
            "C": rows_of(&m.c),
            "fit_residual": m.fit_residual,
            "white_limit": m.white_limit,
            "qc_positive_definite": m.qc_positive_definite,
            "lag_residuals": m.lag_residuals,
            "tau_scan_best": m.tau_scan_best,
            "starts": m.starts,
            "config": cfg,
        })
    } else {
        let m = fit_white(&k, &cfg.fit)?;
        json!({
            "model": "white",
            "A": rows_of(&m.a),
            "Q": rows_of(&m.q),
            "C": rows_of(&m.c),
            "fit_residual": m.fit_residual,
            "q_positive_definite": m.q_positive_definite,
            "lag_residuals": m.lag_residuals,
            "starts": m.starts,
            "config": cfg,
        })
    };
    write_json(args.out.as_deref(), &value)
}

fn run_infoflow(args: InfoflowArgs, file: FileConfig) -> CliResult<()> {
    let cfg = apply_overrides(file.analysis, &args.analysis);
    let (x, k) = prepared_correlations(&args.input, &cfg)?;
    let mut out = serde_json::Map::new();
    let want =
        |c: FlowChoice| matches!(args.method, FlowChoice::All) || args.method as u8 == c as u8;
    if want(FlowChoice::White) {
        let m = fit_white(&k, &cfg.fit)?;
        out.insert(
            "white".into(),
            flow_json(&info_flow_from_model(&m.a, &m.c)?, cfg.mask),
        );
    }
    if want(FlowChoice::Colored) {
        let m = fit_colored(&k, &cfg.fit)?;
        let mut v = flow_json(&info_flow_from_model(&m.a, &m.c)?, cfg.mask);
        v["tau"] = json!(m.tau);
        out.insert("colored".into(), v);
    }
    if want(FlowChoice::Liang) {
        out.insert("liang".into(), flow_json(&info_flow_liang(&x)?, cfg.mask));
    }
    out.insert("names".into(), json!(x.names()));
    write_json(args.out.as_deref(), &serde_json::Value::Object(out))
}

fn run_grid_scan(
    args: GridScanArgs,
    file: FileConfig,
    config_path: Option<&Path>,
) -> CliResult<()> {
    let mut cfg = apply_overrides(file.analysis, &args.analysis);
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    let index = read_series(&args.index, cfg.dt)?;
    let grid = read_series(&args.grid, cfg.dt)?;
    let coords = match &args.coords {
        Some(p) => {
            let f = File::open(p).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
            Some(read_coords(BufReader::new(f), grid.names())?)
        }
        None => None,
    };
    let result = grid_scan(&index, &grid, coords.as_deref(), &cfg)?;

    std::fs::create_dir_all(&args.out_dir).map_err(input_err)?;
    let path = |name: &str| args.out_dir.join(name);
    let results = File::create(path("results.csv")).map_err(input_err)?;
    write_results_csv(&result, BufWriter::new(results))?;
    write_json(
        Some(&path("config.json")),
        &json!({
            "index": args.index,
            "grid": args.grid,
            "coords": args.coords,
            "config_file": config_path,
            "units": result.units,
            "analysis": cfg,
        }),
    )?;
    if args.svg {
        for method in Method::ALL {
            for (dir, tag) in [
                (Direction::IndexToCell, "idx_to_cell"),
                (Direction::CellToIndex, "cell_to_idx"),
            ] {
                let name = format!("{}_{tag}.svg", method.as_str());
                std::fs::write(path(&name), heatmap_svg(&result, method, dir))
                    .map_err(input_err)?;
            }
        }
    }
    let failed = result.records.iter().filter(|r| !r.any_ok()).count();
    eprintln!(
        "{} gridpoints scanned, {failed} failed entirely; results in {}",
        result.records.len(),
        args.out_dir.display()
    );
    if result.all_failed() {
        return Err(CliError::Fit("fitting failed at every gridpoint".into()));
    }
    Ok(())
}

fn run_panels(args: PanelArgs, file: FileConfig) -> CliResult<()> {
    let cfg = apply_overrides(file.analysis, &args.analysis);
    let x = read_series(&args.input, cfg.dt)?;
    let panels = export_correlation_panels(&x, &cfg)?;
    write_panels_csv(&panels, output(args.out.as_deref())?)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Simulate(a) => run_simulate(a, file),
        Command::FitWhite(a) => run_fit(a, file, false),
        Command::FitColored(a) => run_fit(a, file, true),
        Command::Infoflow(a) => run_infoflow(a, file),
        Command::GridScan(a) => run_grid_scan(a, file, cli.config.as_deref()),
        Command::Panels(a) => run_panels(a, file),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Fit(msg)) => {
            eprintln!("fit failure: {msg}");
            ExitCode::from(2)
        }
    }
}
