//! Index-versus-gridpoint causality scans and plot-ready exports.
//!
//! Each gridpoint series is paired with a single index series (e.g. a
//! climate mode index against SST anomalies at every cell). The pair is
//! preprocessed, three flow estimates are produced (white fit, colored fit,
//! and the covariance-only estimator), and the results are written as CSV
//! with optional SVG maps whose colors saturate at the display mask.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colored::{fit_colored_from, ColoredModel};
use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::infoflow::{info_flow_from_model, info_flow_liang, liang_dynamics, mask_value};
use crate::linalg::{expm, Matrix};
use crate::timeseries::{
    lagged_correlation, remove_climatology, running_mean, standardize, LaggedCorrelation,
    TimeSeriesMatrix,
};
use crate::white::{fit_white, WhiteModel};

/// Display clip for flow maps, in nats per month.
pub const DEFAULT_MASK: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Sampling interval in months.
    pub dt: f64,
    /// Seasonal period in samples; 0 disables climatology removal.
    pub climatology_period: usize,
    /// Centered running-mean width in samples; 1 disables smoothing.
    pub running_mean: usize,
    /// Scale each variable to unit variance before fitting.
    pub standardize: bool,
    /// Correlations are estimated out to `max(window, lag_span)`.
    pub lag_span: f64,
    /// Upper end of the exported correlation panels.
    pub panel_span: f64,
    pub mask: f64,
    /// Worker threads for grid scans; 0 uses all cores.
    pub workers: usize,
    /// A pair needs at least this many windows' worth of samples.
    pub min_windows: f64,
    pub fit: FitConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            climatology_period: 12,
            running_mean: 3,
            standardize: false,
            lag_span: 6.0,
            panel_span: 6.0,
            mask: DEFAULT_MASK,
            workers: 0,
            min_windows: 10.0,
            fit: FitConfig::default(),
        }
    }
}

impl AnalysisConfig {
    /// Configuration with preprocessing disabled, for already-clean synthetic data.
    pub fn raw(dt: f64) -> Self {
        Self {
            dt,
            climatology_period: 0,
            running_mean: 1,
            ..Self::default()
        }
    }

    pub fn with_window(mut self, window: f64) -> Self {
        self.fit.window = window;
        self
    }

    fn max_lag(&self) -> usize {
        (self.fit.window.max(self.lag_span) / self.dt - 1e-9).ceil() as usize
    }

    /// Climatology removal, running mean, then optional standardization.
    pub fn preprocess(&self, x: &TimeSeriesMatrix) -> Result<TimeSeriesMatrix> {
        let mut y = x.clone();
        if self.climatology_period > 0 {
            y = remove_climatology(&y, self.climatology_period)?;
        }
        if self.running_mean > 1 {
            y = running_mean(&y, self.running_mean)?;
        }
        if self.standardize {
            y = standardize(&y)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    WhiteLim,
    ColoredLim,
    Liang,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::WhiteLim, Method::ColoredLim, Method::Liang];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::WhiteLim => "white-lim",
            Method::ColoredLim => "colored-lim",
            Method::Liang => "liang",
        }
    }
}

/// One method's result for one index/cell pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: Method,
    pub t_idx_to_cell: Option<f64>,
    pub t_cell_to_idx: Option<f64>,
    pub tau: Option<f64>,
    pub residual: Option<f64>,
    /// `None` on success, otherwise the failure reason.
    pub failure: Option<String>,
}

impl MethodResult {
    fn failed(method: Method, reason: String) -> Self {
        Self {
            method,
            t_idx_to_cell: None,
            t_cell_to_idx: None,
            tau: None,
            residual: None,
            failure: Some(reason),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub cell_id: String,
    pub lon: Option<f64>,
    pub lat: Option<f64>,
    pub results: Vec<MethodResult>,
}

impl PairRecord {
    pub fn result(&self, method: Method) -> &MethodResult {
        self.results
            .iter()
            .find(|r| r.method == method)
            .expect("every record carries all methods")
    }

    pub fn any_ok(&self) -> bool {
        self.results.iter().any(MethodResult::is_ok)
    }
}

/// Flow pair `(index → cell, cell → index)` from a 2-variable flow matrix.
fn directed(t: &Matrix) -> (f64, f64) {
    (t[(1, 0)], t[(0, 1)])
}

fn check_invertible(c: &Matrix) -> Result<()> {
    let det = c.determinant();
    let scale: f64 = (0..c.nrows()).map(|i| c[(i, i)].abs()).product();
    if det.is_nan() || det.abs() <= 1e-12 * scale {
        return Err(Error::Singular(format!(
            "pair covariance is singular (det = {det:.3e})"
        )));
    }
    Ok(())
}

/// Preprocessed pair and its lagged correlations.
fn prepare_pair(
    index: &[f64],
    cell: &[f64],
    cfg: &AnalysisConfig,
) -> Result<(TimeSeriesMatrix, LaggedCorrelation)> {
    if index.len() != cell.len() {
        return Err(Error::Dimension(format!(
            "index has {} samples, cell has {}",
            index.len(),
            cell.len()
        )));
    }
    let needed = (cfg.min_windows * cfg.fit.window / cfg.dt).ceil() as usize;
    if index.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {needed}",
            index.len()
        )));
    }
    let raw = TimeSeriesMatrix::from_rows(&[index.to_vec(), cell.to_vec()], cfg.dt)?;
    let x = cfg.preprocess(&raw)?;
    let k = lagged_correlation(&x, cfg.max_lag())?;
    check_invertible(k.cov())?;
    Ok((x, k))
}

/// All three flow estimates for one index/cell pair. Failures are recorded, never raised.
pub fn run_pair_analysis(index: &[f64], cell: &[f64], cfg: &AnalysisConfig) -> PairRecord {
    let results = match prepare_pair(index, cell, cfg) {
        Err(e) => Method::ALL
            .iter()
            .map(|&m| MethodResult::failed(m, e.to_string()))
            .collect(),
        Ok((x, k)) => {
            let white = fit_white(&k, &cfg.fit);
            let colored = match &white {
                Ok(w) => fit_colored_from(&k, &cfg.fit, w),
                Err(e) => Err(Error::FitFailed(format!(
                    "white initialization failed: {e}"
                ))),
            };
            let white_res = match white.and_then(|w| Ok((info_flow_from_model(&w.a, &w.c)?, w))) {
                Ok((t, w)) => {
                    let (to_cell, to_idx) = directed(&t.t);
                    MethodResult {
                        method: Method::WhiteLim,
                        t_idx_to_cell: Some(to_cell),
                        t_cell_to_idx: Some(to_idx),
                        tau: None,
                        residual: Some(w.fit_residual),
                        failure: None,
                    }
                }
                Err(e) => MethodResult::failed(Method::WhiteLim, e.to_string()),
            };
            let colored_res = match colored.and_then(|c| Ok((info_flow_from_model(&c.a, &c.c)?, c)))
            {
                Ok((t, c)) => {
                    let (to_cell, to_idx) = directed(&t.t);
                    MethodResult {
                        method: Method::ColoredLim,
                        t_idx_to_cell: Some(to_cell),
                        t_cell_to_idx: Some(to_idx),
                        tau: Some(c.tau),
                        residual: Some(c.fit_residual),
                        failure: None,
                    }
                }
                Err(e) => MethodResult::failed(Method::ColoredLim, e.to_string()),
            };
            let liang_res = match info_flow_liang(&x) {
                Ok(t) => {
                    let (to_cell, to_idx) = directed(&t.t);
                    MethodResult {
                        method: Method::Liang,
                        t_idx_to_cell: Some(to_cell),
                        t_cell_to_idx: Some(to_idx),
                        tau: None,
                        residual: None,
                        failure: None,
                    }
                }
                Err(e) => MethodResult::failed(Method::Liang, e.to_string()),
            };
            vec![white_res, colored_res, liang_res]
        }
    };
    PairRecord {
        cell_id: String::new(),
        lon: None,
        lat: None,
        results,
    }
}

/// Per-cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridScanResult {
    pub records: Vec<PairRecord>,
    pub config: AnalysisConfig,
    pub units: &'static str,
}

impl GridScanResult {
    pub fn all_failed(&self) -> bool {
        !self.records.iter().any(PairRecord::any_ok)
    }
}

/// Pair the index with every grid column, in parallel; output keeps column order.
pub fn grid_scan(
    index: &TimeSeriesMatrix,
    grid: &TimeSeriesMatrix,
    coords: Option<&[Coord]>,
    cfg: &AnalysisConfig,
) -> Result<GridScanResult> {
    if index.n_vars() != 1 {
        return Err(Error::Parse(format!(
            "index file must hold exactly one series, found {}",
            index.n_vars()
        )));
    }
    if index.len() != grid.len() {
        return Err(Error::Parse(format!(
            "index has {} rows but grid has {}",
            index.len(),
            grid.len()
        )));
    }
    if let Some(c) = coords {
        if c.len() != grid.n_vars() {
            return Err(Error::Parse(format!(
                "{} coordinates for {} grid cells",
                c.len(),
                grid.n_vars()
            )));
        }
    }
    let idx = index.row(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let records = pool.install(|| {
        (0..grid.n_vars())
            .into_par_iter()
            .map(|j| {
                let mut rec = run_pair_analysis(&idx, &grid.row(j), cfg);
                rec.cell_id = grid.names()[j].clone();
                if let Some(c) = coords {
                    rec.lon = Some(c[j].lon);
                    rec.lat = Some(c[j].lat);
                }
                rec
            })
            .collect()
    });
    Ok(GridScanResult {
        records,
        config: cfg.clone(),
        units: "nats/month",
    })
}

/// Read `cell_id,lon,lat` rows, reordered to match `cell_ids`.
pub fn read_coords<R: std::io::Read>(reader: R, cell_ids: &[String]) -> Result<Vec<Coord>> {
    #[derive(Deserialize)]
    struct Row {
        cell_id: String,
        lon: f64,
        lat: f64,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut map = std::collections::HashMap::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("coordinates row {}: {e}", i + 2)))?;
        map.insert(
            row.cell_id,
            Coord {
                lon: row.lon,
                lat: row.lat,
            },
        );
    }
    cell_ids
        .iter()
        .map(|id| {
            map.get(id)
                .copied()
                .ok_or_else(|| Error::Parse(format!("no coordinates for cell {id:?}")))
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// Results CSV: one row per gridpoint per method.
pub fn write_results_csv<W: Write>(result: &GridScanResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cell_id",
        "lon",
        "lat",
        "method",
        "T_idx_to_cell",
        "T_cell_to_idx",
        "tau",
        "residual",
        "display_T_idx_to_cell",
        "display_T_cell_to_idx",
        "status",
    ])
    .map_err(|e| Error::Parse(e.to_string()))?;
    let mask = result.config.mask;
    for rec in &result.records {
        for r in &rec.results {
            let status = match &r.failure {
                None => "ok".to_string(),
                Some(reason) => format!("failed: {reason}"),
            };
            w.write_record([
                rec.cell_id.clone(),
                opt(rec.lon),
                opt(rec.lat),
                r.method.as_str().to_string(),
                opt(r.t_idx_to_cell),
                opt(r.t_cell_to_idx),
                opt(r.tau),
                opt(r.residual),
                opt(r.t_idx_to_cell.map(|v| mask_value(v, mask))),
                opt(r.t_cell_to_idx.map(|v| mask_value(v, mask))),
                status,
            ])
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    IndexToCell,
    CellToIndex,
}

fn diverging_color(v: f64, clip: f64) -> String {
    let t = if clip > 0.0 {
        (v / clip).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// SVG map of one flow direction for one method; colors saturate at `±mask`.
///
/// Cells are placed on the lon/lat lattice when coordinates are known,
/// otherwise in a single row. Failed cells are drawn grey.
pub fn heatmap_svg(result: &GridScanResult, method: Method, direction: Direction) -> String {
    let values: Vec<Option<f64>> = result
        .records
        .iter()
        .map(|rec| {
            let r = rec.result(method);
            match direction {
                Direction::IndexToCell => r.t_idx_to_cell,
                Direction::CellToIndex => r.t_cell_to_idx,
            }
        })
        .collect();
    let clip = if result.config.mask > 0.0 {
        result.config.mask
    } else {
        values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    };

    let have_coords = result
        .records
        .iter()
        .all(|r| r.lon.is_some() && r.lat.is_some());
    let sorted_unique = |vals: Vec<f64>| {
        let mut v = vals;
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (lons, lats) = if have_coords {
        (
            sorted_unique(result.records.iter().filter_map(|r| r.lon).collect()),
            sorted_unique(result.records.iter().filter_map(|r| r.lat).collect()),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let cols = if have_coords {
        lons.len()
    } else {
        values.len()
    }
    .max(1);
    let rows = if have_coords { lats.len() } else { 1 }.max(1);
    let cell = 16.0;
    let (width, height) = (cols as f64 * cell, rows as f64 * cell + 24.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    for (k, (rec, v)) in result.records.iter().zip(&values).enumerate() {
        let (cx, cy) = if have_coords {
            let x = lons.partition_point(|&l| l < rec.lon.unwrap_or(0.0));
            let y = lats.partition_point(|&l| l < rec.lat.unwrap_or(0.0));
            (x, rows - 1 - y)
        } else {
            (k, 0)
        };
        let fill = v.map_or_else(|| "#bbbbbb".to_string(), |v| diverging_color(v, clip));
        let title = v.map_or_else(|| "failed".to_string(), |v| format!("{v:.4e}"));
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{fill}"><title>{}: {title}</title></rect>"#,
            cx as f64 * cell,
            cy as f64 * cell,
            rec.cell_id
        );
    }
    let label = match direction {
        Direction::IndexToCell => "index to cell",
        Direction::CellToIndex => "cell to index",
    };
    let _ = writeln!(
        svg,
        r#"<text x="2" y="{}" font-size="11" font-family="sans-serif">{} {label}, clipped at ±{clip} {}</text>"#,
        rows as f64 * cell + 16.0,
        method.as_str(),
        result.units
    );
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelSeries {
    Observed,
    White,
    Colored,
    Liang,
}

impl PanelSeries {
    pub fn as_str(&self) -> &'static str {
        match self {
            PanelSeries::Observed => "observed",
            PanelSeries::White => "white",
            PanelSeries::Colored => "colored",
            PanelSeries::Liang => "liang",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PanelRow {
    pub s: f64,
    pub i: usize,
    pub j: usize,
    pub series: PanelSeries,
    pub value: f64,
}

/// Observed and model correlation functions of one preprocessed series.
#[derive(Debug, Clone)]
pub struct CorrelationPanels {
    pub dt: f64,
    pub observed: LaggedCorrelation,
    pub white: WhiteModel,
    pub colored: ColoredModel,
    /// Dynamics implied by the forward-difference estimator.
    pub liang_a: Matrix,
    pub liang_c: Matrix,
}

impl CorrelationPanels {
    /// Model correlation at lag index `lag`.
    pub fn model(&self, series: PanelSeries, lag: usize) -> Result<Matrix> {
        let s = lag as f64 * self.dt;
        match series {
            PanelSeries::Observed => self
                .observed
                .at(lag)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("lag {lag} beyond panels"))),
            PanelSeries::White => self.white.correlation(s),
            PanelSeries::Colored => self.colored.correlation(s),
            PanelSeries::Liang => {
                if lag == 0 {
                    // All panels share the observed covariance at the origin.
                    Ok(self.observed.cov().clone())
                } else {
                    Ok(expm(&self.liang_a, s)? * self.observed.cov())
                }
            }
        }
    }

    /// Root-mean-square Frobenius misfit to the observations over lags `0..=max_lag`.
    pub fn rms_error(&self, series: PanelSeries, max_lag: usize) -> Result<f64> {
        let mut acc = 0.0;
        for lag in 0..=max_lag {
            let obs = self
                .observed
                .at(lag)
                .ok_or_else(|| Error::InvalidArgument(format!("lag {lag} beyond panels")))?;
            acc += (obs - self.model(series, lag)?).norm_squared();
        }
        Ok((acc / (max_lag + 1) as f64).sqrt())
    }

    pub fn rows(&self) -> Result<Vec<PanelRow>> {
        let n = self.observed.n_vars();
        let mut out = Vec::new();
        for lag in 0..=self.observed.max_lag() {
            let s = lag as f64 * self.dt;
            for series in [
                PanelSeries::Observed,
                PanelSeries::White,
                PanelSeries::Colored,
                PanelSeries::Liang,
            ] {
                let m = self.model(series, lag)?;
                for i in 0..n {
                    for j in 0..n {
                        out.push(PanelRow {
                            s,
                            i,
                            j,
                            series,
                            value: m[(i, j)],
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Preprocess, fit both models, and assemble the correlation panels out to `panel_span`.
pub fn export_correlation_panels(
    series: &TimeSeriesMatrix,
    cfg: &AnalysisConfig,
) -> Result<CorrelationPanels> {
    let x = cfg.preprocess(series)?;
    let panel_lags = (cfg.panel_span / x.dt() + 1e-9).floor() as usize;
    let k = lagged_correlation(&x, cfg.max_lag().max(panel_lags))?;
    let white = fit_white(&k, &cfg.fit)?;
    let colored = fit_colored_from(&k, &cfg.fit, &white)?;
    let (liang_a, liang_c) = liang_dynamics(&x)?;
    Ok(CorrelationPanels {
        dt: x.dt(),
        observed: k.truncated(panel_lags),
        white,
        colored,
        liang_a,
        liang_c,
    })
}

/// Long-format panel CSV with columns `s,i,j,series,value` (indices 1-based).
pub fn write_panels_csv<W: Write>(panels: &CorrelationPanels, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["s", "i", "j", "series", "value"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for row in panels.rows()? {
        w.write_record([
            format!("{}", row.s),
            (row.i + 1).to_string(),
            (row.j + 1).to_string(),
            row.series.as_str().to_string(),
            format!("{:e}", row.value),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
