//! Observed series, preprocessing, and sample correlation estimates.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Matrix};

/// `n` variables sampled at a uniform interval `dt`; one row per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix {
    data: Matrix,
    dt: f64,
    t0_phase: usize,
    names: Vec<String>,
    times: Vec<f64>,
}

impl TimeSeriesMatrix {
    /// Build from an `n × T` matrix. Times default to `k * dt`, names to `x1..xn`.
    pub fn new(data: Matrix, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling interval must be positive, got {dt}"
            )));
        }
        if data.ncols() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 samples, got {}",
                data.ncols()
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("no variables".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("time series data"));
        }
        let names = (1..=data.nrows()).map(|i| format!("x{i}")).collect();
        let times = (0..data.ncols()).map(|k| k as f64 * dt).collect();
        Ok(Self {
            data,
            dt,
            t0_phase: 0,
            names,
            times,
        })
    }

    /// Build from per-variable rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>], dt: f64) -> Result<Self> {
        let n = rows.len();
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::Dimension("rows have unequal lengths".into()));
        }
        Self::new(Matrix::from_fn(n, len, |i, t| rows[i][t]), dt)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_vars() {
            return Err(Error::Dimension(format!(
                "{} names for {} variables",
                names.len(),
                self.n_vars()
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_times(mut self, times: Vec<f64>) -> Result<Self> {
        if times.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} time stamps for {} samples",
                times.len(),
                self.len()
            )));
        }
        self.times = times;
        Ok(self)
    }

    /// Phase of the first sample within the seasonal cycle.
    pub fn with_phase(mut self, t0_phase: usize) -> Self {
        self.t0_phase = t0_phase;
        self
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0_phase(&self) -> usize {
        self.t0_phase
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_vars(&self) -> usize {
        self.data.nrows()
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Stack the variables of two aligned series.
    pub fn stack(&self, other: &TimeSeriesMatrix) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "series lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let n = self.n_vars() + other.n_vars();
        let data = Matrix::from_fn(n, self.len(), |i, t| {
            if i < self.n_vars() {
                self.data[(i, t)]
            } else {
                other.data[(i - self.n_vars(), t)]
            }
        });
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        Ok(Self {
            data,
            dt: self.dt,
            t0_phase: self.t0_phase,
            names,
            times: self.times.clone(),
        })
    }

    /// Apply `D x` for a diagonal `D` given by `scales`.
    pub fn scaled(&self, scales: &[f64]) -> Result<Self> {
        if scales.len() != self.n_vars() {
            return Err(Error::Dimension("one scale per variable required".into()));
        }
        let mut out = self.clone();
        for (i, &d) in scales.iter().enumerate() {
            out.data.row_mut(i).scale_mut(d);
        }
        Ok(out)
    }

    fn with_data(&self, data: Matrix, t0_phase: usize, times: Vec<f64>) -> Self {
        Self {
            data,
            dt: self.dt,
            t0_phase,
            names: self.names.clone(),
            times,
        }
    }
}

/// Sample correlation function `K(s) = <x(t+s) x(t)ᵀ>` at lags `0, dt, …, L·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedCorrelation {
    dt: f64,
    mats: Vec<Matrix>,
    cov: Matrix,
}

impl LaggedCorrelation {
    /// Assemble from matrices at lags `0, dt, 2dt, …`; `mats[0]` becomes the
    /// covariance after symmetrization.
    pub fn from_matrices(dt: f64, mut mats: Vec<Matrix>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("bad lag spacing {dt}")));
        }
        let first = mats
            .first()
            .ok_or_else(|| Error::InvalidArgument("no lag matrices".into()))?;
        let n = crate::linalg::ensure_square(first)?;
        for m in &mats {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension("lag matrices differ in order".into()));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("lagged correlation"));
            }
        }
        let cov = symmetrize(&mats[0]);
        mats[0] = cov.clone();
        Ok(Self { dt, mats, cov })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Largest lag index `L`.
    pub fn max_lag(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn at(&self, lag: usize) -> Option<&Matrix> {
        self.mats.get(lag)
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.mats
    }

    /// Lag index for time `s`, if `s` is (to rounding) a multiple of `dt` within range.
    pub fn lag_index(&self, s: f64) -> Option<usize> {
        let k = (s / self.dt).round();
        if k < 0.0 || (k * self.dt - s).abs() > 1e-9 * self.dt.max(s.abs()) {
            return None;
        }
        let k = k as usize;
        (k <= self.max_lag()).then_some(k)
    }

    /// Keep only lags `0..=max_lag`.
    pub fn truncated(&self, max_lag: usize) -> Self {
        let keep = (max_lag + 1).min(self.mats.len());
        Self {
            dt: self.dt,
            mats: self.mats[..keep].to_vec(),
            cov: self.cov.clone(),
        }
    }
}

/// Subtract, per variable, the mean of each phase class `(t0_phase + t) mod period`.
pub fn remove_climatology(x: &TimeSeriesMatrix, period: usize) -> Result<TimeSeriesMatrix> {
    if period == 0 {
        return Err(Error::InvalidArgument("period must be at least 1".into()));
    }
    if period > x.len() {
        return Err(Error::InsufficientData(format!(
            "period {period} exceeds series length {}",
            x.len()
        )));
    }
    let mut out = x.data.clone();
    for i in 0..x.n_vars() {
        let mut sums = vec![0.0; period];
        let mut counts = vec![0usize; period];
        for t in 0..x.len() {
            let p = (x.t0_phase + t) % period;
            sums[p] += x.data[(i, t)];
            counts[p] += 1;
        }
        for t in 0..x.len() {
            let p = (x.t0_phase + t) % period;
            out[(i, t)] -= sums[p] / counts[p] as f64;
        }
    }
    Ok(x.with_data(out, x.t0_phase, x.times.clone()))
}

/// Centered moving average of odd width `w`; both ends are trimmed.
pub fn running_mean(x: &TimeSeriesMatrix, w: usize) -> Result<TimeSeriesMatrix> {
    if w == 0 || w.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "running-mean width must be odd, got {w}"
        )));
    }
    if w > x.len() {
        return Err(Error::InsufficientData(format!(
            "width {w} exceeds series length {}",
            x.len()
        )));
    }
    if w == 1 {
        return Ok(x.clone());
    }
    let out_len = x.len() - w + 1;
    let half = (w - 1) / 2;
    let mut out = Matrix::zeros(x.n_vars(), out_len);
    for i in 0..x.n_vars() {
        let row = x.data.row(i);
        for t in 0..out_len {
            out[(i, t)] = row.columns(t, w).sum() / w as f64;
        }
    }
    let times = x.times[half..half + out_len].to_vec();
    Ok(x.with_data(out, x.t0_phase + half, times))
}

/// Divide each variable by its sample standard deviation.
pub fn standardize(x: &TimeSeriesMatrix) -> Result<TimeSeriesMatrix> {
    let scales = (0..x.n_vars())
        .map(|i| {
            let row = x.data.row(i);
            let mean = row.mean();
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
            if var > 0.0 {
                Ok(1.0 / var.sqrt())
            } else {
                Err(Error::DegenerateVariance(i))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    x.scaled(&scales)
}

fn centered(x: &TimeSeriesMatrix) -> Matrix {
    let mut d = x.data.clone();
    for i in 0..d.nrows() {
        let mean = d.row(i).mean();
        d.row_mut(i).add_scalar_mut(-mean);
    }
    d
}

/// Sample lagged correlations for lags `0..=max_lag` (in samples).
///
/// Rows are centered first; lag `s` averages over the `T − s` available pairs.
pub fn lagged_correlation(x: &TimeSeriesMatrix, max_lag: usize) -> Result<LaggedCorrelation> {
    let len = x.len();
    if max_lag >= len {
        return Err(Error::InsufficientData(format!(
            "max lag {max_lag} needs more than {len} samples"
        )));
    }
    let d = centered(x);
    let mats = (0..=max_lag)
        .map(|s| {
            let pairs = len - s;
            let lead = d.columns(s, pairs);
            let base = d.columns(0, pairs);
            (lead * base.transpose()) / pairs as f64
        })
        .collect();
    LaggedCorrelation::from_matrices(x.dt, mats)
}

/// Covariance `C` of `x` and cross-covariance `Cd[k, i] = cov(x_k, ẋ_i)`, with
/// `ẋ` taken by forward differences. Both cover the same `T − 1` samples.
pub fn forward_diff_covariances(x: &TimeSeriesMatrix) -> Result<(Matrix, Matrix)> {
    let len = x.len();
    if len < 3 {
        return Err(Error::InsufficientData(format!(
            "forward differences need at least 3 samples, got {len}"
        )));
    }
    let m = len - 1;
    let n = x.n_vars();
    let mut state = x.data.columns(0, m).into_owned();
    let mut deriv = (x.data.columns(1, m) - x.data.columns(0, m)) / x.dt;
    for i in 0..n {
        let ms = state.row(i).mean();
        state.row_mut(i).add_scalar_mut(-ms);
        let md = deriv.row(i).mean();
        deriv.row_mut(i).add_scalar_mut(-md);
    }
    let c = symmetrize(&(&state * state.transpose() / m as f64));
    let cd = &state * deriv.transpose() / m as f64;
    Ok((c, cd))
}

/// Read `time,var1,...,varn` CSV.
pub fn read_csv<R: Read>(reader: R, dt: f64) -> Result<TimeSeriesMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::Parse(format!(
            "header must be `time,var1,...`; found {} column(s)",
            headers.len()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = names.len();
    let mut times = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (row_idx, rec) in rdr.records().enumerate() {
        let line = row_idx + 2;
        let rec = rec.map_err(|e| Error::Parse(format!("row {line}: {e}")))?;
        if rec.len() != n + 1 {
            return Err(Error::Parse(format!(
                "row {line}: expected {} columns, found {}",
                n + 1,
                rec.len()
            )));
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "row {line}, column {} ({}): cannot parse {field:?} as a number",
                    col + 1,
                    headers.get(col).unwrap_or("?")
                ))
            })?;
            if col == 0 {
                times.push(v);
            } else {
                if !v.is_finite() {
                    return Err(Error::Parse(format!(
                        "row {line}, column {}: non-finite value",
                        col + 1
                    )));
                }
                cols[col - 1].push(v);
            }
        }
    }
    if times.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    TimeSeriesMatrix::from_rows(&cols, dt)?
        .with_names(names)?
        .with_times(times)
}

/// Write `time,var1,...,varn` CSV.
pub fn write_csv<W: Write>(x: &TimeSeriesMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string()];
    header.extend(x.names.iter().cloned());
    w.write_record(&header)
        .map_err(|e| Error::Parse(e.to_string()))?;
    for t in 0..x.len() {
        let mut rec = vec![format!("{}", x.times[t])];
        rec.extend((0..x.n_vars()).map(|i| format!("{:e}", x.data[(i, t)])));
        w.write_record(&rec)
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
