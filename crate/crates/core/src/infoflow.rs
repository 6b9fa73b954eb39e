//! Liang-Kleeman information flow for linear systems.
//!
//! For `dx/dt = A x + noise` with state covariance `C`, the rate of
//! information flowing from `x_j` to `x_i` is `T_{j→i} = A_ij C_ij / C_ii`
//! (nats per unit time). It holds for white and for OU-colored forcing, since
//! the forcing does not change the deterministic coupling between states.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{ensure_same_order, inverse, Matrix};
use crate::timeseries::{forward_diff_covariances, TimeSeriesMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMethod {
    /// From fitted dynamics and covariance.
    ModelBased,
    /// Covariance-only estimator with forward-difference derivatives.
    LiangDirect,
}

/// Flow matrix with `t[(i, j)] = T_{j→i}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoFlowMatrix {
    pub t: Matrix,
    pub method: FlowMethod,
    /// Clip level for display; raw values are never modified.
    pub mask_threshold: Option<f64>,
}

impl InfoFlowMatrix {
    /// `T_{from→to}`.
    pub fn flow(&self, from: usize, to: usize) -> f64 {
        self.t[(to, from)]
    }

    pub fn with_mask(mut self, mask: f64) -> Self {
        self.mask_threshold = Some(mask);
        self
    }

    /// Values clipped to `±mask_threshold` (unchanged without a mask, or with mask 0).
    pub fn display(&self) -> Matrix {
        match self.mask_threshold {
            Some(m) if m > 0.0 => self.t.map(|v| mask_value(v, m)),
            _ => self.t.clone(),
        }
    }
}

/// Clip `v` to `[−mask, mask]`; a non-positive mask disables clipping.
pub fn mask_value(v: f64, mask: f64) -> f64 {
    if mask > 0.0 {
        v.clamp(-mask, mask)
    } else {
        v
    }
}

fn check_variances(c: &Matrix) -> Result<()> {
    for i in 0..c.nrows() {
        if c[(i, i)].is_nan() || c[(i, i)] <= 0.0 {
            return Err(Error::DegenerateVariance(i));
        }
    }
    Ok(())
}

fn flows_from_dynamics(a: &Matrix, c: &Matrix) -> Matrix {
    let n = a.nrows();
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            a[(i, i)]
        } else {
            a[(i, j)] * c[(i, j)] / c[(i, i)]
        }
    })
}

/// `T_{j→i} = A_ij C_ij / C_ii`; the self-flow `T_{i→i}` is `A_ii` exactly.
pub fn info_flow_from_model(a: &Matrix, c: &Matrix) -> Result<InfoFlowMatrix> {
    ensure_same_order(a, c)?;
    check_variances(c)?;
    let t = flows_from_dynamics(a, c);
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("information flow"));
    }
    Ok(InfoFlowMatrix {
        t,
        method: FlowMethod::ModelBased,
        mask_threshold: None,
    })
}

/// Cofactor `(−1)^{r+c} det(minor_{rc})`.
fn cofactor(m: &Matrix, r: usize, c: usize) -> f64 {
    let n = m.nrows();
    if n == 1 {
        return 1.0;
    }
    let minor = m.clone().remove_row(r).remove_column(c);
    let sign = if (r + c).is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * minor.determinant()
}

fn ensure_nonsingular(c: &Matrix) -> Result<f64> {
    let det = c.determinant();
    let scale: f64 = (0..c.nrows()).map(|i| c[(i, i)].abs()).product();
    if !det.is_finite() || det.abs() <= 1e-12 * scale {
        return Err(Error::Singular(format!(
            "state covariance is singular (det = {det:.3e})"
        )));
    }
    Ok(det)
}

/// Covariance-only flow estimate from the state covariance `C` and the
/// state/derivative cross-covariance `Cd[k, i] = cov(x_k, ẋ_i)`:
///
/// `T_{j→i} = (1 / det C) Σ_k Δ_jk Cd[k, i] · C_ij / C_ii`, with `Δ` the cofactors of `C`.
pub fn info_flow_liang_from_covariances(c: &Matrix, cd: &Matrix) -> Result<InfoFlowMatrix> {
    let n = ensure_same_order(c, cd)?;
    check_variances(c)?;
    let det = ensure_nonsingular(c)?;
    let cof = Matrix::from_fn(n, n, |j, k| cofactor(c, j, k));
    let t = Matrix::from_fn(n, n, |i, j| {
        let s: f64 = (0..n).map(|k| cof[(j, k)] * cd[(k, i)]).sum();
        s / det * c[(i, j)] / c[(i, i)]
    });
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("information flow"));
    }
    Ok(InfoFlowMatrix {
        t,
        method: FlowMethod::LiangDirect,
        mask_threshold: None,
    })
}

/// Liang's estimator applied to a series, with forward-difference derivatives.
pub fn info_flow_liang(x: &TimeSeriesMatrix) -> Result<InfoFlowMatrix> {
    let (c, cd) = forward_diff_covariances(x)?;
    info_flow_liang_from_covariances(&c, &cd)
}

/// Dynamics implied by the forward-difference estimator, `⟨ẋ xᵀ⟩ C⁻¹ = Cdᵀ C⁻¹`.
pub fn liang_dynamics(x: &TimeSeriesMatrix) -> Result<(Matrix, Matrix)> {
    let (c, cd) = forward_diff_covariances(x)?;
    ensure_nonsingular(&c)?;
    let a = cd.transpose() * inverse(&c)?;
    Ok((a, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSign {
    Excites,
    Stabilizes,
    None,
}

/// `labels[i][j]` classifies `T_{j→i}` with strict thresholds `±eps`.
pub fn classify_flows(t: &InfoFlowMatrix, eps: f64) -> Vec<Vec<FlowSign>> {
    let eps = eps.max(0.0);
    t.t.row_iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    if v > eps {
                        FlowSign::Excites
                    } else if v < -eps {
                        FlowSign::Stabilizes
                    } else {
                        FlowSign::None
                    }
                })
                .collect()
        })
        .collect()
}
