//! Colored-noise linear inverse model.
//!
//! The forcing is an Ornstein-Uhlenbeck process with correlation time `τ`
//! shared by all components. The state correlation function is
//!
//! ```text
//! K(s) = exp(sA) C + exp(sA) ∫₀^s exp(−s'(A + I/τ)) ds' Qc Bᵀ,   B = (I − τA)⁻¹,
//! ```
//!
//! and stationarity of the augmented `(x, η)` system ties the colored
//! diffusion to the covariance through `B Qc + Qc Bᵀ = −(A C + C Aᵀ)`.
//! Both `A` and `τ` are found by minimizing the windowed misfit, with `Qc`
//! recomputed from the closure at every candidate so that `K(0) = C_obs`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{multi_start, FitConfig, StartReport};
use crate::linalg::{
    ensure_finite, ensure_same_order, ensure_square, expm, inverse, is_spd, min_sym_eigenvalue,
    solve_two_sided, spectral_abscissa, Matrix,
};
use crate::timeseries::LaggedCorrelation;
use crate::white::{
    fit_white, matrix_from_params, matrix_log_starts, params_from_matrix, stability_excess,
    white_diffusion, WhiteModel,
};

/// Fitted colored-noise model.
#[derive(Debug, Clone, Serialize)]
pub struct ColoredModel {
    pub a: Matrix,
    pub tau: f64,
    pub qc: Matrix,
    pub c: Matrix,
    /// Unpenalized windowed misfit at the returned `(A, τ)`.
    pub fit_residual: f64,
    /// `τ` at or below the sampling interval: indistinguishable from white forcing.
    pub white_limit: bool,
    pub qc_positive_definite: bool,
    pub lag_residuals: Vec<f64>,
    /// Best `(τ, objective)` of the τ scan at the white-fit dynamics.
    pub tau_scan_best: (f64, f64),
    pub starts: Vec<StartReport>,
}

impl ColoredModel {
    /// Memory factor `B = (I − τA)⁻¹`, always recomputed from `A` and `τ`.
    pub fn b(&self) -> Result<Matrix> {
        memory_factor(&self.a, self.tau)
    }

    pub fn correlation(&self, s: f64) -> Result<Matrix> {
        Ok(colored_correlation(&self.a, self.tau, &self.qc, &self.c, &[s])?.remove(0))
    }
}

/// `B = (I − τA)⁻¹`; exactly the identity at `τ = 0`.
pub fn memory_factor(a: &Matrix, tau: f64) -> Result<Matrix> {
    let n = ensure_square(a)?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise correlation time must be non-negative, got {tau}"
        )));
    }
    if tau == 0.0 {
        return Ok(Matrix::identity(n, n));
    }
    inverse(&(Matrix::identity(n, n) - a * tau))
        .map_err(|_| Error::Singular(format!("I − τA is singular at τ = {tau}")))
}

/// Colored diffusion `Qc` solving `B Qc + Qc Bᵀ = −(A C + C Aᵀ)`.
///
/// Reduces to the white closure at `τ = 0`.
pub fn colored_diffusion(a: &Matrix, tau: f64, c: &Matrix) -> Result<Matrix> {
    ensure_same_order(a, c)?;
    if tau == 0.0 {
        return white_diffusion(a, c);
    }
    let b = memory_factor(a, tau)?;
    solve_two_sided(&b, &(-(a * c + c * a.transpose())))
}

/// Residual `‖A C + C Aᵀ + Qc Bᵀ + B Qc‖` of the colored stationarity relation.
pub fn colored_stationarity_residual(a: &Matrix, tau: f64, qc: &Matrix, c: &Matrix) -> Result<f64> {
    let b = memory_factor(a, tau)?;
    Ok((a * c + c * a.transpose() + qc * b.transpose() + &b * qc).norm())
}

/// `∫₀^s exp(−u G) du`.
fn integrated_decay(g: &Matrix, s: f64) -> Result<Matrix> {
    let n = g.nrows();
    let id = Matrix::identity(n, n);
    let sg_norm = (g * s).amax() * n as f64;
    if sg_norm <= 0.5 {
        // s Σ_k (−sG)^k / (k+1)!
        let mut term = &id * s;
        let mut sum = term.clone();
        for k in 1..40 {
            term = -(g * &term) * (s / (k as f64 + 1.0));
            sum += &term;
            if term.amax() <= 1e-18 * sum.amax() {
                break;
            }
        }
        return Ok(sum);
    }
    if let Ok(g_inv) = inverse(g) {
        let cond = g.amax() * g_inv.amax() * (n * n) as f64;
        if cond < 1e10 {
            return Ok(g_inv * (&id - expm(&(-g), s)?));
        }
    }
    // exp(s [[−G, I], [0, 0]]) carries the integral in its upper-right block.
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-g));
    block.view_mut((0, n), (n, n)).copy_from(&id);
    let e = expm(&block, s)?;
    Ok(e.view((0, n), (n, n)).into_owned())
}

/// Colored correlation function at each lag; `τ = 0` gives the white form.
pub fn colored_correlation(
    a: &Matrix,
    tau: f64,
    qc: &Matrix,
    c: &Matrix,
    lags: &[f64],
) -> Result<Vec<Matrix>> {
    let n = ensure_same_order(a, c)?;
    ensure_same_order(a, qc)?;
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= 0.0 {
        return Err(Error::Unstable(abscissa));
    }
    let b = memory_factor(a, tau)?;
    let forcing = qc * b.transpose();
    let g = a + Matrix::identity(n, n) * if tau > 0.0 { 1.0 / tau } else { 0.0 };
    lags.iter()
        .map(|&s| {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidArgument(format!("bad lag {s}")));
            }
            if s == 0.0 {
                return Ok(c.clone());
            }
            let prop = expm(a, s)?;
            if tau == 0.0 {
                return Ok(prop * c);
            }
            let k = &prop * c + &prop * integrated_decay(&g, s)? * &forcing;
            ensure_finite(&k, "colored correlation")
                .map_err(|_| Error::Computation(format!("non-finite correlation at lag {s}")))?;
            Ok(k)
        })
        .collect()
}

/// Colored correlation on the grid `k dt`, `k = 0..=max_lag`.
pub fn colored_correlation_grid(
    a: &Matrix,
    tau: f64,
    qc: &Matrix,
    c: &Matrix,
    dt: f64,
    max_lag: usize,
) -> Result<LaggedCorrelation> {
    let lags: Vec<f64> = (0..=max_lag).map(|k| k as f64 * dt).collect();
    LaggedCorrelation::from_matrices(dt, colored_correlation(a, tau, qc, c, &lags)?)
}

/// Model correlations at lags `dt..=m dt` for a candidate `(A, τ)`, with `Qc`
/// from the closure. Returns the lag matrices and `Qc`.
fn candidate_correlations(
    a: &Matrix,
    tau: f64,
    c: &Matrix,
    dt: f64,
    m: usize,
) -> Result<(Vec<Matrix>, Matrix)> {
    let n = a.nrows();
    let qc = colored_diffusion(a, tau, c)?;
    let b = memory_factor(a, tau)?;
    let g = a + Matrix::identity(n, n) / tau;
    let step = expm(a, dt)?;

    let closed = inverse(&g)
        .ok()
        .filter(|g_inv| g.amax() * g_inv.amax() * ((n * n) as f64) < 1e10);
    let mats = match closed {
        // K(s) = exp(sA)(C + N) − exp(−s/τ) N with N = G⁻¹ Qc Bᵀ, since A and G commute.
        Some(g_inv) => {
            let nmat = g_inv * &qc * b.transpose();
            let base = c + &nmat;
            let mut prop = Matrix::identity(n, n);
            (1..=m)
                .map(|k| {
                    prop = &step * &prop;
                    let decay = (-(k as f64) * dt / tau).exp();
                    &prop * &base - &nmat * decay
                })
                .collect()
        }
        None => {
            let lags: Vec<f64> = (1..=m).map(|k| k as f64 * dt).collect();
            colored_correlation(a, tau, &qc, c, &lags)?
        }
    };
    Ok((mats, qc))
}

fn misfit(mats: &[Matrix], k: &LaggedCorrelation, weights: &[f64]) -> (f64, Vec<f64>) {
    let per_lag: Vec<f64> = mats
        .iter()
        .enumerate()
        .map(|(i, mk)| (k.at(i + 1).expect("lag in range") - mk).norm())
        .collect();
    let total = weights.iter().zip(&per_lag).map(|(w, r)| w * r * r).sum();
    (total, per_lag)
}

/// Weighted windowed misfit of the colored model; `weights.len()` sets the window.
pub fn colored_objective(
    a: &Matrix,
    tau: f64,
    k: &LaggedCorrelation,
    weights: &[f64],
) -> Result<f64> {
    let (mats, _) = candidate_correlations(a, tau, k.cov(), k.dt(), weights.len())?;
    Ok(misfit(&mats, k, weights).0)
}

struct SearchSpace<'a> {
    k: &'a LaggedCorrelation,
    weights: Vec<f64>,
    n: usize,
    ln_tau_min: f64,
    ln_tau_max: f64,
    stability_penalty: f64,
    diffusion_penalty: f64,
}

impl SearchSpace<'_> {
    fn clamp_ln_tau(&self, ln_tau: f64) -> f64 {
        ln_tau.clamp(self.ln_tau_min, self.ln_tau_max)
    }

    fn evaluate(&self, a: &Matrix, tau: f64) -> f64 {
        let excess = stability_excess(a);
        if !excess.is_finite() {
            return f64::INFINITY;
        }
        let Ok((mats, qc)) =
            candidate_correlations(a, tau, self.k.cov(), self.k.dt(), self.weights.len())
        else {
            return f64::INFINITY;
        };
        let (fit, _) = misfit(&mats, self.k, &self.weights);
        let neg = (-min_sym_eigenvalue(&qc)).max(0.0);
        fit + self.stability_penalty * excess * excess + self.diffusion_penalty * neg
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let a = matrix_from_params(x, self.n);
        let ln_tau = x[self.n * self.n];
        let clamped = self.clamp_ln_tau(ln_tau);
        let outside = ln_tau - clamped;
        self.evaluate(&a, clamped.exp()) + self.stability_penalty * outside * outside
    }
}

/// Joint fit of `(A, τ)` starting from a supplied white fit.
pub fn fit_colored_from(
    k: &LaggedCorrelation,
    cfg: &FitConfig,
    white: &WhiteModel,
) -> Result<ColoredModel> {
    let n = ensure_square(k.cov())?;
    let m = cfg.window_lags(k)?;
    let window_k = k.truncated(m);
    let dt = k.dt();
    let tau_min = 1e-3 * dt;
    let tau_max = 10.0 * cfg.window;
    let space = SearchSpace {
        k: &window_k,
        weights: cfg.lag_weights(m)?,
        n,
        ln_tau_min: tau_min.ln(),
        ln_tau_max: tau_max.ln(),
        stability_penalty: cfg.stability_penalty,
        diffusion_penalty: cfg.diffusion_penalty,
    };

    // Coarse τ scan at the white dynamics.
    let scan_points = 49;
    let tau_scan_best = (0..scan_points)
        .map(|i| {
            let frac = i as f64 / (scan_points - 1) as f64;
            let tau = (space.ln_tau_min + frac * (space.ln_tau_max - space.ln_tau_min)).exp();
            (tau, space.evaluate(&white.a, tau))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty scan");

    let tau0 = dt;
    let with_tau = |a: &Matrix, tau: f64| {
        let mut p = params_from_matrix(a);
        p.push(tau.ln());
        p
    };
    let mut starts = vec![
        (
            "white,tau=scan".to_string(),
            with_tau(&white.a, tau_scan_best.0),
        ),
        ("white,tau=dt".to_string(), with_tau(&white.a, tau0)),
    ];
    let (log_starts, _) = matrix_log_starts(&window_k, cfg, m)?;
    starts.extend(
        log_starts
            .into_iter()
            .map(|(label, a0)| (format!("{label},tau=dt"), with_tau(&a0, tau0))),
    );

    let runs = multi_start(
        |x| space.objective(x),
        &starts,
        &cfg.optimizer,
        cfg.seed ^ 0xc010,
    );
    let best = runs
        .iter()
        .filter(|r| r.minimum.value.is_finite())
        .filter(|r| spectral_abscissa(&matrix_from_params(&r.minimum.x, n)).is_ok_and(|x| x < 0.0))
        .min_by(|a, b| a.minimum.value.total_cmp(&b.minimum.value));
    let reports: Vec<StartReport> = runs.iter().map(|r| r.report.clone()).collect();
    let Some(best) = best else {
        let diag: Vec<String> = reports
            .iter()
            .map(|r| format!("{}: objective {:.3e}", r.label, r.final_objective))
            .collect();
        return Err(Error::FitFailed(format!(
            "no colored start produced stable dynamics ({})",
            diag.join("; ")
        )));
    };

    let a = matrix_from_params(&best.minimum.x, n);
    let tau = space.clamp_ln_tau(best.minimum.x[n * n]).exp();
    let (mats, qc) = candidate_correlations(&a, tau, window_k.cov(), dt, m)?;
    let (fit_residual, lag_residuals) = misfit(&mats, &window_k, &space.weights);
    Ok(ColoredModel {
        qc_positive_definite: is_spd(&qc, 0.0),
        white_limit: tau <= dt,
        a,
        tau,
        qc,
        c: k.cov().clone(),
        fit_residual,
        lag_residuals,
        tau_scan_best,
        starts: reports,
    })
}

/// Joint fit of `(A, τ)`; runs the white fit first for initialization.
pub fn fit_colored(k: &LaggedCorrelation, cfg: &FitConfig) -> Result<ColoredModel> {
    let white = fit_white(k, cfg)?;
    fit_colored_from(k, cfg, &white)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::white::white_correlation;
    use nalgebra::DVector;

    fn a_dagger() -> Matrix {
        Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.2, -0.8])
    }

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn memory_factor_examples() {
        let b = memory_factor(&diag(&[-1.0, -0.5]), 1.0).unwrap();
        assert!((b - diag(&[0.5, 2.0 / 3.0])).amax() < 1e-15);
        assert_eq!(
            memory_factor(&a_dagger(), 0.0).unwrap(),
            Matrix::identity(2, 2)
        );
        let b = memory_factor(&a_dagger(), 2.0).unwrap();
        let m = Matrix::from_row_slice(2, 2, &[3.0, -1.0, 0.4, 2.6]);
        assert!(
            (&b * (Matrix::identity(2, 2) - a_dagger() * 2.0) - Matrix::identity(2, 2)).amax()
                < 1e-15
        );
        assert!((&b * m - Matrix::identity(2, 2)).amax() < 1e-15);
        assert!(memory_factor(&diag(&[1.0, -1.0]), 1.0).is_err());
        assert!(memory_factor(&a_dagger(), -1.0).is_err());
    }

    #[test]
    fn colored_diffusion_examples() {
        let c = Matrix::identity(2, 2);
        let qc = colored_diffusion(&diag(&[-1.0, -0.5]), 1.0, &c).unwrap();
        assert!((qc - diag(&[2.0, 0.75])).amax() < 1e-14);
        let spd = Matrix::from_row_slice(2, 2, &[1.3, 0.4, 0.4, 0.9]);
        assert_eq!(
            colored_diffusion(&a_dagger(), 0.0, &spd).unwrap(),
            white_diffusion(&a_dagger(), &spd).unwrap()
        );
        let qc = colored_diffusion(&a_dagger(), 2.0, &c).unwrap();
        let r = colored_stationarity_residual(&a_dagger(), 2.0, &qc, &c).unwrap();
        assert!(r <= 1e-10 * qc.norm());
        assert!(is_spd(&qc, 0.0));
    }

    #[test]
    fn correlation_at_zero_is_covariance() {
        let c = Matrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.8]);
        let qc = colored_diffusion(&a_dagger(), 2.0, &c).unwrap();
        let k = colored_correlation(&a_dagger(), 2.0, &qc, &c, &[0.0]).unwrap();
        assert_eq!(k[0], c);
    }

    #[test]
    fn scalar_correlation_matches_quadrature() {
        let (a, tau, c) = (-1.0f64, 1.0f64, 1.0f64);
        let am = Matrix::from_element(1, 1, a);
        let cm = Matrix::from_element(1, 1, c);
        let q = colored_diffusion(&am, tau, &cm).unwrap()[(0, 0)];
        assert!((q - 2.0).abs() < 1e-14);
        let b = 1.0 / (1.0 - tau * a);
        for s in [0.1f64, 0.5, 1.0, 3.0] {
            // Composite Simpson on the integrand of the memory term.
            let intervals = 20_000;
            let h = s / intervals as f64;
            let f = |u: f64| (-u * (a + 1.0 / tau)).exp();
            let mut acc = f(0.0) + f(s);
            for i in 1..intervals {
                acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let integral = acc * h / 3.0;
            let want = (a * s).exp() * c + (a * s).exp() * integral * q * b;
            let got = colored_correlation(&am, tau, &Matrix::from_element(1, 1, q), &cm, &[s])
                .unwrap()[0][(0, 0)];
            assert!((got - want).abs() < 1e-8, "s = {s}: {got} vs {want}");
        }
    }

    #[test]
    fn near_singular_g_uses_block_exponential() {
        // A has eigenvalue −1/τ, so A + I/τ is singular.
        let a = diag(&[-0.5, -1.0]);
        let tau = 2.0;
        let c = Matrix::identity(2, 2);
        let qc = colored_diffusion(&a, tau, &c).unwrap();
        let k = colored_correlation(&a, tau, &qc, &c, &[1.5]).unwrap();
        // For the first component G = 0, so the integral is s exactly.
        let b0 = 1.0 / (1.0 + tau * 0.5);
        let want = (-0.5f64 * 1.5).exp() * (1.0 + 1.5 * qc[(0, 0)] * b0);
        assert!((k[0][(0, 0)] - want).abs() < 1e-12);
        // Grid fast path falls back to the same values.
        let (mats, _) = candidate_correlations(&a, tau, &c, 0.5, 3).unwrap();
        assert!((&mats[2] - &k[0]).amax() < 1e-12);
    }

    #[test]
    fn grid_path_matches_direct_evaluation() {
        let c = Matrix::from_row_slice(2, 2, &[1.1, 0.2, 0.2, 1.2]);
        let (mats, qc) = candidate_correlations(&a_dagger(), 2.0, &c, 0.1, 20).unwrap();
        let lags: Vec<f64> = (1..=20).map(|k| k as f64 * 0.1).collect();
        let direct = colored_correlation(&a_dagger(), 2.0, &qc, &c, &lags).unwrap();
        for (g, d) in mats.iter().zip(&direct) {
            assert!((g - d).amax() < 1e-12);
        }
    }

    #[test]
    fn white_limit_is_continuous() {
        let c = Matrix::from_row_slice(2, 2, &[1.1, 0.2, 0.2, 1.2]);
        let a = a_dagger();
        let lags = [0.1, 0.5, 1.0, 2.0];
        let qc = colored_diffusion(&a, 1e-6, &c).unwrap();
        let colored = colored_correlation(&a, 1e-6, &qc, &c, &lags).unwrap();
        let white = white_correlation(&a, &c, &lags).unwrap();
        for (k1, k2) in colored.iter().zip(&white) {
            assert!((k1 - k2).norm() <= 1e-4);
        }
    }

    #[test]
    fn colored_autocorrelation_is_concave_at_origin() {
        let c = Matrix::identity(2, 2);
        let qc = colored_diffusion(&a_dagger(), 2.0, &c).unwrap();
        let h = 0.05;
        let k = colored_correlation(&a_dagger(), 2.0, &qc, &c, &[0.0, h, 2.0 * h]).unwrap();
        for i in 0..2 {
            assert!(k[2][(i, i)] - 2.0 * k[1][(i, i)] + k[0][(i, i)] < 0.0);
        }
    }

    #[test]
    fn fit_recovers_noise_free_colored_system() {
        let a = a_dagger();
        let c = Matrix::identity(2, 2);
        let qc = colored_diffusion(&a, 2.0, &c).unwrap();
        let k = colored_correlation_grid(&a, 2.0, &qc, &c, 0.1, 20).unwrap();
        let cfg = FitConfig::default().with_window(2.0);
        let model = fit_colored(&k, &cfg).unwrap();
        assert!((model.tau - 2.0).abs() <= 0.05 * 2.0, "tau {}", model.tau);
        assert!((&model.a - &a).norm() <= 1e-3, "{}", model.a);
        assert!(!model.white_limit);
        let r = colored_stationarity_residual(&model.a, model.tau, &model.qc, &model.c).unwrap();
        assert!(r <= 1e-10 * model.qc.norm());
        assert_eq!(model.correlation(0.0).unwrap(), *k.cov());
        assert!(model.fit_residual <= model.tau_scan_best.1);
    }
}
