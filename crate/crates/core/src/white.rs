//! White-noise linear inverse model.
//!
//! Under white forcing the state is an Ornstein-Uhlenbeck process whose
//! correlation function is `K(s) = exp(sA) C`. The dynamics are recovered
//! either from one lag through the matrix logarithm, or by minimizing the
//! weighted misfit to the observed correlations over a window of lags.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{multi_start, FitConfig, StartReport};
use crate::linalg::{
    ensure_same_order, ensure_square, expm, inverse, is_spd, logm_principal, spectral_abscissa,
    symmetrize, Matrix,
};
use crate::timeseries::LaggedCorrelation;

/// Fitted white-noise model `dx/dt = A x + sqrt(2Q) ξ`.
#[derive(Debug, Clone, Serialize)]
pub struct WhiteModel {
    pub a: Matrix,
    pub q: Matrix,
    pub c: Matrix,
    /// Objective value at the returned `A`.
    pub fit_residual: f64,
    /// Sampling error can push `Q` out of the positive-definite cone.
    pub q_positive_definite: bool,
    /// Frobenius misfit at each window lag, `dt, 2dt, …`.
    pub lag_residuals: Vec<f64>,
    pub starts: Vec<StartReport>,
}

impl WhiteModel {
    /// Model correlation at time lag `s ≥ 0`.
    pub fn correlation(&self, s: f64) -> Result<Matrix> {
        Ok(expm(&self.a, s)? * &self.c)
    }
}

/// Matrix-log estimate `A₀(ρ) = log(K(ρ) C⁻¹) / ρ`.
pub fn single_lag_dynamics(k: &LaggedCorrelation, rho: f64) -> Result<Matrix> {
    let idx = match k.lag_index(rho) {
        Some(i) if i > 0 => i,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "lag {rho} is not a positive multiple of dt = {} within range",
                k.dt()
            )))
        }
    };
    single_lag_dynamics_at(k, idx)
}

pub(crate) fn single_lag_dynamics_at(k: &LaggedCorrelation, idx: usize) -> Result<Matrix> {
    let c_inv = inverse(k.cov())?;
    let propagator = k.at(idx).expect("lag index in range") * c_inv;
    Ok(logm_principal(&propagator)? / (idx as f64 * k.dt()))
}

/// `K(s) = exp(sA) C` for each lag in `lags`.
pub fn white_correlation(a: &Matrix, c: &Matrix, lags: &[f64]) -> Result<Vec<Matrix>> {
    ensure_same_order(a, c)?;
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= 0.0 {
        return Err(Error::Unstable(abscissa));
    }
    lags.iter().map(|&s| Ok(expm(a, s)? * c)).collect()
}

/// `K(k dt) = exp(k dt A) C` on the uniform grid `k = 0..=max_lag`.
pub fn white_correlation_grid(
    a: &Matrix,
    c: &Matrix,
    dt: f64,
    max_lag: usize,
) -> Result<LaggedCorrelation> {
    let lags: Vec<f64> = (0..=max_lag).map(|k| k as f64 * dt).collect();
    LaggedCorrelation::from_matrices(dt, white_correlation(a, c, &lags)?)
}

/// Fluctuation-dissipation closure `Q = −(A C + C Aᵀ) / 2`.
pub fn white_diffusion(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    ensure_same_order(a, c)?;
    Ok(symmetrize(&(-(a * c + c * a.transpose()) * 0.5)))
}

/// Per-lag Frobenius misfits `‖K_obs(k dt) − exp(k dt A) C_obs‖` for `k = 1..=m`.
fn lag_misfits(a: &Matrix, k: &LaggedCorrelation, m: usize) -> Result<Vec<f64>> {
    let step = expm(a, k.dt())?;
    let mut prop = k.cov().clone();
    let mut out = Vec::with_capacity(m);
    for lag in 1..=m {
        prop = &step * prop;
        out.push((k.at(lag).expect("lag in range") - &prop).norm());
    }
    Ok(out)
}

/// Weighted windowed misfit `Σ w(s) ‖K_obs(s) − exp(sA) C_obs‖²` over lags `1..=m`.
pub fn white_objective(a: &Matrix, k: &LaggedCorrelation, weights: &[f64]) -> Result<f64> {
    let misfits = lag_misfits(a, k, weights.len())?;
    Ok(weights.iter().zip(misfits).map(|(w, r)| w * r * r).sum())
}

pub(crate) fn matrix_from_params(x: &[f64], n: usize) -> Matrix {
    Matrix::from_row_slice(n, n, &x[..n * n])
}

pub(crate) fn params_from_matrix(a: &Matrix) -> Vec<f64> {
    let n = a.nrows();
    (0..n * n).map(|i| a[(i / n, i % n)]).collect()
}

pub(crate) fn stability_excess(a: &Matrix) -> f64 {
    spectral_abscissa(a).map_or(f64::INFINITY, |x| x.max(0.0))
}

/// A labeled starting matrix.
pub(crate) type LabeledStart = (String, Matrix);

/// Starting guesses `A₀(ρ)` from the configured lags; branch failures are skipped.
pub(crate) fn matrix_log_starts(
    k: &LaggedCorrelation,
    cfg: &FitConfig,
    m: usize,
) -> Result<(Vec<LabeledStart>, Vec<String>)> {
    let mut starts = Vec::new();
    let mut skipped = Vec::new();
    for idx in cfg.init_lag_indices(k, m)? {
        let rho = (idx as f64 * k.dt() * 1e9).round() / 1e9;
        match single_lag_dynamics_at(k, idx) {
            Ok(a0) => starts.push((format!("rho={rho}"), a0)),
            Err(e) => skipped.push(format!("rho={rho}: {e}")),
        }
    }
    Ok((starts, skipped))
}

/// Fit `A` by minimizing the windowed correlation misfit with `C = C_obs`.
///
/// Starts from every usable matrix-log guess; if none is usable, from
/// `−I / l`. The returned `A` is always strictly stable.
pub fn fit_white(k: &LaggedCorrelation, cfg: &FitConfig) -> Result<WhiteModel> {
    let n = ensure_square(k.cov())?;
    let m = cfg.window_lags(k)?;
    let weights = cfg.lag_weights(m)?;
    let window_k = k.truncated(m);

    let (mut starts, skipped) = matrix_log_starts(&window_k, cfg, m)?;
    if starts.is_empty() {
        starts.push((
            "fallback=-I/l".to_string(),
            Matrix::identity(n, n) * (-1.0 / cfg.window),
        ));
    }
    let penalty = cfg.stability_penalty;
    let objective = |x: &[f64]| -> f64 {
        let a = matrix_from_params(x, n);
        let excess = stability_excess(&a);
        if !excess.is_finite() {
            return f64::INFINITY;
        }
        match white_objective(&a, &window_k, &weights) {
            Ok(v) => v + penalty * excess * excess,
            Err(_) => f64::INFINITY,
        }
    };
    let start_params: Vec<(String, Vec<f64>)> = starts
        .iter()
        .map(|(label, a)| (label.clone(), params_from_matrix(a)))
        .collect();
    let runs = multi_start(objective, &start_params, &cfg.optimizer, cfg.seed);

    let best = runs
        .iter()
        .filter(|r| r.minimum.value.is_finite())
        .filter(|r| spectral_abscissa(&matrix_from_params(&r.minimum.x, n)).is_ok_and(|x| x < 0.0))
        .min_by(|a, b| a.minimum.value.total_cmp(&b.minimum.value));
    let reports: Vec<StartReport> = runs.iter().map(|r| r.report.clone()).collect();
    let Some(best) = best else {
        let mut diag: Vec<String> = skipped;
        diag.extend(reports.iter().map(|r| {
            format!(
                "{}: objective {:.3e}, unstable or non-finite",
                r.label, r.final_objective
            )
        }));
        return Err(Error::FitFailed(format!(
            "no start produced stable dynamics ({})",
            diag.join("; ")
        )));
    };

    let a = matrix_from_params(&best.minimum.x, n);
    let c = k.cov().clone();
    let q = white_diffusion(&a, &c)?;
    let lag_residuals = lag_misfits(&a, &window_k, m)?;
    Ok(WhiteModel {
        fit_residual: white_objective(&a, &window_k, &weights)?,
        q_positive_definite: is_spd(&q, 0.0),
        a,
        q,
        c,
        lag_residuals,
        starts: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rel_frobenius, solve_two_sided};
    use nalgebra::DVector;

    fn a_dagger() -> Matrix {
        Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.2, -0.8])
    }

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_column_slice(v))
    }

    fn lyapunov_cov(a: &Matrix, q: &Matrix) -> Matrix {
        solve_two_sided(a, &(q * -2.0)).unwrap()
    }

    fn cfg(window: f64) -> FitConfig {
        FitConfig::default().with_window(window)
    }

    #[test]
    fn single_lag_recovers_diagonal() {
        let k =
            white_correlation_grid(&diag(&[-1.0, -0.5]), &Matrix::identity(2, 2), 0.5, 4).unwrap();
        let a = single_lag_dynamics(&k, 1.0).unwrap();
        assert!((a - diag(&[-1.0, -0.5])).amax() < 1e-12);
    }

    #[test]
    fn single_lag_recovers_coupled_dynamics() {
        let a = a_dagger();
        let c = lyapunov_cov(&a, &Matrix::identity(2, 2));
        let k = white_correlation_grid(&a, &c, 0.5, 4).unwrap();
        for rho in [0.5, 1.0] {
            let est = single_lag_dynamics(&k, rho).unwrap();
            assert!((est - &a).norm() < 1e-8, "rho = {rho}");
        }
    }

    #[test]
    fn single_lag_branch_failure_and_bad_lag() {
        let c = Matrix::identity(2, 2);
        let k = LaggedCorrelation::from_matrices(1.0, vec![c.clone(), diag(&[-0.3, 0.5])]).unwrap();
        assert!(matches!(
            single_lag_dynamics(&k, 1.0),
            Err(Error::BranchCut { .. })
        ));
        assert!(single_lag_dynamics(&k, 0.0).is_err());
        assert!(single_lag_dynamics(&k, 0.7).is_err());
    }

    #[test]
    fn white_correlation_examples() {
        let c = Matrix::identity(2, 2);
        let ks = white_correlation(&diag(&[-1.0, -0.5]), &c, &[0.0, 1.0]).unwrap();
        assert_eq!(ks[0], c);
        assert!((&ks[1] - diag(&[(-1.0f64).exp(), (-0.5f64).exp()])).amax() < 1e-15);
        assert!(matches!(
            white_correlation(&diag(&[0.1, -1.0]), &c, &[1.0]),
            Err(Error::Unstable(_))
        ));
    }

    #[test]
    fn white_correlation_matches_moment_ode() {
        // Integrate K' = A K from K(0) = C with classical RK4 at a fine step.
        let a = a_dagger();
        let c = Matrix::identity(2, 2);
        let steps = 20_000;
        let h = 2.0 / steps as f64;
        let mut kk = c.clone();
        for _ in 0..steps {
            let k1 = &a * &kk;
            let k2 = &a * (&kk + &k1 * (h / 2.0));
            let k3 = &a * (&kk + &k2 * (h / 2.0));
            let k4 = &a * (&kk + &k3 * h);
            kk += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        let closed = &white_correlation(&a, &c, &[2.0]).unwrap()[0];
        assert!((closed - kk).amax() < 1e-12);
    }

    #[test]
    fn white_diffusion_examples() {
        let c = Matrix::identity(2, 2);
        let q = white_diffusion(&diag(&[-1.0, -0.5]), &c).unwrap();
        assert!((q - diag(&[1.0, 0.5])).amax() < 1e-15);
        let spd = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let q = white_diffusion(&(-Matrix::identity(2, 2)), &spd).unwrap();
        assert!((q - &spd).amax() < 1e-15);
        let q = white_diffusion(&a_dagger(), &c).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[1.0, -0.15, -0.15, 0.8]);
        assert!((q - want).amax() < 1e-15);
    }

    #[test]
    fn fit_recovers_noise_free_dynamics() {
        let a = a_dagger();
        let c = lyapunov_cov(&a, &Matrix::identity(2, 2));
        let k = white_correlation_grid(&a, &c, 0.1, 30).unwrap();
        let model = fit_white(&k, &cfg(2.0)).unwrap();
        assert!((&model.a - &a).norm() < 1e-6, "{}", model.a);
        let fd = &model.a * &model.c + &model.c * model.a.transpose() + &model.q * 2.0;
        assert!(fd.norm() <= 1e-10 * model.q.norm());
        assert!(model.q_positive_definite);
        assert_eq!(model.correlation(0.0).unwrap(), *k.cov());
    }

    #[test]
    fn fit_keeps_decoupled_dynamics_diagonal() {
        let a = diag(&[-0.7, -0.3]);
        let k = white_correlation_grid(&a, &diag(&[2.0, 0.5]), 0.25, 16).unwrap();
        let model = fit_white(&k, &cfg(2.0)).unwrap();
        assert!((&model.a - &a).amax() < 1e-6);
        assert!(model.a[(0, 1)].abs() < 1e-6 && model.a[(1, 0)].abs() < 1e-6);
    }

    #[test]
    fn fit_never_worse_than_its_starts_and_is_stable() {
        let a = a_dagger();
        let c = lyapunov_cov(&a, &Matrix::identity(2, 2));
        let mut k = white_correlation_grid(&a, &c, 0.2, 20).unwrap();
        // Perturb the correlations so the starts disagree.
        let mats: Vec<Matrix> = k
            .matrices()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m + Matrix::from_fn(2, 2, |r, s| 0.01 * ((i * 7 + r * 3 + s) % 5) as f64 - 0.02)
            })
            .collect();
        k = LaggedCorrelation::from_matrices(0.2, mats).unwrap();
        let model = fit_white(&k, &cfg(2.0)).unwrap();
        for s in &model.starts {
            assert!(model.fit_residual <= s.initial_objective + 1e-15, "{s:?}");
        }
        assert!(spectral_abscissa(&model.a).unwrap() < 0.0);
        assert_eq!(model.lag_residuals.len(), 10);
    }

    #[test]
    fn fit_agrees_with_single_lag_on_exact_input() {
        let a = Matrix::from_row_slice(2, 2, &[-0.4, 0.2, 0.1, -0.9]);
        let c = lyapunov_cov(&a, &diag(&[1.0, 0.4]));
        let k = white_correlation_grid(&a, &c, 0.5, 8).unwrap();
        let model = fit_white(&k, &cfg(4.0)).unwrap();
        for idx in 1..=8 {
            let single = single_lag_dynamics(&k, idx as f64 * 0.5).unwrap();
            assert!(rel_frobenius(&model.a, &single) < 1e-6);
        }
    }

    #[test]
    fn fit_is_equivariant_under_diagonal_scaling() {
        let a = a_dagger();
        let c = lyapunov_cov(&a, &Matrix::identity(2, 2));
        let d = diag(&[3.0, 0.5]);
        let d_inv = diag(&[1.0 / 3.0, 2.0]);
        let k = white_correlation_grid(&a, &c, 0.1, 20).unwrap();
        let scaled: Vec<Matrix> = k.matrices().iter().map(|m| &d * m * &d).collect();
        let ks = LaggedCorrelation::from_matrices(0.1, scaled).unwrap();
        let base = fit_white(&k, &cfg(2.0)).unwrap();
        let fit = fit_white(&ks, &cfg(2.0)).unwrap();
        assert!((fit.a - &d * base.a * &d_inv).amax() < 1e-6);
    }

    #[test]
    fn fit_rejects_bad_configuration() {
        let k = white_correlation_grid(&a_dagger(), &Matrix::identity(2, 2), 0.1, 5).unwrap();
        assert!(matches!(
            fit_white(&k, &cfg(2.0)),
            Err(Error::InsufficientData(_))
        ));
        assert!(fit_white(&k, &cfg(0.05)).is_err());
        let mut bad = cfg(0.5);
        bad.weights = vec![0.0; 5];
        assert!(fit_white(&k, &bad).is_err());
        bad.weights = vec![1.0; 3];
        assert!(fit_white(&k, &bad).is_err());
    }

    #[test]
    fn fit_falls_back_when_every_log_fails() {
        // K(dt) C⁻¹ has a negative eigenvalue at every lag, so no matrix-log start exists.
        let c = Matrix::identity(1, 1);
        let mats = vec![c.clone(), -c.clone() * 0.5, c.clone() * 0.25];
        let k = LaggedCorrelation::from_matrices(1.0, mats).unwrap();
        let mut conf = cfg(2.0);
        conf.init_lags = vec![1.0];
        let model = fit_white(&k, &conf).unwrap();
        assert_eq!(model.starts[0].label, "fallback=-I/l");
        assert!(model.a[(0, 0)] < 0.0);
    }
}
