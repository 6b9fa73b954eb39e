//! Synthetic trajectories of linear systems under white or colored forcing.
//!
//! Colored forcing is simulated through the augmented white-noise system
//!
//! ```text
//! d/dt [x; η] = [[A, S], [0, −I/τ]] [x; η] + (1/τ) [0; ξ],   S = sqrt(2 Qc),
//! ```
//!
//! so `η` has stationary covariance `I / (2τ)` and correlation `exp(−|s|/τ)`.
//! The default scheme is the exact Gaussian transition of the (augmented)
//! process, so sample statistics carry no step-size bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::colored::memory_factor;
use crate::error::{Error, Result};
use crate::linalg::{
    ensure_same_order, expm, is_spd, psd_sqrt, solve_two_sided, spectral_abscissa, symmetrize,
    Matrix,
};
use crate::timeseries::TimeSeriesMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Exact,
    EulerMaruyama,
}

/// Parameters of a simulation run. With `tau > 0`, `q` is the colored diffusion `Qc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub a: Matrix,
    pub q: Matrix,
    pub tau: f64,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub scheme: Scheme,
}

impl SimSpec {
    pub fn white(a: Matrix, q: Matrix, dt: f64, steps: usize, seed: u64) -> Self {
        Self {
            a,
            q,
            tau: 0.0,
            dt,
            steps,
            seed,
            burn_in: 0,
            scheme: Scheme::Exact,
        }
    }

    pub fn colored(a: Matrix, qc: Matrix, tau: f64, dt: f64, steps: usize, seed: u64) -> Self {
        Self {
            tau,
            ..Self::white(a, qc, dt, steps, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_same_order(&self.a, &self.q)?;
        let abscissa = spectral_abscissa(&self.a)?;
        if abscissa >= 0.0 {
            return Err(Error::Unstable(abscissa));
        }
        if !is_spd(&self.q, 0.0) {
            return Err(Error::InvalidArgument(
                "diffusion must be symmetric positive definite".into(),
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be non-negative, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// Stationary state covariance of the specified system.
///
/// White: `A C + C Aᵀ = −2Q`. Colored: `A C + C Aᵀ = −(Qc Bᵀ + B Qc)`.
pub fn stationary_covariance(spec: &SimSpec) -> Result<Matrix> {
    spec.validate()?;
    let rhs = if spec.tau == 0.0 {
        &spec.q * -2.0
    } else {
        let b = memory_factor(&spec.a, spec.tau)?;
        -(&spec.q * b.transpose() + &b * &spec.q)
    };
    solve_two_sided(&spec.a, &rhs)
}

/// Drift and stationary covariance of the (possibly augmented) state `z`.
fn augmented_system(spec: &SimSpec) -> Result<(Matrix, Matrix)> {
    let n = spec.n();
    let c = stationary_covariance(spec)?;
    if spec.tau == 0.0 {
        return Ok((spec.a.clone(), c));
    }
    let tau = spec.tau;
    let s = psd_sqrt(&(&spec.q * 2.0));
    let b = memory_factor(&spec.a, tau)?;
    let mut drift = Matrix::zeros(2 * n, 2 * n);
    drift.view_mut((0, 0), (n, n)).copy_from(&spec.a);
    drift.view_mut((0, n), (n, n)).copy_from(&s);
    drift
        .view_mut((n, n), (n, n))
        .copy_from(&(Matrix::identity(n, n) * (-1.0 / tau)));

    let cross = &b * &s * 0.5;
    let mut sigma = Matrix::zeros(2 * n, 2 * n);
    sigma.view_mut((0, 0), (n, n)).copy_from(&c);
    sigma.view_mut((0, n), (n, n)).copy_from(&cross);
    sigma.view_mut((n, 0), (n, n)).copy_from(&cross.transpose());
    sigma
        .view_mut((n, n), (n, n))
        .copy_from(&(Matrix::identity(n, n) / (2.0 * tau)));
    Ok((drift, sigma))
}

/// Simulated states, plus the hidden forcing `η` for colored runs.
#[derive(Debug, Clone)]
pub struct SimPath {
    pub states: TimeSeriesMatrix,
    pub noise: Option<TimeSeriesMatrix>,
}

fn draw(rng: &mut ChaCha8Rng, dim: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Simulate and keep both the state and (for colored runs) the forcing.
pub fn simulate_path(spec: &SimSpec) -> Result<SimPath> {
    spec.validate()?;
    let n = spec.n();
    let (drift, sigma) = augmented_system(spec)?;
    let dim = drift.nrows();
    let total = spec.burn_in + spec.steps;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (transition, noise_factor) = match spec.scheme {
        Scheme::Exact => {
            let phi = expm(&drift, spec.dt)?;
            let w = symmetrize(&(&sigma - &phi * &sigma * phi.transpose()));
            (phi, psd_sqrt(&w))
        }
        Scheme::EulerMaruyama => {
            let phi = Matrix::identity(dim, dim) + &drift * spec.dt;
            let mut g = Matrix::zeros(dim, dim);
            if spec.tau == 0.0 {
                g.copy_from(&psd_sqrt(&(&spec.q * 2.0)));
            } else {
                g.view_mut((n, n), (n, n))
                    .copy_from(&(Matrix::identity(n, n) / spec.tau));
            }
            (phi, g * spec.dt.sqrt())
        }
    };

    let mut z = psd_sqrt(&sigma) * draw(&mut rng, dim);
    let mut out = Matrix::zeros(dim, spec.steps);
    for k in 0..total {
        if k >= spec.burn_in {
            out.column_mut(k - spec.burn_in).copy_from(&z);
        }
        let kick = &noise_factor * draw(&mut rng, dim);
        z = &transition * z + kick;
    }

    let states = TimeSeriesMatrix::new(out.rows(0, n).into_owned(), spec.dt)?;
    let noise = if dim > n {
        Some(TimeSeriesMatrix::new(out.rows(n, n).into_owned(), spec.dt)?)
    } else {
        None
    };
    Ok(SimPath { states, noise })
}

/// Simulate the observable state only.
pub fn simulate(spec: &SimSpec) -> Result<TimeSeriesMatrix> {
    Ok(simulate_path(spec)?.states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colored::{colored_diffusion, colored_stationarity_residual};
    use crate::timeseries::lagged_correlation;
    use nalgebra::DVector;

    fn a_dagger() -> Matrix {
        Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.2, -0.8])
    }

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn stationary_covariance_examples() {
        let spec = SimSpec::white(diag(&[-1.0, -0.5]), diag(&[1.0, 0.5]), 0.1, 10, 0);
        assert!((stationary_covariance(&spec).unwrap() - Matrix::identity(2, 2)).amax() < 1e-14);
        let spec = SimSpec::white(-Matrix::identity(2, 2), Matrix::identity(2, 2), 0.1, 10, 0);
        assert!((stationary_covariance(&spec).unwrap() - Matrix::identity(2, 2)).amax() < 1e-14);
        let spec = SimSpec::colored(a_dagger(), diag(&[2.0, 0.75]), 1.0, 0.1, 10, 0);
        let c = stationary_covariance(&spec).unwrap();
        let r = colored_stationarity_residual(&spec.a, 1.0, &spec.q, &c).unwrap();
        assert!(r <= 1e-10 * spec.q.norm());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let ok = SimSpec::white(a_dagger(), Matrix::identity(2, 2), 0.1, 10, 0);
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.a = diag(&[0.1, -1.0]);
        assert!(matches!(bad.validate(), Err(Error::Unstable(_))));
        let mut bad = ok.clone();
        bad.q = diag(&[1.0, -1.0]);
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.dt = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.steps = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SimSpec::colored(a_dagger(), Matrix::identity(2, 2), 2.0, 0.1, 500, 42);
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a, b);
        let c = simulate(&SimSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn burn_in_discards_leading_samples() {
        let mut spec = SimSpec::white(a_dagger(), Matrix::identity(2, 2), 0.1, 50, 1);
        let full = simulate(&SimSpec {
            steps: 60,
            ..spec.clone()
        })
        .unwrap();
        spec.burn_in = 10;
        let trimmed = simulate(&spec).unwrap();
        assert_eq!(trimmed.len(), 50);
        assert_eq!(trimmed.data().column(0), full.data().column(10));
    }

    #[test]
    fn white_sample_covariance_matches_stationary() {
        let spec = SimSpec::white(a_dagger(), Matrix::identity(2, 2), 0.1, 200_000, 7);
        let x = simulate(&spec).unwrap();
        let k = lagged_correlation(&x, 0).unwrap();
        let c = stationary_covariance(&spec).unwrap();
        assert!((k.cov() - c).amax() < 0.05);
    }

    #[test]
    fn colored_forcing_has_exponential_memory() {
        let c = Matrix::identity(2, 2);
        let qc = colored_diffusion(&a_dagger(), 2.0, &c).unwrap();
        let spec = SimSpec::colored(a_dagger(), qc, 2.0, 0.1, 200_000, 11);
        let path = simulate_path(&spec).unwrap();
        let eta = path.noise.unwrap();
        let k = lagged_correlation(&eta, 40).unwrap();
        for i in 0..2 {
            let var = k.cov()[(i, i)];
            assert!((var - 0.25).abs() < 0.02, "variance {var}");
            // Least-squares slope of log autocorrelation over s in (0, τ].
            let pts: Vec<(f64, f64)> = (1..=20)
                .map(|lag| (lag as f64 * 0.1, (k.at(lag).unwrap()[(i, i)] / var).ln()))
                .collect();
            let sxx: f64 = pts.iter().map(|(s, _)| s * s).sum();
            let sxy: f64 = pts.iter().map(|(s, y)| s * y).sum();
            let e_fold = -sxx / sxy;
            assert!((e_fold - 2.0).abs() <= 0.2, "e-folding {e_fold}");
        }
    }

    #[test]
    fn exact_transition_has_no_step_bias() {
        // Regressing x_{k+1} on x_k must recover exp(A dt) even at a coarse step.
        let dt = 0.5;
        let spec = SimSpec::white(a_dagger(), Matrix::identity(2, 2), dt, 200_000, 5);
        let x = simulate(&spec).unwrap();
        let k = lagged_correlation(&x, 1).unwrap();
        let est = k.at(1).unwrap() * k.cov().clone().try_inverse().unwrap();
        let want = expm(&a_dagger(), dt).unwrap();
        assert!((est - want).amax() < 0.02);
    }

    #[test]
    fn euler_maruyama_mode_runs_and_is_close_for_small_steps() {
        let mut spec = SimSpec::white(a_dagger(), Matrix::identity(2, 2), 0.01, 200_000, 3);
        spec.scheme = Scheme::EulerMaruyama;
        let x = simulate(&spec).unwrap();
        let c = stationary_covariance(&spec).unwrap();
        let k = lagged_correlation(&x, 0).unwrap();
        assert!((k.cov() - c).amax() < 0.15);
    }

    #[test]
    fn sample_mean_is_near_zero() {
        let spec = SimSpec::white(a_dagger(), Matrix::identity(2, 2), 0.1, 200_000, 9);
        let x = simulate(&spec).unwrap();
        let c = stationary_covariance(&spec).unwrap();
        for i in 0..2 {
            let mean = x.data().row(i).mean();
            // Effective sample size is reduced by the ~1 time-unit memory (≈ 1/dt samples).
            let bound = 5.0 * c[(i, i)].sqrt() * (10.0 / 200_000f64).sqrt();
            assert!(mean.abs() <= bound, "mean {mean}");
        }
    }
}
