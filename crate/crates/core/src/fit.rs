//! Configuration and multi-start machinery shared by the white and colored fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, Minimum, NelderMeadOptions};
use crate::timeseries::LaggedCorrelation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Initial simplex edge, relative to the magnitude of each starting coordinate.
    pub simplex_scale: f64,
    /// Randomly perturbed re-runs per starting point.
    pub restarts: usize,
    pub tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 4000,
            simplex_scale: 0.2,
            restarts: 2,
            tol: 1e-10,
        }
    }
}

/// Settings for the windowed correlation fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Window length `l` in time units; lags `dt, 2dt, …` up to `l` enter the objective.
    pub window: f64,
    /// Per-lag weights for the lags in the window; empty means uniform.
    pub weights: Vec<f64>,
    pub optimizer: OptimizerConfig,
    /// Lags ρ (time units) used for the matrix-log starting guesses; empty means every lag in the window.
    pub init_lags: Vec<f64>,
    pub stability_penalty: f64,
    /// Penalty on negative eigenvalues of the colored diffusion during the search.
    pub diffusion_penalty: f64,
    /// Seed for restart perturbations.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            window: 4.0,
            weights: Vec::new(),
            optimizer: OptimizerConfig::default(),
            init_lags: Vec::new(),
            stability_penalty: 1e4,
            diffusion_penalty: 1e2,
            seed: 0x5eed,
        }
    }
}

impl FitConfig {
    pub fn with_window(mut self, window: f64) -> Self {
        self.window = window;
        self
    }

    /// Number of positive lags on the grid of `k` inside the window.
    pub fn window_lags(&self, k: &LaggedCorrelation) -> Result<usize> {
        if !(self.window.is_finite() && self.window > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "window must be positive, got {}",
                self.window
            )));
        }
        let m = (self.window / k.dt() + 1e-9).floor() as usize;
        if m == 0 {
            return Err(Error::InvalidArgument(format!(
                "window {} is shorter than the sampling interval {}",
                self.window,
                k.dt()
            )));
        }
        if m > k.max_lag() {
            return Err(Error::InsufficientData(format!(
                "window needs lags up to {m}, correlation only has {}",
                k.max_lag()
            )));
        }
        Ok(m)
    }

    /// Weights for lags `1..=m`.
    pub fn lag_weights(&self, m: usize) -> Result<Vec<f64>> {
        if self.weights.is_empty() {
            return Ok(vec![1.0; m]);
        }
        if self.weights.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{} weights supplied for {m} window lags",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "weights must be non-negative".into(),
            ));
        }
        if self.weights.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidArgument("weights are all zero".into()));
        }
        Ok(self.weights.clone())
    }

    /// Lag indices used for matrix-log starting guesses.
    pub fn init_lag_indices(&self, k: &LaggedCorrelation, m: usize) -> Result<Vec<usize>> {
        if self.init_lags.is_empty() {
            return Ok((1..=m).collect());
        }
        self.init_lags
            .iter()
            .map(|&rho| match k.lag_index(rho) {
                Some(i) if i > 0 => Ok(i),
                _ => Err(Error::InvalidArgument(format!(
                    "initial lag {rho} is not a positive multiple of dt within range"
                ))),
            })
            .collect()
    }
}

/// Outcome of one starting point of a multi-start fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartReport {
    /// Label of the start (e.g. `rho=1`).
    pub label: String,
    pub initial_objective: f64,
    pub final_objective: f64,
}

pub(crate) struct StartRun {
    pub report: StartReport,
    pub minimum: Minimum,
}

/// Run Nelder-Mead from every start, then `restarts` perturbed re-runs from
/// each local optimum. Each start keeps its own best; the caller picks among them.
pub(crate) fn multi_start<F>(
    objective: F,
    starts: &[(String, Vec<f64>)],
    opt: &OptimizerConfig,
    seed: u64,
) -> Vec<StartRun>
where
    F: Fn(&[f64]) -> f64,
{
    let opts = NelderMeadOptions {
        max_iters: opt.max_iters,
        tol: opt.tol,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runs = Vec::with_capacity(starts.len());
    for (label, x0) in starts {
        let initial = objective(x0);
        let floor = x0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3) * 0.1;
        let steps = |x: &[f64], scale: f64| -> Vec<f64> {
            x.iter().map(|v| scale * v.abs().max(floor)).collect()
        };
        let mut local = nelder_mead(&objective, x0, &steps(x0, opt.simplex_scale), opts);
        for _ in 0..opt.restarts {
            let perturbed: Vec<f64> = local
                .x
                .iter()
                .map(|v| v + opt.simplex_scale * v.abs().max(floor) * rng.random_range(-1.0..1.0))
                .collect();
            let run = nelder_mead(
                &objective,
                &perturbed,
                &steps(&perturbed, opt.simplex_scale),
                opts,
            );
            let polished = nelder_mead(&objective, &run.x, &steps(&run.x, 1e-3), opts);
            let cand = if polished.value <= run.value {
                polished
            } else {
                run
            };
            if cand.value < local.value {
                local = cand;
            }
        }
        // Final polish from a small simplex guards against premature collapse.
        let polish = nelder_mead(&objective, &local.x, &steps(&local.x, 1e-3), opts);
        if polish.value < local.value {
            local = polish;
        }
        runs.push(StartRun {
            report: StartReport {
                label: label.clone(),
                initial_objective: initial,
                final_objective: local.value,
            },
            minimum: local,
        });
    }
    runs
}
