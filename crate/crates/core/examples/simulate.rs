//! Simulate a two-variable system under white and under colored forcing,
//! then compare sample covariances with the analytic stationary covariance.
//!
//! ```bash
//! cargo run -p limflow --example simulate
//! ```

use limflow::colored::colored_diffusion;
use limflow::linalg::Matrix;
use limflow::simulate::{simulate, stationary_covariance, SimSpec};
use limflow::timeseries::lagged_correlation;

fn main() -> limflow::Result<()> {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.2, -0.8]);
    let (dt, steps) = (0.1, 100_000);

    let white = SimSpec::white(a.clone(), Matrix::identity(2, 2), dt, steps, 7);
    let x = simulate(&white)?;
    let sample = lagged_correlation(&x, 0)?.cov().clone();
    println!("white forcing, {steps} steps");
    println!("  analytic C {}", stationary_covariance(&white)?);
    println!("  sample C   {sample}");

    // Choose Qc so that the colored process keeps the identity as its covariance.
    let tau = 2.0;
    let qc = colored_diffusion(&a, tau, &Matrix::identity(2, 2))?;
    let colored = SimSpec::colored(a, qc, tau, dt, steps, 7);
    let y = simulate(&colored)?;
    let k = lagged_correlation(&y, 10)?;
    println!("colored forcing, tau = {tau}");
    println!("  sample C   {}", k.cov());
    println!(
        "  lag-1 autocorrelation x1: {:.4}",
        k.at(10).unwrap()[(0, 0)]
    );

    limflow::timeseries::write_csv(&y.scaled(&[1.0, 1.0])?, std::io::sink())?;
    Ok(())
}
