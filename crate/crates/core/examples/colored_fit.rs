//! Recover the forcing memory time from colored-noise data, and show that
//! the same fit collapses to the white limit on white data.
//!
//! ```bash
//! cargo run -p limflow --example colored_fit
//! ```

use limflow::colored::{colored_diffusion, fit_colored};
use limflow::fit::FitConfig;
use limflow::linalg::Matrix;
use limflow::simulate::{simulate, SimSpec};
use limflow::timeseries::lagged_correlation;

fn main() -> limflow::Result<()> {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.2, -0.8]);
    let cfg = FitConfig::default().with_window(2.0);
    let (dt, steps) = (0.1, 200_000);

    let qc = colored_diffusion(&a, 2.0, &Matrix::identity(2, 2))?;
    let x = simulate(&SimSpec::colored(a.clone(), qc, 2.0, dt, steps, 2))?;
    let m = fit_colored(&lagged_correlation(&x, 40)?, &cfg)?;
    println!(
        "colored data (tau = 2): tau_hat = {:.3}, white limit = {}",
        m.tau, m.white_limit
    );
    println!("  A {}", m.a);
    println!("  Qc {}", m.qc);
    println!("  tau scan best {:?}", m.tau_scan_best);

    let w = simulate(&SimSpec::white(a, Matrix::identity(2, 2), dt, steps, 2))?;
    let m = fit_colored(&lagged_correlation(&w, 40)?, &cfg)?;
    println!(
        "white data: tau_hat = {:.2e}, white limit = {}",
        m.tau, m.white_limit
    );
    Ok(())
}
