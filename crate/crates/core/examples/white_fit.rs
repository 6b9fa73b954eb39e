//! Recover drift and diffusion from a white-noise simulation.
//!
//! ```bash
//! cargo run -p limflow --example white_fit
//! ```

use limflow::fit::FitConfig;
use limflow::linalg::Matrix;
use limflow::simulate::{simulate, SimSpec};
use limflow::timeseries::lagged_correlation;
use limflow::white::{fit_white, single_lag_dynamics};

fn main() -> limflow::Result<()> {
    let a_true = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.2, -0.8]);
    let x = simulate(&SimSpec::white(
        a_true.clone(),
        Matrix::identity(2, 2),
        0.1,
        200_000,
        1,
    ))?;
    let k = lagged_correlation(&x, 40)?;

    // The single-lag matrix log is the classical estimate; the windowed fit refines it.
    let a0 = single_lag_dynamics(&k, 1.0)?;
    let model = fit_white(&k, &FitConfig::default().with_window(2.0))?;

    println!("true A {a_true}");
    println!("single-lag A(1.0) {a0}");
    println!("windowed fit A {}", model.a);
    println!("Q {}", model.q);
    println!(
        "max |error| {:.4}, residual {:.3e}, Q positive definite: {}",
        (&model.a - &a_true).amax(),
        model.fit_residual,
        model.q_positive_definite
    );
    for s in &model.starts {
        println!(
            "  start {:<18} {:.3e} -> {:.3e}",
            s.label, s.initial_objective, s.final_objective
        );
    }
    Ok(())
}
