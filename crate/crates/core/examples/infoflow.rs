//! Information flow between two coupled variables: model-based flows from a
//! fitted model, the direct covariance estimator, and the exact values.
//!
//! ```bash
//! cargo run -p limflow --example infoflow
//! ```

use limflow::fit::FitConfig;
use limflow::infoflow::{classify_flows, info_flow_from_model, info_flow_liang};
use limflow::linalg::Matrix;
use limflow::simulate::{simulate, stationary_covariance, SimSpec};
use limflow::timeseries::lagged_correlation;
use limflow::white::fit_white;

fn main() -> limflow::Result<()> {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.2, -0.8]);
    let spec = SimSpec::white(a.clone(), Matrix::identity(2, 2), 0.1, 200_000, 4);
    let x = simulate(&spec)?;

    let exact = info_flow_from_model(&a, &stationary_covariance(&spec)?)?;
    let model = fit_white(
        &lagged_correlation(&x, 40)?,
        &FitConfig::default().with_window(2.0),
    )?;
    let fitted = info_flow_from_model(&model.a, &model.c)?;
    let direct = info_flow_liang(&x)?;

    println!("{:<10} {:>10} {:>10}", "", "T(2->1)", "T(1->2)");
    for (name, t) in [("exact", &exact), ("fitted", &fitted), ("direct", &direct)] {
        println!("{name:<10} {:>10.4} {:>10.4}", t.flow(1, 0), t.flow(0, 1));
    }
    let labels = classify_flows(&fitted, 0.0);
    println!("x2 -> x1: {:?}; x1 -> x2: {:?}", labels[0][1], labels[1][0]);
    println!(
        "display clipped at 0.02: {}",
        fitted.clone().with_mask(0.02).display()
    );
    Ok(())
}
