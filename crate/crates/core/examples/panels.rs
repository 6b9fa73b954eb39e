//! Observed correlation functions against the white, colored and
//! direct-estimator models, with each model's window RMS misfit.
//!
//! ```bash
//! cargo run -p limflow --example panels
//! ```

use limflow::analysis::{export_correlation_panels, write_panels_csv, AnalysisConfig, PanelSeries};
use limflow::colored::colored_diffusion;
use limflow::linalg::Matrix;
use limflow::simulate::{simulate, SimSpec};

fn main() -> limflow::Result<()> {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.2, -0.8]);
    let qc = colored_diffusion(&a, 2.0, &Matrix::identity(2, 2))?;
    let x = simulate(&SimSpec::colored(a, qc, 2.0, 0.1, 200_000, 5))?;

    let mut cfg = AnalysisConfig::raw(0.1).with_window(2.0);
    cfg.panel_span = 4.0;
    let panels = export_correlation_panels(&x, &cfg)?;
    let last = panels.observed.max_lag();
    for series in [PanelSeries::Colored, PanelSeries::White, PanelSeries::Liang] {
        println!(
            "{:<8} RMS over [0, 4]: {:.4}",
            series.as_str(),
            panels.rms_error(series, last)?
        );
    }

    let mut buf = Vec::new();
    write_panels_csv(&panels, &mut buf)?;
    let text = String::from_utf8_lossy(&buf);
    for line in text.lines().take(6) {
        println!("{line}");
    }
    Ok(())
}
