//! Pair an index series with a small synthetic grid. Two cells are driven by
//! the index and two are independent; the scan should tell them apart.
//!
//! ```bash
//! cargo run -p limflow --example grid_scan
//! ```

use limflow::analysis::{
    grid_scan, heatmap_svg, write_results_csv, AnalysisConfig, Coord, Direction, Method,
};
use limflow::linalg::Matrix;
use limflow::simulate::{simulate, SimSpec};
use limflow::timeseries::TimeSeriesMatrix;

fn main() -> limflow::Result<()> {
    // Monthly steps. Variable 0 is the index, 1-2 are driven by it, 3-4 are not.
    let a = Matrix::from_row_slice(
        5,
        5,
        &[
            -0.5, 0.0, 0.0, 0.0, 0.0, //
            0.3, -0.6, 0.0, 0.0, 0.0, //
            -0.25, 0.0, -0.7, 0.0, 0.0, //
            0.0, 0.0, 0.0, -0.6, 0.0, //
            0.0, 0.0, 0.0, 0.0, -0.7,
        ],
    );
    let x = simulate(&SimSpec::white(a, Matrix::identity(5, 5), 1.0, 20_000, 11))?;
    let index = TimeSeriesMatrix::from_rows(&[x.row(0)], 1.0)?;
    let grid = TimeSeriesMatrix::from_rows(&[x.row(1), x.row(2), x.row(3), x.row(4)], 1.0)?
        .with_names((0..4).map(|k| format!("cell_{k}")).collect())?;
    let coords: Vec<Coord> = (0..4)
        .map(|k| Coord {
            lon: 60.0 + 10.0 * (k % 2) as f64,
            lat: -10.0 + 10.0 * (k / 2) as f64,
        })
        .collect();

    let cfg = AnalysisConfig::raw(1.0);
    let result = grid_scan(&index, &grid, Some(&coords), &cfg)?;
    for rec in &result.records {
        let w = rec.result(Method::WhiteLim);
        println!(
            "{}: T(index->cell) = {:+.4} {}",
            rec.cell_id,
            w.t_idx_to_cell.unwrap_or(f64::NAN),
            result.units
        );
    }
    write_results_csv(&result, std::io::stdout().lock())?;
    let svg = heatmap_svg(&result, Method::WhiteLim, Direction::IndexToCell);
    println!("SVG map: {} bytes", svg.len());
    Ok(())
}
