//! Synthesizes kernels for a two-branch system and identifies it back.

use nalgebra::DMatrix;
use pwh_core::identification::{identify, IdentifyOptions};
use pwh_core::volterra::{synthesize_kernels, PwhSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = PwhSystem::new(
        DMatrix::from_row_slice(3, 2, &[0.3, 0.6, -0.4, 0.2, 0.1, 0.3]),
        DMatrix::from_row_slice(3, 2, &[0.3, 0.2, 0.2, 0.3, 0.1, 0.01]),
        DMatrix::from_row_slice(3, 2, &[0.0, 3.0, -1.0, 0.0, 3.0, -5.0]),
        vec![5.0, -7.0],
    )?;
    let kernels = synthesize_kernels(&truth);
    let report = identify(&kernels, 2, 3, 3, 30, &IdentifyOptions::default())?;
    let m = report.compare(&truth)?;
    println!(
        "best restart {} residual {:.3e} filter error {:.2e} coefficient error {:.2e}",
        report.best,
        report.final_residual(),
        m.max_filter_error(),
        m.max_coeff_error()
    );
    Ok(())
}
