//! Decay exponents of the linearized flow from radial quadrature of the mode propagators.
//!
//! ```text
//! cargo run --release --example linear_decay_oracle -- [dim] [sigma1]
//! ```

use mhd_besov::decay::{linear_oracle_fits, OracleWindow};
use mhd_besov::linear::QuadratureResolution;
use mhd_besov::model::MaterialParams;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dim: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let sigma1: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1.0);
    let params = if dim == 2 {
        MaterialParams::standard()
    } else {
        MaterialParams::new(0.5, 1.4, &[1.0, 0.0, 0.0])?
    };
    let top = dim as f64 / 2.0 - 1.0;
    let sigmas: Vec<f64> = (0..3).map(|i| top - 0.25 * i as f64).filter(|s| *s > -sigma1).collect();
    let fits = linear_oracle_fits(dim, sigma1, &sigmas, &params, &OracleWindow::default(), QuadratureResolution::default())?;
    for f in &fits {
        println!(
            "{:<32} fitted {:+.4} ± {:.1e}  predicted {:+.4}  {:?}",
            f.fit.series_id, f.fit.fitted, f.fit.stderr, f.fit.predicted, f.fit.verdict
        );
    }
    Ok(())
}
