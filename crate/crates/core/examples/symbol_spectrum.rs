//! Eigenvalues of the linear symbol along a ray in frequency space.

use mhd_besov::linear::build_symbol;
use mhd_besov::model::MaterialParams;

fn main() -> anyhow::Result<()> {
    let params = MaterialParams::standard();
    let angle: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.3);
    println!("angle to the field direction: {angle} rad");
    println!("{:>10} {:>12} {:>12}", "|xi|", "max Re", "max Re/|xi|^2");
    for e in -3..=3 {
        let r = 10f64.powi(e);
        let xi = [r * angle.cos(), r * angle.sin(), 0.0];
        let s = build_symbol(&xi, 2, &params);
        let abscissa = s.spectral_abscissa()?;
        println!("{r:>10.0e} {abscissa:>12.4e} {:>12.4e}", abscissa / (r * r));
    }
    let s = build_symbol(&[1.0, 0.0, 0.0], 2, &params);
    for ev in s.constraint_eigenvalues()? {
        println!("|xi| = 1 along the field: {:+.6} {:+.6}i", ev.re, ev.im);
    }
    Ok(())
}
