//! Small-amplitude nonlinear run on a 2D torus with the Lyapunov and
//! low-frequency monitors attached.
//!
//! ```text
//! cargo run --release --example torus_monitors -- [steps]
//! ```

use std::f64::consts::PI;
use std::time::Instant;

use mhd_besov::decay::{Monitor, MonitorConfig};
use mhd_besov::integrator::{run_observed, InitialData, InitialProfile, SchemeConfig};
use mhd_besov::linear::Polarization;
use mhd_besov::model::MaterialParams;
use mhd_besov::spectral::TorusGrid;

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let grid = TorusGrid::new(2, 256, 16.0 * PI)?;
    let params = MaterialParams::standard();
    let scheme = SchemeConfig {
        t_end: 0.1 * steps as f64,
        ..SchemeConfig::default()
    };
    let init = InitialData {
        profile: InitialProfile::PowerLaw { sigma1: 1.0, cutoff: 2.0 },
        amplitude: 1e-3,
        seed: 1,
        polarization: Polarization::DensityMagnetic,
    };
    let z0 = init.build(grid, &params, scheme.dealias)?;
    let mut monitor = Monitor::new(grid, MonitorConfig::default())?;
    let clock = Instant::now();
    let traj = run_observed(&z0, &params, &scheme, |_, t, s| monitor.observe(t, s))?;
    let elapsed = clock.elapsed().as_secs_f64();

    let drift = traj.diagnostics.iter().map(|d| (d.mean_a - traj.diagnostics[0].mean_a).abs()).fold(0.0, f64::max);
    let div = traj.diagnostics.iter().map(|d| d.max_div_h).fold(0.0, f64::max);
    let lyap = monitor.lyapunov_report();
    let low = monitor.low_norm_report();
    println!("{steps} steps in {elapsed:.1} s");
    println!("mean(a) drift     {drift:.3e}");
    println!("max div H         {div:.3e}");
    println!(
        "Lyapunov          L(0) = {:.4e}, L(T) = {:.4e}, worst relative increase {:.3e} ({:?})",
        monitor.samples[0].lyapunov,
        monitor.samples.last().unwrap().lyapunov,
        lyap.max_relative_increase,
        lyap.verdict
    );
    println!(
        "low B^-s1_2,inf    first half {:.4e}, second half {:.4e} ({:?})",
        low.first_half_max, low.second_half_max, low.verdict
    );
    println!("int A1 = {:.4e}, int A2 = {:.4e}, X_p = {:.4e}", low.int_a1, low.int_a2, monitor.samples.last().unwrap().xp);
    Ok(())
}
