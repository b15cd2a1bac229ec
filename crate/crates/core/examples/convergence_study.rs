//! Temporal order of both time steppers on a small nonlinear problem.

use std::f64::consts::PI;

use mhd_besov::integrator::{convergence_study, InitialData, InitialProfile, Method, MhdSystem, SchemeConfig};
use mhd_besov::linear::Polarization;
use mhd_besov::littlewood_paley::TWO_THIRDS;
use mhd_besov::model::MaterialParams;
use mhd_besov::spectral::TorusGrid;

fn main() -> anyhow::Result<()> {
    let params = MaterialParams::standard();
    let grid = TorusGrid::new(2, 32, 4.0 * PI)?;
    let z0 = InitialData {
        profile: InitialProfile::PowerLaw { sigma1: 1.0, cutoff: 4.0 },
        amplitude: 0.05,
        seed: 7,
        polarization: Polarization::DensityMagnetic,
    }
    .build(grid, &params, TWO_THIRDS)?;
    let system = MhdSystem::new(grid, params, &SchemeConfig::default())?;
    for method in [Method::Exponential, Method::Imex] {
        let rep = convergence_study(&system, &z0, method, 1.0, &[0.2, 0.1, 0.05, 0.025])?;
        let errs: Vec<String> = rep.dts.iter().zip(&rep.errors).map(|(dt, e)| format!("dt={dt}: {e:.3e}")).collect();
        println!("{method:?}: order {:.3}  [{}]", rep.observed_order, errs.join(", "));
    }
    Ok(())
}
