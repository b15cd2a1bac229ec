//! Paraproduct and remainder pieces of a product of two band-limited fields.

use std::f64::consts::PI;

use mhd_besov::bony::{bony_decompose, product};
use mhd_besov::littlewood_paley::Dyadic;
use mhd_besov::spectral::{transform_forward, PhysicalField, TorusGrid};

fn main() -> anyhow::Result<()> {
    let grid = TorusGrid::new(2, 128, 8.0 * PI)?;
    let d = Dyadic::new(grid);
    let k = grid.kappa();
    let f = d.band_limit(&transform_forward(&PhysicalField::from_fn(grid, |x| (3.0 * k * x[0]).sin() + 0.3 * (11.0 * k * x[1]).cos()))?);
    let g = d.band_limit(&transform_forward(&PhysicalField::from_fn(grid, |x| (8.0 * k * (x[0] + x[1])).cos() + (3.0 * k * x[1]).cos()))?);
    let (lo, hi) = d.band();
    println!("band {lo:.3} <= |xi| <= {hi:.3}, blocks {}..={}", d.j_min(), d.j_max());
    let parts = bony_decompose(&d, &f, &g)?;
    let fg = product(&d, &f, &g)?;
    println!("|f g|      {:.6e}", fg.norm_l2());
    println!("|T_f g|    {:.6e}", parts.t_fg.norm_l2());
    println!("|T_g f|    {:.6e}", parts.t_gf.norm_l2());
    println!("|R(f, g)|  {:.6e}", parts.r_fg.norm_l2());
    println!("defect     {:.3e}", parts.sum()?.sub(&fg)?.norm_l2() / fg.norm_l2());
    Ok(())
}
