//! Littlewood-Paley ladder and Besov norms of a Gaussian bump.

use std::f64::consts::PI;

use mhd_besov::littlewood_paley::{BesovSpec, Dyadic};
use mhd_besov::spectral::{transform_forward, PhysicalField, TorusGrid};

fn main() -> anyhow::Result<()> {
    let grid = TorusGrid::new(2, 256, 16.0 * PI)?;
    let c = grid.length() / 2.0;
    let bump = PhysicalField::from_fn(grid, |x| (-((x[0] - c).powi(2) + (x[1] - c).powi(2)) / 2.0).exp());
    let f = transform_forward(&bump)?.without_mean();
    let d = Dyadic::new(grid);
    println!("blocks {}..={}", d.j_min(), d.j_max());
    for (s, p, r) in [(0.0, 2.0, 2.0), (0.0, 2.0, 1.0), (-1.0, 2.0, f64::INFINITY), (0.0, 4.0, 1.0)] {
        let n = d.besov(&f, BesovSpec::new(s, p, r, 0)?)?;
        let ladder: Vec<String> = n.blocks.iter().map(|b| format!("{}:{:.3e}", b.j, b.value)).collect();
        println!("B^{s}_{{{p},{r}}}  total {:.4e}  low {:.4e}  high {:.4e}  [{}]", n.total, n.low, n.high, ladder.join(" "));
    }
    println!("L2 (Parseval) {:.4e}", f.norm_l2());
    Ok(())
}
