//! Predicted decay exponents and interpolation indices over a small parameter grid.

use mhd_besov::decay::{theta0, theta1, RateQuery};

fn main() -> anyhow::Result<()> {
    println!("{:>3} {:>4} {:>6} {:>6} {:>8} {:>8} {:>8}", "N", "p", "sigma1", "sigma", "rate", "theta0", "theta1");
    for dim in [2usize, 3] {
        for p in [2.0, 3.0] {
            for sigma1 in [0.5, 1.0] {
                let top = dim as f64 / p - 1.0;
                for sigma in [top - 0.5, top] {
                    let q = RateQuery::besov(dim, p, sigma1, sigma);
                    let Ok(rate) = q.rate() else { continue };
                    let t1 = theta1(dim, p, sigma1, sigma).map_or("-".to_string(), |t| format!("{t:.4}"));
                    println!(
                        "{dim:>3} {p:>4} {sigma1:>6} {sigma:>6.3} {rate:>8.4} {:>8.4} {t1:>8}",
                        theta0(dim, sigma1)
                    );
                }
            }
        }
    }
    let q = RateQuery::lebesgue(3, 2.0, 1.0, 0.0, 3.0);
    println!("L^3 in 3D, p = 2, sigma1 = 1: rate {:.4}", q.rate()?);
    Ok(())
}
