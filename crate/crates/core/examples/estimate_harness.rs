//! Empirical constants of the inequality suite on a coarse grid.
//!
//! ```text
//! cargo run --release --example estimate_harness -- [samples] [jobs]
//! ```

use std::f64::consts::PI;

use mhd_besov::bony::{standard_suite, Harness, SuiteParams};
use mhd_besov::model::MaterialParams;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let samples: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let jobs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let harness = Harness::new(2, 64, 8.0 * PI, samples, 11)?;
    let suite = standard_suite(2, SuiteParams::default(), &MaterialParams::standard());
    for r in harness.run_all(&suite, jobs)? {
        println!(
            "{:<36} max {:>10.4e}  median {:>10.4e}  fine/coarse {:>6.3}  {}",
            r.estimate_id,
            r.max_ratio,
            r.median_ratio,
            r.resolution_stability,
            if r.passed() { "ok" } else { "unstable" }
        );
    }
    Ok(())
}
