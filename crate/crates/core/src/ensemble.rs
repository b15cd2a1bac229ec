//! Seeded random band-limited fields with prescribed block profiles.
//!
//! Coefficients are drawn per integer lattice mode from a generator keyed by
//! `(seed, sample, component, mode)`, so two lattices with the same box length
//! produce identical coefficients on the modes they share. This is what makes
//! ensembles at `M` and `2M` comparable.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::littlewood_paley::{block_weight, Dyadic};
use crate::spectral::{Rank, SpectralField};

/// Shape of the block-norm ladder of a random field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// Unit amplitude on every resolvable block.
    Flat,
    /// Amplitude `ratio^(j - j_min)`.
    Geometric { ratio: f64 },
    /// Content in block `j` only.
    SingleBlock { j: i32 },
    /// Unit amplitude on blocks `lo..=hi`.
    Band { lo: i32, hi: i32 },
}

impl Profile {
    /// Rotating choice used by the ratio harness, so every ensemble mixes shapes.
    pub fn cycle(index: u64, d: &Dyadic) -> Profile {
        let nb = d.block_count() as u64;
        match index % 4 {
            0 => Profile::Flat,
            1 => Profile::Geometric { ratio: 0.5 },
            2 => Profile::Geometric { ratio: 2.0 },
            _ => Profile::SingleBlock {
                j: d.j_min() + ((index / 4) % nb.max(1)) as i32,
            },
        }
    }

    fn amplitude(&self, d: &Dyadic, r: f64) -> f64 {
        let (lo, hi) = d.band();
        if r < lo || r > hi {
            return 0.0;
        }
        match *self {
            Profile::Flat => 1.0,
            Profile::Geometric { ratio } => d
                .blocks()
                .map(|j| ratio.powi(j - d.j_min()) * block_weight(j, r))
                .sum(),
            Profile::SingleBlock { j } => block_weight(j, r),
            Profile::Band { lo, hi } => (lo..=hi).map(|j| block_weight(j, r)).sum(),
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn mode_key(seed: u64, sample: u64, comp: usize, k: [i64; 3]) -> u64 {
    let mut h = mix(seed ^ 0x9e3779b97f4a7c15);
    for v in [sample, comp as u64, k[0] as u64, k[1] as u64, k[2] as u64] {
        h = mix(h ^ v.wrapping_add(0x9e3779b97f4a7c15));
    }
    h
}

/// Canonical member of the pair `{k, -k}`: first nonzero entry positive.
fn is_canonical(k: [i64; 3]) -> bool {
    for v in k {
        if v != 0 {
            return v > 0;
        }
    }
    false
}

/// One random real field with Gaussian coefficients shaped by `profile`.
///
/// The result is mean-free, Hermitian, and supported in the band on which
/// the resolvable blocks sum to one.
pub fn sample(d: &Dyadic, rank: Rank, profile: Profile, seed: u64, index: u64) -> SpectralField {
    let g = *d.grid();
    let mut f = SpectralField::zeros(g, rank);
    for (k, &r) in d.radii().iter().enumerate() {
        let mode = g.mode(k);
        if !is_canonical(mode) {
            continue;
        }
        let amp = profile.amplitude(d, r);
        if amp == 0.0 {
            continue;
        }
        let kc = g.conjugate_index(k);
        for (ci, comp) in f.comps.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mode_key(seed, index, ci, mode));
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let c = Complex64::new(re, im) * (amp * std::f64::consts::FRAC_1_SQRT_2);
            comp[k] = c;
            comp[kc] = c.conj();
        }
    }
    f
}

/// Divergence-free random vector field.
pub fn sample_solenoidal(d: &Dyadic, profile: Profile, seed: u64, index: u64) -> SpectralField {
    sample(d, Rank::Vector, profile, seed, index)
        .leray_project()
        .expect("vector rank")
}
