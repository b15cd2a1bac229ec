//! Dyadic frequency blocks, homogeneous Besov norms and Chemin–Lerner norms.
//!
//! The radial cutoff is built from the smooth step
//! `step(t) = h(t) / (h(t) + h(1 - t))` with `h(t) = exp(-1/t)`:
//! `chi(r) = 1 - step((r - 3/4) / (4/3 - 3/4))` and `phi(r) = chi(r/2) - chi(r)`.
//! Consequently `phi` is supported in `[3/4, 8/3]` and the blocks telescope:
//! `sum_{j=a..=b} phi(2^-j r) = chi(2^{-b-1} r) - chi(2^-a r)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{lp_norm_values, norm3, transform_forward, transform_inverse, PhysicalField, SpectralField, TorusGrid};

/// Inner and outer radius of the annulus carrying `phi`.
pub const ANNULUS: (f64, f64) = (0.75, 8.0 / 3.0);

/// Default dealiasing fraction.
pub const TWO_THIRDS: f64 = 2.0 / 3.0;

fn bump(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = bump(t);
        a / (a + bump(1.0 - t))
    }
}

/// Low-pass profile: 1 on `[0, 3/4]`, 0 on `[4/3, inf)`.
pub fn chi(r: f64) -> f64 {
    1.0 - smooth_step((r - 0.75) / (4.0 / 3.0 - 0.75))
}

/// Annular profile `chi(r/2) - chi(r)`.
pub fn phi(r: f64) -> f64 {
    chi(0.5 * r) - chi(r)
}

/// Weight of block `j` at radius `r`.
pub fn block_weight(j: i32, r: f64) -> f64 {
    phi(r * 2f64.powi(-j))
}

/// Summed weight of blocks `lo..=hi` at radius `r`.
pub fn band_weight(lo: i32, hi: i32, r: f64) -> f64 {
    if hi < lo {
        0.0
    } else {
        chi(r * 2f64.powi(-hi - 1)) - chi(r * 2f64.powi(-lo))
    }
}

/// `[1, inf]` exponents serialize as numbers, with `"inf"` for infinity.
pub mod extended_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Int(v) => Ok(v as f64),
            Repr::Text(t) => match t.as_str() {
                "inf" | "infinity" | "Inf" => Ok(f64::INFINITY),
                other => other.parse().map_err(serde::de::Error::custom),
            },
        }
    }
}

/// Norm descriptor `(s, p, r)` with the low/high threshold `k0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesovSpec {
    pub s: f64,
    #[serde(with = "extended_real")]
    pub p: f64,
    #[serde(with = "extended_real")]
    pub r: f64,
    pub k0: i32,
}

impl BesovSpec {
    pub fn new(s: f64, p: f64, r: f64, k0: i32) -> Result<Self> {
        for (name, v) in [("p", p), ("r", r)] {
            if !(v >= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must lie in [1, inf]")));
            }
        }
        if !s.is_finite() {
            return Err(Error::InvalidParameter(format!("regularity s = {s} must be finite")));
        }
        Ok(Self { s, p, r, k0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockValue {
    pub j: i32,
    pub value: f64,
}

/// Weighted block ladder `2^{js} ||Delta_j f||_{L^p}` and its aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovNorm {
    #[serde(flatten)]
    pub spec: BesovSpec,
    pub blocks: Vec<BlockValue>,
    pub total: f64,
    pub low: f64,
    pub high: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub under_resolved: Vec<i32>,
}

impl BesovNorm {
    /// Assemble from unweighted block norms `||Delta_j f||` for consecutive `j` from `j_first`.
    pub fn from_block_norms(spec: BesovSpec, j_first: i32, norms: &[f64]) -> Self {
        let blocks: Vec<BlockValue> = norms
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let j = j_first + i as i32;
                BlockValue {
                    j,
                    value: 2f64.powf(j as f64 * spec.s) * n,
                }
            })
            .collect();
        let total = lr_aggregate(blocks.iter().map(|b| b.value), spec.r);
        let low = lr_aggregate(blocks.iter().filter(|b| b.j <= spec.k0).map(|b| b.value), spec.r);
        let high = lr_aggregate(blocks.iter().filter(|b| b.j > spec.k0).map(|b| b.value), spec.r);
        Self {
            spec,
            blocks,
            total,
            low,
            high,
            under_resolved: Vec::new(),
        }
    }

    pub fn block(&self, j: i32) -> Option<f64> {
        self.blocks.iter().find(|b| b.j == j).map(|b| b.value)
    }
}

/// `l^r` norm of nonnegative entries.
pub fn lr_aggregate(values: impl Iterator<Item = f64>, r: f64) -> f64 {
    if r.is_infinite() {
        values.fold(0.0f64, f64::max)
    } else if r == 1.0 {
        values.sum()
    } else {
        values.map(|v| v.powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

/// Littlewood–Paley machinery bound to one lattice.
///
/// Only blocks whose annulus lies inside the resolved and dealiased band are
/// addressable; asking for any other block is an error.
#[derive(Debug, Clone)]
pub struct Dyadic {
    grid: TorusGrid,
    rule: f64,
    j_min: i32,
    j_max: i32,
    radii: Vec<f64>,
}

impl Dyadic {
    pub fn new(grid: TorusGrid) -> Self {
        Self::with_rule(grid, TWO_THIRDS)
    }

    pub fn with_rule(grid: TorusGrid, rule: f64) -> Self {
        let l = grid.length();
        let j_min = (2.0 * std::f64::consts::PI / l).log2().ceil() as i32 + 1;
        let j_max = (rule * std::f64::consts::PI * grid.points() as f64 / l).log2().floor() as i32 - 2;
        let radii = (0..grid.len()).map(|k| norm3(&grid.xi(k))).collect();
        Self {
            grid,
            rule,
            j_min,
            j_max,
            radii,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn rule(&self) -> f64 {
        self.rule
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn blocks(&self) -> std::ops::RangeInclusive<i32> {
        self.j_min..=self.j_max
    }

    pub fn block_count(&self) -> usize {
        (self.j_max - self.j_min + 1).max(0) as usize
    }

    /// Radii on which the resolvable blocks sum to one.
    pub fn band(&self) -> (f64, f64) {
        (4.0 / 3.0 * 2f64.powi(self.j_min), 1.5 * 2f64.powi(self.j_max))
    }

    /// `|xi|` of every lattice mode.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn check_block(&self, j: i32) -> Result<()> {
        if j < self.j_min || j > self.j_max {
            Err(Error::BlockOutOfRange {
                j,
                min: self.j_min,
                max: self.j_max,
            })
        } else {
            Ok(())
        }
    }

    /// Collocation points per shortest wavelength of block `j`.
    pub fn points_per_wavelength(&self, j: i32) -> f64 {
        let kmax = ANNULUS.1 * 2f64.powi(j);
        2.0 * std::f64::consts::PI / kmax / self.grid.spacing()
    }

    fn weighted(&self, f: &SpectralField, w: impl Fn(f64) -> f64) -> SpectralField {
        let mut out = f.clone();
        for (k, r) in self.radii.iter().enumerate() {
            let wk = if k == 0 { 0.0 } else { w(*r) };
            for c in out.comps.iter_mut() {
                c[k] *= wk;
            }
        }
        out
    }

    /// `Delta_j f`.
    pub fn block(&self, f: &SpectralField, j: i32) -> Result<SpectralField> {
        self.grid.check_same(&f.grid)?;
        self.check_block(j)?;
        Ok(self.weighted(f, |r| block_weight(j, r)))
    }

    /// Blocks `lo..=hi` at once.
    pub fn band_project(&self, f: &SpectralField, lo: i32, hi: i32) -> Result<SpectralField> {
        self.grid.check_same(&f.grid)?;
        if hi >= lo {
            self.check_block(lo)?;
            self.check_block(hi)?;
        }
        Ok(self.weighted(f, |r| band_weight(lo, hi, r)))
    }

    /// `S_j f`: the sum of resolvable blocks below `j`, for `j` in `[j_min, j_max + 1]`.
    pub fn low_pass(&self, f: &SpectralField, j: i32) -> Result<SpectralField> {
        if j < self.j_min || j > self.j_max + 1 {
            return Err(Error::BlockOutOfRange {
                j,
                min: self.j_min,
                max: self.j_max + 1,
            });
        }
        self.band_project(f, self.j_min, j - 1)
    }

    /// Split `f` into `S_{k0+1} f` and the remainder.
    pub fn split_low_high(&self, f: &SpectralField, k0: i32) -> Result<(SpectralField, SpectralField)> {
        let low = self.low_pass(f, k0 + 1)?;
        let high = f.sub(&low)?;
        Ok((low, high))
    }

    /// Keep only modes on which the resolvable blocks form a partition of unity.
    pub fn band_limit(&self, f: &SpectralField) -> SpectralField {
        let (lo, hi) = self.band();
        self.weighted(f, |r| if r >= lo && r <= hi { 1.0 } else { 0.0 })
    }

    /// Unweighted `||Delta_j (f_1, ..., f_n)||_{L^p}` for every resolvable block,
    /// with the fields stacked into one vector-valued function.
    pub fn block_norms(&self, fields: &[&SpectralField], p: f64) -> Result<Vec<f64>> {
        for f in fields {
            self.grid.check_same(&f.grid)?;
        }
        let mut out = Vec::with_capacity(self.block_count());
        for j in self.blocks() {
            if p == 2.0 {
                let mut acc = 0.0;
                for (k, r) in self.radii.iter().enumerate().skip(1) {
                    let w = block_weight(j, *r);
                    if w == 0.0 {
                        continue;
                    }
                    let e: f64 = fields.iter().flat_map(|f| f.comps.iter()).map(|c| c[k].norm_sqr()).sum();
                    acc += w * w * e;
                }
                out.push(acc.sqrt());
            } else {
                let mut mag2 = vec![0.0; self.grid.len()];
                for f in fields {
                    let phys = transform_inverse(&self.weighted(f, |r| block_weight(j, r)));
                    for c in &phys.comps {
                        for (m, v) in mag2.iter_mut().zip(c) {
                            *m += v * v;
                        }
                    }
                }
                let mag: Vec<f64> = mag2.iter().map(|v| v.sqrt()).collect();
                out.push(lp_norm_values(&mag, p, self.grid.cell_volume()));
            }
        }
        Ok(out)
    }

    pub fn besov(&self, f: &SpectralField, spec: BesovSpec) -> Result<BesovNorm> {
        self.besov_stacked(&[f], spec)
    }

    pub fn besov_stacked(&self, fields: &[&SpectralField], spec: BesovSpec) -> Result<BesovNorm> {
        let norms = self.block_norms(fields, spec.p)?;
        let mut out = BesovNorm::from_block_norms(spec, self.j_min, &norms);
        out.under_resolved = self.blocks().filter(|&j| self.points_per_wavelength(j) < 4.0).collect();
        Ok(out)
    }

    pub fn besov_physical(&self, f: &PhysicalField, spec: BesovSpec) -> Result<BesovNorm> {
        self.besov(&transform_forward(f)?, spec)
    }

    /// Chemin–Lerner norm of a uniformly sampled time series.
    pub fn chemin_lerner(&self, times: &[f64], series: &[SpectralField], rho: f64, spec: BesovSpec) -> Result<f64> {
        if series.is_empty() || times.len() != series.len() {
            return Err(Error::EmptySeries);
        }
        let ladders = series
            .iter()
            .map(|f| self.block_norms(&[f], spec.p))
            .collect::<Result<Vec<_>>>()?;
        chemin_lerner_from_ladders(times, &ladders, self.j_min, rho, spec.s, spec.r)
    }
}

/// Time-Lebesgue norm of samples on a uniform grid (trapezoid rule).
pub fn time_norm(times: &[f64], values: &[f64], rho: f64) -> f64 {
    if rho.is_infinite() {
        return values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    let mut acc = 0.0;
    for i in 1..values.len() {
        let dt = times[i] - times[i - 1];
        acc += 0.5 * dt * (values[i].abs().powf(rho) + values[i - 1].abs().powf(rho));
    }
    acc.powf(1.0 / rho)
}

/// Chemin–Lerner aggregation from per-time block ladders `ladders[t][j - j_first]`.
pub fn chemin_lerner_from_ladders(times: &[f64], ladders: &[Vec<f64>], j_first: i32, rho: f64, s: f64, r: f64) -> Result<f64> {
    let first = ladders.first().ok_or(Error::EmptySeries)?;
    if !(rho >= 1.0) {
        return Err(Error::InvalidParameter(format!("time exponent {rho} must lie in [1, inf]")));
    }
    let per_block = (0..first.len()).map(|b| {
        let series: Vec<f64> = ladders.iter().map(|l| l[b]).collect();
        2f64.powf((j_first + b as i32) as f64 * s) * time_norm(times, &series, rho)
    });
    Ok(lr_aggregate(per_block, r))
}
