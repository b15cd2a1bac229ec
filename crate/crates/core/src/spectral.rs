//! Periodic-lattice fields and Fourier multipliers.
//!
//! A [`TorusGrid`] discretizes the box `[0, L)^N` with `M` points per axis.
//! Spectral coefficients use the L²-unitary convention
//!
//! ```text
//! c_k = L^{N/2} / M^N * sum_x f(x) exp(-i xi_k . x),   xi_k = 2 pi k / L,
//! ```
//!
//! so that `sum_k |c_k|^2` equals the continuum `L²(T^N)` norm of the
//! band-limited interpolant. Real fields are stored full-complex; the
//! Hermitian symmetry `c(-k) = conj(c(k))` is asserted, not packed.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A wavevector or spatial point; the third entry is zero in two dimensions.
pub type Xi = [f64; 3];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    points: usize,
    length: f64,
}

impl TorusGrid {
    pub fn new(dim: usize, points: usize, length: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if points < 4 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per dimension {points} must be a power of two >= 4"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("box length {length} must be positive")));
        }
        Ok(Self {
            dim,
            points,
            length,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Number of lattice sites (and of Fourier modes).
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }

    /// Smallest nonzero lattice frequency `2 pi / L`.
    pub fn kappa(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Quadrature weight of one collocation point, `(L/M)^N`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    fn forward_scale(&self) -> f64 {
        self.length.powf(self.dim as f64 / 2.0) / self.len() as f64
    }

    fn inverse_scale(&self) -> f64 {
        self.length.powf(-(self.dim as f64) / 2.0)
    }

    /// Signed wavenumber for an FFT-ordered index along one axis.
    pub fn wavenumber(&self, i: usize) -> i64 {
        let m = self.points;
        if i < m / 2 {
            i as i64
        } else {
            i as i64 - m as i64
        }
    }

    /// Integer lattice mode of a flat index (row-major, first axis slowest).
    pub fn mode(&self, flat: usize) -> [i64; 3] {
        let m = self.points;
        let mut out = [0i64; 3];
        let mut rest = flat;
        for d in (0..self.dim).rev() {
            out[d] = self.wavenumber(rest % m);
            rest /= m;
        }
        out
    }

    /// Flat index of an integer lattice mode (taken modulo `M`).
    pub fn flat_index(&self, k: [i64; 3]) -> usize {
        let m = self.points as i64;
        let mut flat = 0usize;
        for &kd in k.iter().take(self.dim) {
            flat = flat * self.points + kd.rem_euclid(m) as usize;
        }
        flat
    }

    /// Physical wavevector of a flat index.
    pub fn xi(&self, flat: usize) -> Xi {
        let k = self.mode(flat);
        let kap = self.kappa();
        [k[0] as f64 * kap, k[1] as f64 * kap, k[2] as f64 * kap]
    }

    /// Wavevector used by odd-order derivatives: components at the Nyquist
    /// wavenumber are zeroed so that derivatives of real fields stay real.
    pub fn deriv_xi(&self, flat: usize) -> Xi {
        let k = self.mode(flat);
        let kap = self.kappa();
        let nyq = -(self.points as i64) / 2;
        let mut out = [0.0; 3];
        for d in 0..self.dim {
            if k[d] != nyq {
                out[d] = k[d] as f64 * kap;
            }
        }
        out
    }

    pub fn is_nyquist(&self, flat: usize) -> bool {
        let nyq = -(self.points as i64) / 2;
        self.mode(flat).iter().take(self.dim).any(|&k| k == nyq)
    }

    /// Collocation point of a flat index.
    pub fn point(&self, flat: usize) -> Xi {
        let m = self.points;
        let h = self.spacing();
        let mut out = [0.0; 3];
        let mut rest = flat;
        for d in (0..self.dim).rev() {
            out[d] = (rest % m) as f64 * h;
            rest /= m;
        }
        out
    }

    /// Flat index of the mode `-k`.
    pub fn conjugate_index(&self, flat: usize) -> usize {
        let k = self.mode(flat);
        self.flat_index([-k[0], -k[1], -k[2]])
    }

    pub fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

pub fn norm3(x: &Xi) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

pub fn dot3(x: &Xi, y: &Xi) -> f64 {
    x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
}

/// Tensor rank of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rank {
    Scalar,
    Vector,
    /// `N x N`, stored row-major: component `i * N + j` is entry `(i, j)`.
    Matrix,
}

impl Rank {
    pub fn components(self, dim: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => dim,
            Rank::Matrix => dim * dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rank::Scalar => "scalar",
            Rank::Vector => "vector",
            Rank::Matrix => "matrix",
        }
    }
}

fn expect_rank(found: Rank, expected: Rank) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::RankMismatch {
            expected: expected.name(),
            found: found.name(),
        })
    }
}

type PlanCache = (FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>);

thread_local! {
    static PLANS: RefCell<PlanCache> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Unnormalized N-dimensional DFT in place.
fn fft_nd(grid: &TorusGrid, data: &mut [Complex64], inverse: bool) {
    let m = grid.points;
    let fft = plan(m, inverse);
    let mut scratch = vec![ZERO; fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    if grid.dim == 1 {
        return;
    }
    let len = data.len();
    let mut buf = vec![ZERO; len];
    let mut stride = m;
    for _axis in 1..grid.dim {
        let outer = len / (m * stride);
        // gather lines of this axis into contiguous rows
        let mut row = 0;
        for o in 0..outer {
            let base = o * m * stride;
            for inner in 0..stride {
                let dst = &mut buf[row * m..(row + 1) * m];
                for (k, slot) in dst.iter_mut().enumerate() {
                    *slot = data[base + k * stride + inner];
                }
                row += 1;
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let mut row = 0;
        for o in 0..outer {
            let base = o * m * stride;
            for inner in 0..stride {
                let src = &buf[row * m..(row + 1) * m];
                for (k, v) in src.iter().enumerate() {
                    data[base + k * stride + inner] = *v;
                }
                row += 1;
            }
        }
        stride *= m;
    }
}

/// Real values on the collocation lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    pub grid: TorusGrid,
    pub rank: Rank,
    pub comps: Vec<Vec<f64>>,
}

impl PhysicalField {
    pub fn zeros(grid: TorusGrid, rank: Rank) -> Self {
        let n = rank.components(grid.dim);
        Self {
            grid,
            rank,
            comps: vec![vec![0.0; grid.len()]; n],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&Xi) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self {
            grid,
            rank: Rank::Scalar,
            comps: vec![values],
        }
    }

    pub fn from_components(grid: TorusGrid, rank: Rank, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != rank.components(grid.dim) || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::InvalidGrid("component layout does not match grid".into()));
        }
        Ok(Self { grid, rank, comps })
    }

    pub fn check_finite(&self) -> Result<()> {
        for (component, c) in self.comps.iter().enumerate() {
            if let Some(index) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { component, index });
            }
        }
        Ok(())
    }

    /// Pointwise Euclidean magnitude over components.
    pub fn magnitude(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for c in &self.comps {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v * v;
            }
        }
        out.iter_mut().for_each(|o| *o = o.sqrt());
        out
    }

    /// Collocation `L^p` norm of the pointwise magnitude; `p = inf` is the lattice max.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm_values(&self.magnitude(), p, self.grid.cell_volume())
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.grid.len() as f64;
        self.comps.iter().map(|c| c.iter().sum::<f64>() / n).collect()
    }
}

/// Collocation `L^p` norm of nonnegative samples with cell weight `vol`.
pub fn lp_norm_values(values: &[f64], p: f64, vol: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    } else if p == 2.0 {
        (values.iter().map(|v| v * v).sum::<f64>() * vol).sqrt()
    } else {
        (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * vol).powf(1.0 / p)
    }
}

/// Fourier coefficients of a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: TorusGrid,
    pub rank: Rank,
    pub comps: Vec<Vec<Complex64>>,
}

impl SpectralField {
    pub fn zeros(grid: TorusGrid, rank: Rank) -> Self {
        let n = rank.components(grid.dim);
        Self {
            grid,
            rank,
            comps: vec![vec![ZERO; grid.len()]; n],
        }
    }

    pub fn from_components(grid: TorusGrid, rank: Rank, comps: Vec<Vec<Complex64>>) -> Result<Self> {
        if comps.len() != rank.components(grid.dim) || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::InvalidGrid("component layout does not match grid".into()));
        }
        Ok(Self { grid, rank, comps })
    }

    /// Scalar field holding component `i` of this one.
    pub fn component(&self, i: usize) -> SpectralField {
        SpectralField {
            grid: self.grid,
            rank: Rank::Scalar,
            comps: vec![self.comps[i].clone()],
        }
    }

    /// Stack scalar fields into a vector field.
    pub fn stack(parts: &[SpectralField]) -> Result<SpectralField> {
        let grid = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("no components".into()))?
            .grid;
        let mut comps = Vec::with_capacity(parts.len());
        for p in parts {
            grid.check_same(&p.grid)?;
            expect_rank(p.rank, Rank::Scalar)?;
            comps.push(p.comps[0].clone());
        }
        let rank = if comps.len() == grid.dim {
            Rank::Vector
        } else if comps.len() == grid.dim * grid.dim {
            Rank::Matrix
        } else {
            return Err(Error::InvalidParameter(format!("cannot stack {} components", comps.len())));
        };
        Ok(SpectralField { grid, rank, comps })
    }

    pub fn mean_mode(&self) -> Vec<Complex64> {
        self.comps.iter().map(|c| c[0]).collect()
    }

    /// Spatial mean per component.
    pub fn mean(&self) -> Vec<f64> {
        let s = self.grid.inverse_scale();
        self.comps.iter().map(|c| c[0].re * s).collect()
    }

    fn max_mean_abs(&self) -> f64 {
        self.comps.iter().fold(0.0f64, |m, c| m.max(c[0].norm()))
    }

    pub fn is_mean_free(&self) -> bool {
        self.comps.iter().all(|c| c[0] == ZERO)
    }

    /// Zero the mean mode.
    pub fn without_mean(mut self) -> Self {
        for c in &mut self.comps {
            c[0] = ZERO;
        }
        self
    }

    /// `L²` norm by Parseval.
    pub fn norm_l2(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_coeff(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Largest Hermitian-symmetry defect `|c(-k) - conj(c(k))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in &self.comps {
            for (k, v) in c.iter().enumerate() {
                let kc = self.grid.conjugate_index(k);
                worst = worst.max((c[kc] - v.conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol * self.max_coeff().max(f64::MIN_POSITIVE)
    }

    /// Project onto the Hermitian-symmetric part.
    pub fn symmetrize(mut self) -> Self {
        for c in &mut self.comps {
            let orig = c.clone();
            for (k, v) in c.iter_mut().enumerate() {
                let kc = self.grid.conjugate_index(k);
                *v = 0.5 * (orig[k] + orig[kc].conj());
            }
        }
        self
    }

    fn zip_with(&self, other: &SpectralField, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<SpectralField> {
        self.grid.check_same(&other.grid)?;
        expect_rank(other.rank, self.rank)?;
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
            .collect();
        Ok(SpectralField {
            grid: self.grid,
            rank: self.rank,
            comps,
        })
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> SpectralField {
        let mut out = self.clone();
        out.comps.iter_mut().flat_map(|c| c.iter_mut()).for_each(|v| *v *= s);
        out
    }

    pub fn axpy(&mut self, alpha: f64, other: &SpectralField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        expect_rank(other.rank, self.rank)?;
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    /// Apply a complex scalar multiplier `m(xi)` to every component.
    ///
    /// `at_zero` is used on the mean mode. A non-finite multiplier value on a
    /// nonzero mode that carries energy is an error naming that mode; modes
    /// with zero coefficients are left at zero.
    pub fn apply_multiplier(&self, m: impl Fn(&Xi) -> Complex64, at_zero: Complex64) -> Result<SpectralField> {
        let mut out = self.clone();
        for k in 0..self.grid.len() {
            let factor = if k == 0 { at_zero } else { m(&self.grid.xi(k)) };
            let finite = factor.re.is_finite() && factor.im.is_finite();
            for c in out.comps.iter_mut() {
                if finite {
                    c[k] *= factor;
                } else if c[k] != ZERO {
                    return Err(Error::SingularMultiplier {
                        mode: self.grid.mode(k)[..self.grid.dim].to_vec(),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Apply a real radial multiplier `m(|xi|)`, with `m = at_zero` on the mean mode.
    pub fn apply_radial(&self, m: impl Fn(f64) -> f64, at_zero: f64) -> SpectralField {
        let mut out = self.clone();
        for k in 0..self.grid.len() {
            let factor = if k == 0 { at_zero } else { m(norm3(&self.grid.xi(k))) };
            for c in out.comps.iter_mut() {
                c[k] *= factor;
            }
        }
        out
    }

    /// Vector gradient of a scalar, or the matrix `G_ij = d_j v_i` of a vector.
    pub fn gradient(&self) -> Result<SpectralField> {
        let n = self.grid.dim;
        let rank = match self.rank {
            Rank::Scalar => Rank::Vector,
            Rank::Vector => Rank::Matrix,
            Rank::Matrix => return Err(Error::RankMismatch { expected: "scalar or vector", found: "matrix" }),
        };
        let mut out = SpectralField::zeros(self.grid, rank);
        for k in 0..self.grid.len() {
            let xi = self.grid.deriv_xi(k);
            for (i, c) in self.comps.iter().enumerate() {
                for j in 0..n {
                    out.comps[i * n + j][k] = I * xi[j] * c[k];
                }
            }
        }
        Ok(out)
    }

    /// Divergence of a vector, or the column divergence `(div A)_i = sum_j d_j A_ji` of a matrix.
    pub fn divergence(&self) -> Result<SpectralField> {
        let n = self.grid.dim;
        match self.rank {
            Rank::Vector => {
                let mut out = SpectralField::zeros(self.grid, Rank::Scalar);
                for k in 0..self.grid.len() {
                    let xi = self.grid.deriv_xi(k);
                    let mut acc = ZERO;
                    for j in 0..n {
                        acc += I * xi[j] * self.comps[j][k];
                    }
                    out.comps[0][k] = acc;
                }
                Ok(out)
            }
            Rank::Matrix => {
                let mut out = SpectralField::zeros(self.grid, Rank::Vector);
                for k in 0..self.grid.len() {
                    let xi = self.grid.deriv_xi(k);
                    for i in 0..n {
                        let mut acc = ZERO;
                        for j in 0..n {
                            acc += I * xi[j] * self.comps[j * n + i][k];
                        }
                        out.comps[i][k] = acc;
                    }
                }
                Ok(out)
            }
            Rank::Scalar => Err(Error::RankMismatch { expected: "vector or matrix", found: "scalar" }),
        }
    }

    /// `curl v = (d_j v_i - d_i v_j)_{ij}` as an antisymmetric matrix field.
    pub fn curl(&self) -> Result<SpectralField> {
        expect_rank(self.rank, Rank::Vector)?;
        let n = self.grid.dim;
        let mut out = SpectralField::zeros(self.grid, Rank::Matrix);
        for k in 0..self.grid.len() {
            let xi = self.grid.deriv_xi(k);
            for i in 0..n {
                for j in 0..n {
                    out.comps[i * n + j][k] = I * (xi[j] * self.comps[i][k] - xi[i] * self.comps[j][k]);
                }
            }
        }
        Ok(out)
    }

    pub fn laplacian(&self) -> SpectralField {
        self.apply_radial(|r| -r * r, 0.0)
    }

    /// `Lambda^s = |D|^s`. Negative orders require a mean-free field.
    pub fn lambda_pow(&self, s: f64) -> Result<SpectralField> {
        if s == 0.0 {
            return Ok(self.clone());
        }
        if s < 0.0 && !self.is_mean_free() {
            return Err(Error::NonzeroMean { mean: self.max_mean_abs() });
        }
        Ok(self.apply_radial(|r| r.powf(s), 0.0))
    }

    /// `Delta^{-1}` on mean-free fields.
    pub fn inverse_laplacian(&self) -> Result<SpectralField> {
        if !self.is_mean_free() {
            return Err(Error::NonzeroMean { mean: self.max_mean_abs() });
        }
        Ok(self.apply_radial(|r| -1.0 / (r * r), 0.0))
    }

    /// Leray projector `P = Id + grad (-Delta)^{-1} div`; identity on the mean mode.
    pub fn leray_project(&self) -> Result<SpectralField> {
        expect_rank(self.rank, Rank::Vector)?;
        let n = self.grid.dim;
        let mut out = self.clone();
        let mut v = [ZERO; 3];
        for k in 0..self.grid.len() {
            let xi = self.grid.deriv_xi(k);
            let r2 = dot3(&xi, &xi);
            if r2 == 0.0 {
                continue;
            }
            let mut proj = ZERO;
            for j in 0..n {
                v[j] = self.comps[j][k];
                proj += xi[j] * v[j];
            }
            for j in 0..n {
                out.comps[j][k] = v[j] - xi[j] * proj / r2;
            }
        }
        Ok(out)
    }

    /// Zero every mode with some `|k_i| > rule * M / 2`.
    pub fn dealias(&self, rule: f64) -> SpectralField {
        let mut out = self.clone();
        if rule >= 1.0 {
            return out;
        }
        let cut = rule * self.grid.points as f64 / 2.0;
        for k in 0..self.grid.len() {
            let m = self.grid.mode(k);
            if m.iter().take(self.grid.dim).any(|&kk| (kk.abs() as f64) > cut) {
                for c in out.comps.iter_mut() {
                    c[k] = ZERO;
                }
            }
        }
        out
    }

    /// Fraction of `L²` energy on modes removed by [`dealias`](Self::dealias).
    pub fn energy_outside(&self, rule: f64) -> f64 {
        let total = self.norm_l2().powi(2);
        if total == 0.0 {
            return 0.0;
        }
        let kept = self.dealias(rule).norm_l2().powi(2);
        ((total - kept) / total).max(0.0)
    }

    /// Copy onto another lattice with the same box, mode by mode.
    ///
    /// Modes absent from the target and Nyquist modes of the source are dropped,
    /// so embedding a band-limited field into a finer lattice represents the
    /// same function.
    pub fn embed(&self, grid: &TorusGrid) -> Result<SpectralField> {
        if grid.dim != self.grid.dim || grid.length != self.grid.length {
            return Err(Error::GridMismatch);
        }
        let half = grid.points as i64 / 2;
        let mut out = SpectralField::zeros(*grid, self.rank);
        for k in 0..self.grid.len() {
            if self.grid.is_nyquist(k) {
                continue;
            }
            let m = self.grid.mode(k);
            if m.iter().take(grid.dim).any(|&v| v >= half || v < -half) {
                continue;
            }
            let t = grid.flat_index(m);
            for (o, c) in out.comps.iter_mut().zip(&self.comps) {
                o[t] = c[k];
            }
        }
        Ok(out)
    }

    /// Largest `|xi . c|` over modes: the divergence defect of a vector field.
    pub fn max_divergence(&self) -> Result<f64> {
        let d = self.divergence()?;
        Ok(d.comps[0].iter().fold(0.0f64, |m, v| m.max(v.norm())))
    }
}

/// Forward transform with the unitary normalization.
pub fn transform_forward(f: &PhysicalField) -> Result<SpectralField> {
    f.check_finite()?;
    let scale = f.grid.forward_scale();
    let comps = f
        .comps
        .iter()
        .map(|c| {
            let mut data: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft_nd(&f.grid, &mut data, false);
            data.iter_mut().for_each(|v| *v *= scale);
            data
        })
        .collect();
    Ok(SpectralField {
        grid: f.grid,
        rank: f.rank,
        comps,
    })
}

/// Inverse transform; the imaginary residue of non-Hermitian input is discarded.
pub fn transform_inverse(f: &SpectralField) -> PhysicalField {
    let scale = f.grid.inverse_scale();
    let comps = f
        .comps
        .iter()
        .map(|c| {
            let mut data = c.clone();
            fft_nd(&f.grid, &mut data, true);
            data.iter().map(|v| v.re * scale).collect()
        })
        .collect();
    PhysicalField {
        grid: f.grid,
        rank: f.rank,
        comps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid2() -> TorusGrid {
        TorusGrid::new(2, 16, 2.0 * PI).unwrap()
    }

    fn random_physical(grid: TorusGrid, rank: Rank, seed: u64) -> PhysicalField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rank.components(grid.dim());
        let comps = (0..n)
            .map(|_| (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        PhysicalField::from_components(grid, rank, comps).unwrap()
    }

    /// Smooth mean-free field with no Nyquist content.
    fn smooth(grid: TorusGrid, rank: Rank, seed: u64) -> SpectralField {
        let f = transform_forward(&random_physical(grid, rank, seed)).unwrap();
        f.dealias(0.5).without_mean()
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(1, 16, 1.0).is_err());
        assert!(TorusGrid::new(2, 12, 1.0).is_err());
        assert!(TorusGrid::new(2, 16, 0.0).is_err());
        assert!(TorusGrid::new(3, 8, 1.0).is_ok());
    }

    #[test]
    fn mode_indexing_round_trips() {
        let g = TorusGrid::new(3, 8, 1.0).unwrap();
        for flat in 0..g.len() {
            assert_eq!(g.flat_index(g.mode(flat)), flat);
        }
        assert_eq!(g.mode(g.flat_index([-4, 3, -1])), [-4, 3, -1]);
    }

    #[test]
    fn constant_has_only_mean_mode() {
        let g = grid2();
        let f = PhysicalField::from_fn(g, |_| 2.5);
        let c = transform_forward(&f).unwrap();
        let expect = 2.5 * g.length().powf(1.0);
        assert!((c.comps[0][0].re - expect).abs() < 1e-12);
        assert!(c.comps[0][1..].iter().all(|v| v.norm() < 1e-12));
        assert!((c.mean()[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn cosine_gives_conjugate_pair() {
        let g = grid2();
        let f = PhysicalField::from_fn(g, |x| (3.0 * x[0] + 2.0 * x[1]).cos());
        let c = transform_forward(&f).unwrap();
        let plus = g.flat_index([3, 2, 0]);
        let minus = g.flat_index([-3, -2, 0]);
        for (k, v) in c.comps[0].iter().enumerate() {
            if k == plus || k == minus {
                assert!(v.norm() > 1.0);
            } else {
                assert!(v.norm() < 1e-12, "mode {:?}", g.mode(k));
            }
        }
        assert!((c.comps[0][plus] - c.comps[0][minus].conj()).norm() < 1e-12);
    }

    #[test]
    fn round_trip_and_parseval() {
        for (dim, m) in [(2, 32), (3, 8)] {
            let g = TorusGrid::new(dim, m, 3.0).unwrap();
            let f = random_physical(g, Rank::Vector, 7);
            let c = transform_forward(&f).unwrap();
            assert!(c.is_hermitian(1e-12));
            let back = transform_inverse(&c);
            let scale = f.max_abs();
            for (a, b) in f.comps.iter().zip(&back.comps) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() <= 1e-12 * scale);
                }
            }
            let lattice = f.lp_norm(2.0);
            assert!((lattice - c.norm_l2()).abs() <= 1e-12 * lattice);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let g = grid2();
        let mut f = PhysicalField::zeros(g, Rank::Scalar);
        f.comps[0][5] = f64::NAN;
        assert!(matches!(transform_forward(&f), Err(Error::NonFinite { index: 5, .. })));
    }

    #[test]
    fn multiplier_identity_and_scaling() {
        let g = grid2();
        let f = smooth(g, Rank::Scalar, 3);
        let same = f.apply_multiplier(|_| Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)).unwrap();
        assert_eq!(same, f);

        let mut single = SpectralField::zeros(g, Rank::Scalar);
        single.comps[0][g.flat_index([2, 0, 0])] = Complex64::new(1.0, 0.5);
        let scaled = single.apply_multiplier(|xi| Complex64::new(dot3(xi, xi), 0.0), ZERO).unwrap();
        let k = g.flat_index([2, 0, 0]);
        assert!((scaled.comps[0][k] - 4.0 * single.comps[0][k]).norm() < 1e-12);
    }

    #[test]
    fn singular_multiplier_names_mode() {
        let g = grid2();
        let mut single = SpectralField::zeros(g, Rank::Scalar);
        single.comps[0][g.flat_index([1, 1, 0])] = Complex64::new(1.0, 0.0);
        let err = single
            .apply_multiplier(
                |xi| if (xi[0] - 1.0).abs() < 1e-12 && (xi[1] - 1.0).abs() < 1e-12 { Complex64::new(f64::INFINITY, 0.0) } else { Complex64::new(1.0, 0.0) },
                ZERO,
            )
            .unwrap_err();
        match err {
            Error::SingularMultiplier { mode } => assert_eq!(mode, vec![1, 1]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn lambda_inverse_pairs() {
        let g = grid2();
        let f = smooth(g, Rank::Scalar, 11);
        let back = f.lambda_pow(1.0).unwrap().lambda_pow(-1.0).unwrap();
        assert!(back.sub(&f).unwrap().norm_l2() <= 1e-12 * f.norm_l2());
        let ab = f.lambda_pow(0.7).unwrap().lambda_pow(-1.9).unwrap();
        let direct = f.lambda_pow(-1.2).unwrap();
        assert!(ab.sub(&direct).unwrap().norm_l2() <= 1e-12 * direct.norm_l2());

        let mut single = SpectralField::zeros(g, Rank::Scalar);
        single.comps[0][g.flat_index([1, 0, 0])] = Complex64::new(0.3, -0.2);
        assert_eq!(single.lambda_pow(1.0).unwrap(), single);
    }

    #[test]
    fn negative_order_needs_mean_free() {
        let g = grid2();
        let f = transform_forward(&random_physical(g, Rank::Scalar, 1)).unwrap();
        assert!(matches!(f.lambda_pow(-1.0), Err(Error::NonzeroMean { .. })));
        assert!(matches!(f.inverse_laplacian(), Err(Error::NonzeroMean { .. })));
        assert!(f.lambda_pow(2.0).is_ok());
    }

    #[test]
    fn vector_calculus_identities() {
        for g in [grid2(), TorusGrid::new(3, 8, 2.0).unwrap()] {
            let phi = smooth(g, Rank::Scalar, 5);
            let lap = phi.laplacian();
            let divgrad = phi.gradient().unwrap().divergence().unwrap();
            assert!(divgrad.sub(&lap).unwrap().norm_l2() <= 1e-12 * lap.norm_l2());
            let cg = phi.gradient().unwrap().curl().unwrap();
            assert!(cg.norm_l2() <= 1e-12 * lap.norm_l2());
            let back = lap.inverse_laplacian().unwrap();
            assert!(back.sub(&phi).unwrap().norm_l2() <= 1e-12 * phi.norm_l2());
        }
    }

    #[test]
    fn leray_properties() {
        for g in [grid2(), TorusGrid::new(3, 8, 2.0).unwrap()] {
            let phi = smooth(g, Rank::Scalar, 9);
            let grad = phi.gradient().unwrap();
            assert!(grad.leray_project().unwrap().norm_l2() <= 1e-12 * grad.norm_l2());

            let u = smooth(g, Rank::Vector, 10);
            let pu = u.leray_project().unwrap();
            assert!(pu.max_divergence().unwrap() <= 1e-12 * u.max_coeff());
            let ppu = pu.leray_project().unwrap();
            assert!(ppu.sub(&pu).unwrap().norm_l2() <= 1e-12 * pu.norm_l2());
            // divergence-free input unchanged
            assert!(ppu.sub(&pu).unwrap().norm_l2() <= 1e-12 * pu.norm_l2());
            assert!(pu.is_hermitian(1e-12));
        }
    }

    #[test]
    fn leray_keeps_constant_vectors() {
        let g = grid2();
        let mut u = SpectralField::zeros(g, Rank::Vector);
        u.comps[0][0] = Complex64::new(1.0, 0.0);
        assert_eq!(u.leray_project().unwrap(), u);
    }

    #[test]
    fn dealias_rules() {
        let g = grid2();
        let f = transform_forward(&random_physical(g, Rank::Scalar, 2)).unwrap();
        assert_eq!(f.dealias(1.0), f);
        let mut low = SpectralField::zeros(g, Rank::Scalar);
        low.comps[0][g.flat_index([1, 2, 0])] = Complex64::new(1.0, 0.0);
        low.comps[0][g.flat_index([-1, -2, 0])] = Complex64::new(1.0, 0.0);
        assert_eq!(low.dealias(2.0 / 3.0), low);
        let d = f.dealias(2.0 / 3.0);
        for k in 0..g.len() {
            let m = g.mode(k);
            if m[0].abs() > 5 || m[1].abs() > 5 {
                assert_eq!(d.comps[0][k], ZERO);
            }
        }
    }

    /// Exact periodic convolution on the lattice as the product oracle.
    fn convolve(a: &SpectralField, b: &SpectralField) -> SpectralField {
        let g = a.grid;
        let mut out = SpectralField::zeros(g, Rank::Scalar);
        let s = g.length().powf(-(g.dim() as f64) / 2.0);
        for p in 0..g.len() {
            if a.comps[0][p] == ZERO {
                continue;
            }
            for q in 0..g.len() {
                if b.comps[0][q] == ZERO {
                    continue;
                }
                let mp = g.mode(p);
                let mq = g.mode(q);
                let sum = [mp[0] + mq[0], mp[1] + mq[1], mp[2] + mq[2]];
                // keep only products that land on the true (unaliased) wavenumber
                if sum.iter().take(g.dim()).any(|&k| k < -(g.points() as i64) / 2 || k >= g.points() as i64 / 2) {
                    continue;
                }
                out.comps[0][g.flat_index(sum)] += s * a.comps[0][p] * b.comps[0][q];
            }
        }
        out
    }

    #[test]
    fn dealiased_product_matches_exact_convolution() {
        let g = TorusGrid::new(2, 16, 2.0 * PI).unwrap();
        // two modes near the 2/3 cutoff whose product aliases onto low modes
        let mut a = SpectralField::zeros(g, Rank::Scalar);
        let mut b = SpectralField::zeros(g, Rank::Scalar);
        for (f, k) in [(&mut a, [5i64, 0, 0]), (&mut b, [4, 1, 0])] {
            f.comps[0][g.flat_index(k)] = Complex64::new(1.0, 0.3);
            f.comps[0][g.flat_index([-k[0], -k[1], 0])] = Complex64::new(1.0, -0.3);
        }
        let pa = transform_inverse(&a);
        let pb = transform_inverse(&b);
        let prod: Vec<f64> = pa.comps[0].iter().zip(&pb.comps[0]).map(|(x, y)| x * y).collect();
        let p = PhysicalField::from_components(g, Rank::Scalar, vec![prod]).unwrap();
        let spectral = transform_forward(&p).unwrap().dealias(2.0 / 3.0);
        let exact = convolve(&a, &b).dealias(2.0 / 3.0);
        // aliased copies of |k| = 9 would land on |k| = 7 (discarded) so the low modes agree
        let diff = spectral.sub(&exact).unwrap().norm_l2();
        assert!(diff <= 1e-12 * exact.norm_l2().max(1.0), "diff {diff}");
        // low-mode content (|k_x| <= 1) is exactly the difference interaction
        let low = g.flat_index([1, -1, 0]);
        assert!((spectral.comps[0][low] - exact.comps[0][low]).norm() < 1e-12);
    }
}
