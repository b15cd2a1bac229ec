//! Per-frequency analysis of the linearized system.
//!
//! Mode vectors are ordered `(a, u_1..u_N, H_1..H_N)`. The symbol `M(xi)` is
//! the matrix of the linear right-hand side on one Fourier mode, so that a mode
//! evolves as `exp(t M(xi)) z0`. The divergence constraint `xi . H = 0` defines
//! an invariant subspace of dimension `2N`; its complement is the pure heat
//! mode `H || xi` with eigenvalue `-|xi|^2`.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::littlewood_paley::{block_weight, BesovNorm, BesovSpec, Dyadic, ANNULUS};
use crate::model::{MaterialParams, State};
use crate::spectral::{dot3, norm3, Rank, SpectralField, Xi};

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Eigenvector conditioning above which the propagator uses the dense exponential.
pub const CONDITION_GUARD: f64 = 1e8;

/// Linearized generator at one frequency.
#[derive(Debug, Clone)]
pub struct SymbolMatrix {
    pub xi: Xi,
    pub dim: usize,
    pub matrix: CMat,
}

/// Assemble `M(xi)` for the given material parameters.
pub fn build_symbol(xi: &Xi, dim: usize, params: &MaterialParams) -> SymbolMatrix {
    let n = dim;
    let w = 2 * n + 1;
    let mut m = CMat::zeros(w, w);
    let r2 = dot3(xi, xi);
    let dir = &params.direction;
    let dir_xi = dot3(dir, xi);
    let (mu, lam) = (params.mu, params.lambda);
    for j in 0..n {
        // a' = -i xi . u
        m[(0, 1 + j)] = -I * xi[j];
    }
    for i in 0..n {
        let ui = 1 + i;
        let hi = 1 + n + i;
        m[(ui, 0)] = -I * xi[i];
        m[(ui, ui)] += Complex64::new(-mu * r2, 0.0);
        m[(ui, hi)] += I * dir_xi;
        m[(hi, hi)] += Complex64::new(-r2, 0.0);
        m[(hi, ui)] += I * dir_xi;
        for j in 0..n {
            m[(ui, 1 + j)] += Complex64::new(-(lam + mu) * xi[i] * xi[j], 0.0);
            m[(ui, 1 + n + j)] += -I * xi[i] * dir[j];
            m[(hi, 1 + j)] += -I * xi[j] * dir[i];
        }
    }
    SymbolMatrix {
        xi: *xi,
        dim,
        matrix: m,
    }
}

/// Orthonormal basis of `xi`-perpendicular directions in `R^dim`.
pub fn transverse_basis(xi: &Xi, dim: usize) -> Vec<Xi> {
    let r = norm3(xi);
    if r == 0.0 {
        return (0..dim)
            .map(|d| {
                let mut e = [0.0; 3];
                e[d] = 1.0;
                e
            })
            .collect();
    }
    let k = [xi[0] / r, xi[1] / r, xi[2] / r];
    if dim == 2 {
        return vec![[-k[1], k[0], 0.0]];
    }
    // Gram-Schmidt against the coordinate axis least aligned with xi
    let axis = (0..3)
        .min_by(|&a, &b| k[a].abs().partial_cmp(&k[b].abs()).unwrap())
        .unwrap();
    let mut e1 = [0.0; 3];
    e1[axis] = 1.0;
    let p = dot3(&e1, &k);
    for d in 0..3 {
        e1[d] -= p * k[d];
    }
    let n1 = norm3(&e1);
    e1.iter_mut().for_each(|v| *v /= n1);
    let e2 = [k[1] * e1[2] - k[2] * e1[1], k[2] * e1[0] - k[0] * e1[2], k[0] * e1[1] - k[1] * e1[0]];
    vec![e1, e2]
}

impl SymbolMatrix {
    pub fn width(&self) -> usize {
        2 * self.dim + 1
    }

    /// Columns spanning the constraint subspace `xi . H = 0` (orthonormal).
    pub fn constraint_basis(&self) -> CMat {
        let n = self.dim;
        let w = self.width();
        let r = norm3(&self.xi);
        if r == 0.0 {
            return CMat::identity(w, w);
        }
        let mut q = CMat::zeros(w, 2 * n);
        for c in 0..=n {
            q[(c, c)] = ONE;
        }
        for (b, e) in transverse_basis(&self.xi, n).iter().enumerate() {
            for i in 0..n {
                q[(1 + n + i, n + 1 + b)] = Complex64::new(e[i], 0.0);
            }
        }
        q
    }

    /// `M` restricted to the constraint subspace, in the basis of [`constraint_basis`](Self::constraint_basis).
    pub fn restricted(&self) -> CMat {
        let q = self.constraint_basis();
        q.adjoint() * &self.matrix * &q
    }

    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        eigenvalues(&self.matrix, &self.xi)
    }

    /// Eigenvalues on the constraint subspace, sorted by decreasing real part.
    pub fn constraint_eigenvalues(&self) -> Result<Vec<Complex64>> {
        if norm3(&self.xi) == 0.0 {
            return Ok(vec![ZERO; 2 * self.dim]);
        }
        let mut ev = eigenvalues(&self.restricted(), &self.xi)?;
        ev.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap()));
        Ok(ev)
    }

    /// Largest real part over the constraint subspace.
    pub fn spectral_abscissa(&self) -> Result<f64> {
        Ok(self.constraint_eigenvalues()?[0].re)
    }

    /// Apply `M` to a mode vector.
    pub fn apply(&self, z: &[Complex64]) -> Vec<Complex64> {
        (&self.matrix * CVec::from_column_slice(z)).as_slice().to_vec()
    }
}

fn schur(m: &CMat, xi: &Xi) -> Result<(CMat, CMat)> {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.norm())).max(1.0);
    Schur::try_new(m.clone(), 1e-15 * scale, 10_000)
        .map(|s| s.unpack())
        .ok_or_else(|| Error::EigenFailure { xi: xi.to_vec() })
}

fn eigenvalues(m: &CMat, xi: &Xi) -> Result<Vec<Complex64>> {
    if m.iter().all(|v| *v == ZERO) {
        return Ok(vec![ZERO; m.nrows()]);
    }
    let (_, t) = schur(m, xi)?;
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// `exp(t M)` for a fixed generator, by eigendecomposition when well conditioned.
#[derive(Debug, Clone)]
pub enum Propagator {
    Diagonal { values: Vec<Complex64>, vectors: CMat, inverse: CMat },
    Dense { generator: CMat },
}

impl Propagator {
    pub fn new(m: &CMat, xi: &Xi) -> Result<Self> {
        let n = m.nrows();
        if m.iter().all(|v| *v == ZERO) {
            return Ok(Propagator::Diagonal {
                values: vec![ZERO; n],
                vectors: CMat::identity(n, n),
                inverse: CMat::identity(n, n),
            });
        }
        let (q, t) = schur(m, xi)?;
        let scale = t.iter().fold(0.0f64, |a, v| a.max(v.norm()));
        let tiny = 1e-300f64.max(f64::EPSILON * scale * 1e-3);
        // eigenvectors of the triangular factor by back substitution
        let mut y = CMat::zeros(n, n);
        for k in 0..n {
            let lam = t[(k, k)];
            y[(k, k)] = ONE;
            for i in (0..k).rev() {
                let mut s = ZERO;
                for j in i + 1..=k {
                    s += t[(i, j)] * y[(j, k)];
                }
                let mut d = t[(i, i)] - lam;
                if d.norm() < tiny {
                    d = Complex64::new(tiny, 0.0);
                }
                y[(i, k)] = -s / d;
            }
        }
        let mut v = q * y;
        for mut col in v.column_iter_mut() {
            let nrm = col.norm();
            if nrm > 0.0 && nrm.is_finite() {
                col /= Complex64::new(nrm, 0.0);
            }
        }
        if let Some(inv) = v.clone().try_inverse() {
            let cond = v.norm() * inv.norm();
            if cond.is_finite() && cond <= CONDITION_GUARD {
                return Ok(Propagator::Diagonal {
                    values: (0..n).map(|i| t[(i, i)]).collect(),
                    vectors: v,
                    inverse: inv,
                });
            }
        }
        Ok(Propagator::Dense { generator: m.clone() })
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Propagator::Dense { .. })
    }

    /// `exp(t M) z0`.
    pub fn apply(&self, t: f64, z0: &CVec) -> CVec {
        match self {
            Propagator::Diagonal { values, vectors, inverse } => {
                let mut c = inverse * z0;
                for (ci, l) in c.iter_mut().zip(values) {
                    *ci *= (l * t).exp();
                }
                vectors * c
            }
            Propagator::Dense { generator } => (generator * Complex64::new(t, 0.0)).exp() * z0,
        }
    }

    /// The full matrix `exp(t M)`.
    pub fn matrix(&self, t: f64) -> CMat {
        match self {
            Propagator::Diagonal { values, vectors, inverse } => {
                let mut scaled = vectors.clone();
                for (mut col, l) in scaled.column_iter_mut().zip(values) {
                    col *= (l * t).exp();
                }
                scaled * inverse
            }
            Propagator::Dense { generator } => (generator * Complex64::new(t, 0.0)).exp(),
        }
    }

    /// Squared norms `|exp(t M) z0|^2` for several times, sharing the decomposition.
    pub fn norms_sq(&self, times: &[f64], z0: &CVec) -> Vec<f64> {
        match self {
            Propagator::Diagonal { values, vectors, inverse } => {
                let c = inverse * z0;
                let gram = vectors.adjoint() * vectors;
                let n = c.len();
                let mut e = vec![ZERO; n];
                times
                    .iter()
                    .map(|&t| {
                        for i in 0..n {
                            e[i] = c[i] * (values[i] * t).exp();
                        }
                        let mut acc = ZERO;
                        for i in 0..n {
                            let mut row = ZERO;
                            for k in 0..n {
                                row += gram[(i, k)] * e[k];
                            }
                            acc += e[i].conj() * row;
                        }
                        acc.re.max(0.0)
                    })
                    .collect()
            }
            Propagator::Dense { .. } => times.iter().map(|&t| self.apply(t, z0).norm_squared()).collect(),
        }
    }
}

/// Mode propagator honoring the constraint split: the constraint subspace
/// evolves by the restricted generator and the `H || xi` part by `exp(-|xi|^2 t)`.
#[derive(Debug, Clone)]
pub struct ModeFlow {
    symbol: SymbolMatrix,
    basis: CMat,
    inner: Propagator,
}

impl ModeFlow {
    pub fn new(symbol: SymbolMatrix) -> Result<Self> {
        let basis = symbol.constraint_basis();
        let inner = Propagator::new(&(basis.adjoint() * &symbol.matrix * &basis), &symbol.xi)?;
        Ok(Self { symbol, basis, inner })
    }

    pub fn symbol(&self) -> &SymbolMatrix {
        &self.symbol
    }

    pub fn uses_dense_fallback(&self) -> bool {
        self.inner.is_dense()
    }

    fn longitudinal(&self, z0: &CVec) -> CVec {
        let n = self.symbol.dim;
        let r = norm3(&self.symbol.xi);
        let mut out = CVec::zeros(z0.len());
        if r == 0.0 {
            return out;
        }
        let mut p = ZERO;
        for i in 0..n {
            p += self.symbol.xi[i] / r * z0[1 + n + i];
        }
        for i in 0..n {
            out[1 + n + i] = p * (self.symbol.xi[i] / r);
        }
        out
    }

    pub fn propagate(&self, t: f64, z0: &[Complex64]) -> Result<Vec<Complex64>> {
        let z = CVec::from_column_slice(z0);
        let lon = self.longitudinal(&z);
        let y = self.inner.apply(t, &(self.basis.adjoint() * &z));
        let r2 = dot3(&self.symbol.xi, &self.symbol.xi);
        let out = &self.basis * y + lon * Complex64::new((-r2 * t).exp(), 0.0);
        if out.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinitePropagator {
                xi: self.symbol.xi.to_vec(),
            });
        }
        Ok(out.as_slice().to_vec())
    }

    /// `|z(t)|^2` at several times for constraint-satisfying `z0`.
    pub fn norms_sq(&self, times: &[f64], z0: &[Complex64]) -> Result<Vec<f64>> {
        let y0 = self.basis.adjoint() * CVec::from_column_slice(z0);
        let out = self.inner.norms_sq(times, &y0);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePropagator {
                xi: self.symbol.xi.to_vec(),
            });
        }
        Ok(out)
    }
}

/// `exp(t M(xi)) z0`.
pub fn propagate(symbol: &SymbolMatrix, t: f64, z0: &[Complex64]) -> Result<Vec<Complex64>> {
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!("negative time {t}")));
    }
    ModeFlow::new(symbol.clone())?.propagate(t, z0)
}

/// One mode in the variables `(a, omega, Omega, E)`; the matrices are row-major `N x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedMode {
    pub a: Complex64,
    pub omega: Complex64,
    pub vorticity: Vec<Complex64>,
    pub magnetic: Vec<Complex64>,
}

impl TransformedMode {
    pub fn to_vec(&self) -> Vec<Complex64> {
        let mut v = vec![self.a, self.omega];
        v.extend_from_slice(&self.vorticity);
        v.extend_from_slice(&self.magnetic);
        v
    }

    pub fn from_slice(v: &[Complex64], dim: usize) -> Self {
        let nn = dim * dim;
        Self {
            a: v[0],
            omega: v[1],
            vorticity: v[2..2 + nn].to_vec(),
            magnetic: v[2 + nn..2 + 2 * nn].to_vec(),
        }
    }
}

/// `omega = Lambda^-1 div u`, `Omega = Lambda^-1 curl u`, `E = Lambda^-1 curl H` on one mode.
pub fn to_transformed_mode(xi: &Xi, dim: usize, z: &[Complex64]) -> Result<TransformedMode> {
    let r = norm3(xi);
    if r == 0.0 {
        return Err(Error::NonzeroMean { mean: z.iter().map(|v| v.norm()).fold(0.0, f64::max) });
    }
    let n = dim;
    let u = &z[1..1 + n];
    let h = &z[1 + n..1 + 2 * n];
    let omega = (0..n).map(|j| I * xi[j] * u[j]).sum::<Complex64>() / r;
    let curl = |v: &[Complex64]| {
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = I * (xi[j] * v[i] - xi[i] * v[j]) / r;
            }
        }
        out
    };
    Ok(TransformedMode {
        a: z[0],
        omega,
        vorticity: curl(u),
        magnetic: curl(h),
    })
}

/// Inverse of [`to_transformed_mode`]: `u = -Lambda^-1 grad omega + Lambda^-1 div Omega`, `H = Lambda^-1 div E`.
pub fn from_transformed_mode(xi: &Xi, dim: usize, m: &TransformedMode) -> Vec<Complex64> {
    let n = dim;
    let r = norm3(xi);
    let mut z = vec![ZERO; 2 * n + 1];
    z[0] = m.a;
    for i in 0..n {
        let mut u = -I * xi[i] * m.omega;
        let mut h = ZERO;
        for j in 0..n {
            u += I * xi[j] * m.vorticity[j * n + i];
            h += I * xi[j] * m.magnetic[j * n + i];
        }
        z[1 + i] = u / r;
        z[1 + n + i] = h / r;
    }
    z
}

/// Generator of the transformed variables on one mode:
/// `a' = -|xi| omega`, `omega' = -|xi|^2 omega + |xi| a + I . div E`,
/// `Omega' = -mu |xi|^2 Omega + i (I.xi) E`, `E' = -|xi|^2 E - curl(omega I) + i (I.xi) Omega`.
pub fn transformed_symbol(xi: &Xi, dim: usize, params: &MaterialParams) -> CMat {
    let n = dim;
    let nn = n * n;
    let w = 2 + 2 * nn;
    let r = norm3(xi);
    let r2 = r * r;
    let dir = &params.direction;
    let dir_xi = dot3(dir, xi);
    let (va, vw, vo, ve) = (0usize, 1usize, 2usize, 2 + nn);
    let mut m = CMat::zeros(w, w);
    m[(va, vw)] = Complex64::new(-r, 0.0);
    m[(vw, vw)] = Complex64::new(-r2, 0.0);
    m[(vw, va)] = Complex64::new(r, 0.0);
    for i in 0..n {
        for j in 0..n {
            // I . div E = sum_i I_i sum_j i xi_j E_ji
            m[(vw, ve + j * n + i)] += I * xi[j] * dir[i];
        }
    }
    for e in 0..nn {
        m[(vo + e, vo + e)] = Complex64::new(-params.mu * r2, 0.0);
        m[(vo + e, ve + e)] = I * dir_xi;
        m[(ve + e, ve + e)] = Complex64::new(-r2, 0.0);
        m[(ve + e, vo + e)] = I * dir_xi;
    }
    for i in 0..n {
        for j in 0..n {
            // curl(omega I)_ij = i xi_j I_i omega - i xi_i I_j omega
            m[(ve + i * n + j, vw)] -= I * (xi[j] * dir[i] - xi[i] * dir[j]);
        }
    }
    m
}

/// Transformed fields on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub a: SpectralField,
    pub omega: SpectralField,
    pub vorticity: SpectralField,
    pub magnetic: SpectralField,
}

/// Lattice version of [`to_transformed_mode`]; `u` and `H` must be mean-free.
pub fn to_transformed(state: &State) -> Result<Transformed> {
    for f in [&state.u, &state.h] {
        if !f.is_mean_free() {
            return Err(Error::NonzeroMean {
                mean: f.mean_mode().iter().map(|v| v.norm()).fold(0.0, f64::max),
            });
        }
    }
    Ok(Transformed {
        a: state.a.clone(),
        omega: state.u.divergence()?.lambda_pow(-1.0)?,
        vorticity: state.u.curl()?.lambda_pow(-1.0)?,
        magnetic: state.h.curl()?.lambda_pow(-1.0)?,
    })
}

pub fn from_transformed(t: &Transformed) -> Result<State> {
    let u = t
        .omega
        .gradient()?
        .scale(-1.0)
        .add(&t.vorticity.divergence()?)?
        .lambda_pow(-1.0)?;
    let h = t.magnetic.divergence()?.lambda_pow(-1.0)?;
    State::new(t.a.clone(), u, h)
}

/// `w = grad (-Lap)^-1 (a - div u)` on one mode: `i xi |xi|^-2 (a - i xi . u)`.
pub fn effective_velocity_mode(xi: &Xi, dim: usize, z: &[Complex64]) -> Vec<Complex64> {
    let r2 = dot3(xi, xi);
    if r2 == 0.0 {
        return vec![ZERO; dim];
    }
    let div_u: Complex64 = (0..dim).map(|j| I * xi[j] * z[1 + j]).sum();
    let s = z[0] - div_u;
    (0..dim).map(|i| I * xi[i] * s / r2).collect()
}

/// Lattice effective velocity; `a` must be mean-free.
pub fn effective_velocity(state: &State) -> Result<SpectralField> {
    if !state.a.is_mean_free() {
        return Err(Error::NonzeroMean {
            mean: state.a.mean_mode()[0].norm(),
        });
    }
    let s = state.a.sub(&state.u.divergence()?)?;
    let g = state.grid();
    let mut out = SpectralField::zeros(g, Rank::Vector);
    for k in 1..g.len() {
        let xi = g.deriv_xi(k);
        let r2 = norm3(&g.xi(k)).powi(2);
        for i in 0..g.dim() {
            out.comps[i][k] = I * xi[i] * s.comps[0][k] / r2;
        }
    }
    Ok(out)
}

/// Residual of the linear effective-velocity equation
/// `d_t w - Lap w = w - (-Lap)^-1 grad a - grad(I.H)` at state `z`, using `d_t z = M z`.
pub fn effective_velocity_residual(symbol: &SymbolMatrix, params: &MaterialParams, z: &[Complex64]) -> f64 {
    let xi = &symbol.xi;
    let n = symbol.dim;
    let r2 = dot3(xi, xi);
    if r2 == 0.0 {
        return 0.0;
    }
    let dz = symbol.apply(z);
    let w = effective_velocity_mode(xi, n, z);
    let dw = effective_velocity_mode(xi, n, &dz);
    let dir_h: Complex64 = (0..n).map(|j| params.direction[j] * z[1 + n + j]).sum();
    (0..n)
        .map(|i| {
            let rhs = w[i] - I * xi[i] * z[0] / r2 - I * xi[i] * dir_h;
            (dw[i] + r2 * w[i] - rhs).norm()
        })
        .fold(0.0, f64::max)
}

/// Residual of the damped density equation `d_t a + a = -div w` (linear part).
pub fn damped_density_residual(symbol: &SymbolMatrix, z: &[Complex64]) -> f64 {
    let xi = &symbol.xi;
    let n = symbol.dim;
    let dz = symbol.apply(z);
    let w = effective_velocity_mode(xi, n, z);
    let div_w: Complex64 = (0..n).map(|j| I * xi[j] * w[j]).sum();
    (dz[0] + z[0] + div_w).norm()
}

/// The low-frequency energy functional
/// `J_k^2 = |a|^2 + |omega|^2 + |Omega|^2/2 + |E|^2/2 + gamma (|Lambda a|^2 - 2 (a, Lambda omega))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyFunctional {
    pub gamma: f64,
    pub k0: i32,
}

/// Extreme values of `J^2 / |(a, omega, Omega, E)|^2` over modes with `|xi| <= r_max`.
pub fn equivalence_window(gamma: f64, r_max: f64) -> (f64, f64) {
    // the (a, omega) block is [[1 + g r^2, -g r], [-g r, 1]]; Omega and E carry weight 1/2
    let mut lo = 0.5f64;
    let mut hi = 0.5f64;
    let steps = 2000;
    for s in 0..=steps {
        let r = r_max * s as f64 / steps as f64;
        let tr = 2.0 + gamma * r * r;
        let det = 1.0 + gamma * r * r - gamma * gamma * r * r;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        lo = lo.min(tr / 2.0 - disc);
        hi = hi.max(tr / 2.0 + disc);
    }
    (lo, hi)
}

impl EnergyFunctional {
    /// Checks that `J^2` stays within `[1/4, 4]` of the block norm for all blocks up to `k0`.
    pub fn new(gamma: f64, k0: i32) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma = {gamma} must be positive")));
        }
        let (lo, hi) = equivalence_window(gamma, ANNULUS.1 * 2f64.powi(k0));
        if lo < 0.25 || hi > 4.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma = {gamma} with k0 = {k0} gives equivalence window [{lo:.3}, {hi:.3}] outside [1/4, 4]"
            )));
        }
        Ok(Self { gamma, k0 })
    }

    pub fn standard() -> Self {
        Self { gamma: 0.125, k0: 0 }
    }

    /// Quadratic form of one transformed mode.
    pub fn mode_form(&self, r: f64, m: &TransformedMode) -> f64 {
        let sq = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>();
        m.a.norm_sqr() + m.omega.norm_sqr() + 0.5 * sq(&m.vorticity) + 0.5 * sq(&m.magnetic)
            + self.gamma * (r * r * m.a.norm_sqr() - 2.0 * r * (m.a * m.omega.conj()).re)
    }

    /// `J_k` of a lattice state.
    pub fn block_energy(&self, d: &Dyadic, state: &State, k: i32) -> Result<f64> {
        Ok(self.block_energy_and_norm(d, state, k)?.0)
    }

    /// `(J_k, |(a_k, omega_k, Omega_k, E_k)|)` of a lattice state.
    pub fn block_energy_and_norm(&self, d: &Dyadic, state: &State, k: i32) -> Result<(f64, f64)> {
        if k > self.k0 {
            return Err(Error::AboveThreshold { k, k0: self.k0 });
        }
        d.check_block(k)?;
        let g = state.grid();
        let n = g.dim();
        let mut j2 = 0.0;
        let mut norm2 = 0.0;
        for (idx, &r) in d.radii().iter().enumerate().skip(1) {
            let w = block_weight(k, r);
            if w == 0.0 {
                continue;
            }
            let z: Vec<Complex64> = state.mode_vector(idx).iter().map(|c| c * w).collect();
            let m = to_transformed_mode(&g.xi(idx), n, &z)?;
            j2 += self.mode_form(r, &m);
            norm2 += m.to_vec().iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
        Ok((j2.max(0.0).sqrt(), norm2.sqrt()))
    }
}

/// Decay coefficient of one low block along a linear trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockDecay {
    pub k: i32,
    /// Largest `c` with `J_k(t) <= J_k(0) exp(-c 4^k t)` at every sampled time.
    pub coefficient: f64,
    pub passed: bool,
}

/// Fit the decay coefficient of `J_k` for modes `(xi, z0)` evolved by the linear semigroup.
pub fn verify_low_freq_decay(
    params: &MaterialParams,
    ef: &EnergyFunctional,
    dim: usize,
    k: i32,
    modes: &[(Xi, Vec<Complex64>)],
    times: &[f64],
) -> Result<BlockDecay> {
    if k > ef.k0 {
        return Err(Error::AboveThreshold { k, k0: ef.k0 });
    }
    let mut energy = vec![0.0; times.len()];
    for (xi, z0) in modes {
        let r = norm3(xi);
        let w = block_weight(k, r);
        if w == 0.0 {
            continue;
        }
        let flow = ModeFlow::new(build_symbol(xi, dim, params))?;
        for (e, &t) in energy.iter_mut().zip(times) {
            let z: Vec<Complex64> = flow.propagate(t, z0)?.iter().map(|c| c * w).collect();
            *e += ef.mode_form(r, &to_transformed_mode(xi, dim, &z)?);
        }
    }
    let j0 = energy.first().copied().unwrap_or(0.0).sqrt();
    if j0 == 0.0 {
        return Ok(BlockDecay {
            k,
            coefficient: f64::INFINITY,
            passed: true,
        });
    }
    let rate = 4f64.powi(k);
    let mut c = f64::INFINITY;
    for (e, &t) in energy.iter().zip(times).skip(1) {
        if t > 0.0 {
            c = c.min(-(e.sqrt() / j0).ln() / (rate * t));
        }
    }
    Ok(BlockDecay {
        k,
        coefficient: c,
        passed: c > 0.0,
    })
}

/// Gauss–Legendre nodes and weights on `[lo, hi]` (Golub–Welsch).
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let k = i as f64;
        let b = k / (4.0 * k * k - 1.0).sqrt();
        jac[(i, i - 1)] = b;
        jac[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut nodes: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v = eig.eigenvectors[(0, i)];
            (mid + half * x, 2.0 * v * v * half)
        })
        .collect();
    nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    nodes
}

/// How the initial amplitude is distributed over the unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    /// Equal amplitude in `a` and in a unit transverse `H` (`xi x I` in 3D), `u = 0`.
    DensityMagnetic,
    /// Density only.
    Density,
    /// Velocity along `xi` only.
    Acoustic,
}

impl Polarization {
    /// Mode vector of amplitude `amp` at `xi != 0`, satisfying `xi . H = 0`.
    pub fn mode_vector(self, xi: &Xi, dim: usize, direction: &Xi, amp: f64) -> Vec<Complex64> {
        let n = dim;
        let r = norm3(xi);
        let mut z = vec![ZERO; 2 * n + 1];
        match self {
            Polarization::Density => z[0] = Complex64::new(amp, 0.0),
            Polarization::Acoustic => {
                for i in 0..n {
                    z[1 + i] = Complex64::new(amp * xi[i] / r, 0.0);
                }
            }
            Polarization::DensityMagnetic => {
                z[0] = Complex64::new(amp, 0.0);
                let e = if n == 2 {
                    [-xi[1] / r, xi[0] / r, 0.0]
                } else {
                    let c = [
                        xi[1] * direction[2] - xi[2] * direction[1],
                        xi[2] * direction[0] - xi[0] * direction[2],
                        xi[0] * direction[1] - xi[1] * direction[0],
                    ];
                    let cn = norm3(&c);
                    if cn > 1e-12 * r {
                        [c[0] / cn, c[1] / cn, c[2] / cn]
                    } else {
                        transverse_basis(xi, 3)[0]
                    }
                };
                for i in 0..n {
                    z[1 + n + i] = Complex64::new(amp * e[i], 0.0);
                }
            }
        }
        z
    }
}

/// Continuum frequency quadrature with radial power-law initial data.
#[derive(Debug, Clone)]
pub struct QuadratureProfile {
    pub dim: usize,
    /// `(r, w)` with `w` the radial weight excluding the Jacobian `r^(N-1)`.
    pub radial: Vec<(f64, f64)>,
    /// `(unit vector, weight)`; weights sum to the sphere area.
    pub angular: Vec<(Xi, f64)>,
    /// Blocks `j_lo..=j_hi` covered by the radial grid.
    pub j_lo: i32,
    pub j_hi: i32,
    /// Initial amplitude `r^(sigma1 - N/2)` on `r <= cutoff`.
    pub sigma1: f64,
    pub cutoff: f64,
    pub polarization: Polarization,
}

/// Node counts per radial segment and per angular direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureResolution {
    pub transition_nodes: usize,
    pub flat_nodes: usize,
    pub angular_2d: usize,
    pub polar_3d: usize,
    pub azimuth_3d: usize,
}

impl Default for QuadratureResolution {
    fn default() -> Self {
        Self {
            transition_nodes: 24,
            flat_nodes: 8,
            angular_2d: 64,
            polar_3d: 32,
            azimuth_3d: 64,
        }
    }
}

impl QuadratureProfile {
    pub fn new(dim: usize, sigma1: f64, cutoff: f64, j_lo: i32, j_hi: i32, res: QuadratureResolution) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidParameter(format!("dimension {dim}")));
        }
        if j_hi < j_lo {
            return Err(Error::InvalidParameter("empty block range".into()));
        }
        // segment breakpoints: 3/4 2^j and 4/3 2^j, where the cutoff profile switches
        let r_lo = 0.75 * 2f64.powi(j_lo);
        let r_hi = (ANNULUS.1 * 2f64.powi(j_hi)).min(cutoff);
        let mut cuts = Vec::new();
        for j in j_lo..=j_hi + 1 {
            for c in [0.75, 4.0 / 3.0] {
                let r = c * 2f64.powi(j);
                if r > r_lo && r < r_hi {
                    cuts.push((r, c > 1.0));
                }
            }
        }
        let mut radial = Vec::new();
        let mut a = r_lo;
        let mut in_transition = true;
        for (b, starts_flat) in cuts.into_iter().chain(std::iter::once((r_hi, false))) {
            if b > a {
                let n = if in_transition { res.transition_nodes } else { res.flat_nodes };
                radial.extend(gauss_legendre(n, a, b));
            }
            a = b;
            in_transition = !starts_flat;
        }
        let angular = if dim == 2 {
            let n = res.angular_2d;
            (0..n)
                .map(|i| {
                    let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                    ([th.cos(), th.sin(), 0.0], 2.0 * std::f64::consts::PI / n as f64)
                })
                .collect()
        } else {
            let mut out = Vec::new();
            let na = res.azimuth_3d;
            for (c, wc) in gauss_legendre(res.polar_3d, -1.0, 1.0) {
                let s = (1.0 - c * c).sqrt();
                for i in 0..na {
                    let ph = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / na as f64;
                    out.push(([s * ph.cos(), s * ph.sin(), c], wc * 2.0 * std::f64::consts::PI / na as f64));
                }
            }
            out
        };
        let p = Self {
            dim,
            radial,
            angular,
            j_lo,
            j_hi,
            sigma1,
            cutoff,
            polarization: Polarization::DensityMagnetic,
        };
        p.check_resolution()?;
        Ok(p)
    }

    /// Power-law profile on `|xi| <= 1` with blocks from `2^j_lo` up to the cutoff.
    pub fn power_law(dim: usize, sigma1: f64, j_lo: i32) -> Result<Self> {
        Self::new(dim, sigma1, 1.0, j_lo, 0, QuadratureResolution::default())
    }

    pub fn with_polarization(mut self, p: Polarization) -> Self {
        self.polarization = p;
        self
    }

    /// Every covered annulus must carry at least 32 radial nodes.
    fn check_resolution(&self) -> Result<()> {
        for j in self.j_lo..=self.j_hi {
            let lo = ANNULUS.0 * 2f64.powi(j);
            let hi = (ANNULUS.1 * 2f64.powi(j)).min(self.cutoff);
            if hi <= lo {
                continue;
            }
            let count = self.radial.iter().filter(|(r, _)| *r >= lo && *r <= hi).count();
            // annuli clipped by the cutoff need only proportional coverage
            let needed = if hi < ANNULUS.1 * 2f64.powi(j) { 1 } else { 32 };
            if count < needed {
                return Err(Error::InvalidParameter(format!("annulus {j} has {count} radial nodes, need {needed}")));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.radial.len() * self.angular.len()
    }

    pub fn amplitude(&self, r: f64) -> f64 {
        if r <= self.cutoff && r > 0.0 {
            r.powf(self.sigma1 - self.dim as f64 / 2.0)
        } else {
            0.0
        }
    }

    /// Initial mode vector at `xi`, satisfying `xi . H = 0`.
    pub fn initial_mode(&self, xi: &Xi, direction: &Xi) -> Vec<Complex64> {
        self.polarization.mode_vector(xi, self.dim, direction, self.amplitude(norm3(xi)))
    }

    /// `int f(xi) d xi` over the covered shell.
    pub fn integrate(&self, f: impl Fn(&Xi) -> f64) -> f64 {
        let mut acc = 0.0;
        for &(r, wr) in &self.radial {
            let jac = r.powi(self.dim as i32 - 1) * wr;
            for (e, wa) in &self.angular {
                acc += jac * wa * f(&[r * e[0], r * e[1], r * e[2]]);
            }
        }
        acc
    }
}

/// Per-time block norms `||Delta_j z(t)||_{L^2}` produced by the quadrature engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSeries {
    pub times: Vec<f64>,
    pub j_lo: i32,
    /// `blocks[t][j - j_lo]`.
    pub blocks: Vec<Vec<f64>>,
    /// Unfiltered `||z(t)||_{L^2}`.
    pub l2: Vec<f64>,
    /// Nodes that needed the dense exponential.
    pub dense_nodes: usize,
}

impl QuadratureSeries {
    pub fn besov(&self, index: usize, spec: BesovSpec) -> BesovNorm {
        BesovNorm::from_block_norms(spec, self.j_lo, &self.blocks[index])
    }

    pub fn totals(&self, spec: BesovSpec) -> Vec<f64> {
        (0..self.times.len()).map(|i| self.besov(i, spec).total).collect()
    }
}

/// Integrate `phi_j(|xi|)^2 |z(t, xi)|^2` over the profile, with `|z(t)|^2` at each node supplied by `flow`.
pub fn quadrature_series_with(
    profile: &QuadratureProfile,
    times: &[f64],
    mut flow: impl FnMut(&Xi) -> Result<(Vec<f64>, bool)>,
) -> Result<QuadratureSeries> {
    let nb = (profile.j_hi - profile.j_lo + 1) as usize;
    let mut acc = vec![vec![0.0; nb]; times.len()];
    let mut l2 = vec![0.0; times.len()];
    let mut dense_nodes = 0;
    for &(r, wr) in &profile.radial {
        if profile.amplitude(r) == 0.0 {
            continue;
        }
        let weights: Vec<f64> = (profile.j_lo..=profile.j_hi).map(|j| block_weight(j, r).powi(2)).collect();
        let jac = r.powi(profile.dim as i32 - 1) * wr;
        for (e, wa) in &profile.angular {
            let xi = [r * e[0], r * e[1], r * e[2]];
            let (norms, dense) = flow(&xi)?;
            dense_nodes += dense as usize;
            let w = jac * wa;
            for (ti, n2) in norms.iter().enumerate() {
                l2[ti] += w * n2;
                for (b, bw) in weights.iter().enumerate() {
                    if *bw != 0.0 {
                        acc[ti][b] += w * bw * n2;
                    }
                }
            }
        }
    }
    Ok(QuadratureSeries {
        times: times.to_vec(),
        j_lo: profile.j_lo,
        blocks: acc.into_iter().map(|v| v.into_iter().map(f64::sqrt).collect()).collect(),
        l2: l2.into_iter().map(f64::sqrt).collect(),
        dense_nodes,
    })
}

/// Block norms of the linear semigroup applied to the profile's initial data.
pub fn quadrature_series(profile: &QuadratureProfile, params: &MaterialParams, times: &[f64]) -> Result<QuadratureSeries> {
    quadrature_series_with(profile, times, |xi| {
        let flow = ModeFlow::new(build_symbol(xi, profile.dim, params))?;
        let z0 = profile.initial_mode(xi, &params.direction);
        Ok((flow.norms_sq(times, &z0)?, flow.uses_dense_fallback()))
    })
}

/// Whole-space `Bdot^s_{2,r}` norm of the linear solution at time `t`.
pub fn quadrature_linear_besov(profile: &QuadratureProfile, params: &MaterialParams, t: f64, spec: BesovSpec) -> Result<BesovNorm> {
    if spec.p != 2.0 {
        return Err(Error::InvalidParameter("the continuum engine supports p = 2 only".into()));
    }
    Ok(quadrature_series(profile, params, &[t])?.besov(0, spec))
}

/// Logarithmically spaced times.
pub fn log_times(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![t0];
    }
    (0..count)
        .map(|i| t0 * (t1 / t0).powf(i as f64 / (count - 1) as f64))
        .collect()
}

/// One row of a spectrum sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub xi_norm: f64,
    pub angle_to_i: f64,
    pub eig_index: usize,
    pub re: f64,
    pub im: f64,
}

/// Constraint-subspace eigenvalues for wavevectors at the given norms and angles to `I`.
pub fn spectrum_sweep(params: &MaterialParams, dim: usize, norms: &[f64], angles: &[f64]) -> Result<Vec<SpectrumRow>> {
    let dir = params.direction;
    // unit vector perpendicular to I within the first two coordinates (or the third axis)
    let perp = transverse_basis(&dir, dim)[0];
    let mut rows = Vec::new();
    for &r in norms {
        for &th in angles {
            let xi = [
                r * (th.cos() * dir[0] + th.sin() * perp[0]),
                r * (th.cos() * dir[1] + th.sin() * perp[1]),
                r * (th.cos() * dir[2] + th.sin() * perp[2]),
            ];
            let ev = build_symbol(&xi, dim, params).constraint_eigenvalues()?;
            for (i, l) in ev.iter().enumerate() {
                rows.push(SpectrumRow {
                    xi_norm: r,
                    angle_to_i: th,
                    eig_index: i,
                    re: l.re,
                    im: l.im,
                });
            }
        }
    }
    Ok(rows)
}

/// Quality of one candidate threshold `k0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub k0: i32,
    pub window_low: f64,
    pub window_high: f64,
    pub window_ok: bool,
    /// Least damped eigenvalue (real part) at the bottom of the high band, minimized over directions.
    pub bounded_rate: f64,
    /// Smallest `-Re(lambda) / |xi|^2` among the remaining eigenvalues there.
    pub parabolic_rate: f64,
    pub split_ok: bool,
}

/// Scan `k0` for the energy-functional window and the high-frequency eigenvalue split.
pub fn calibrate_k0(params: &MaterialParams, gamma: f64, dim: usize, k0s: impl IntoIterator<Item = i32>) -> Result<Vec<ThresholdReport>> {
    let mut out = Vec::new();
    for k0 in k0s {
        let (lo, hi) = equivalence_window(gamma, ANNULUS.1 * 2f64.powi(k0));
        let r = ANNULUS.0 * 2f64.powi(k0 + 1);
        let mut bounded = f64::INFINITY;
        let mut parabolic = f64::INFINITY;
        for a in 0..16 {
            let th = std::f64::consts::PI * (a as f64 + 0.5) / 16.0;
            let rows = spectrum_sweep(params, dim, &[r], &[th])?;
            let mut damp: Vec<f64> = rows.iter().map(|row| -row.re).collect();
            damp.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bounded = bounded.min(damp[0]);
            parabolic = parabolic.min(damp[1] / (r * r));
        }
        out.push(ThresholdReport {
            k0,
            window_low: lo,
            window_high: hi,
            window_ok: lo >= 0.25 && hi <= 4.0,
            bounded_rate: bounded,
            parabolic_rate: parabolic,
            split_ok: parabolic * r * r > 2.0 * bounded,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample, sample_solenoidal, Profile};
    use crate::model::linearized_rhs;
    use crate::spectral::TorusGrid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_xi(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Xi {
        let mut v = [0.0; 3];
        for x in v.iter_mut().take(dim) {
            *x = rng.random_range(-1.0..1.0);
        }
        let n = norm3(&v);
        [v[0] / n * r, v[1] / n * r, v[2] / n * r]
    }

    fn random_constrained(rng: &mut ChaCha8Rng, xi: &Xi, dim: usize) -> Vec<Complex64> {
        let mut z: Vec<Complex64> = (0..2 * dim + 1)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let r2 = dot3(xi, xi);
        if r2 > 0.0 {
            let p: Complex64 = (0..dim).map(|i| xi[i] * z[1 + dim + i]).sum::<Complex64>() / r2;
            for i in 0..dim {
                z[1 + dim + i] -= p * xi[i];
            }
        }
        z
    }

    fn params_2d() -> MaterialParams {
        MaterialParams::standard()
    }

    fn params_3d() -> MaterialParams {
        MaterialParams::new(0.4, 1.4, &[0.0, 0.6, 0.8]).unwrap()
    }

    #[test]
    fn zero_frequency_symbol_vanishes() {
        let s = build_symbol(&[0.0; 3], 3, &params_3d());
        assert!(s.matrix.iter().all(|v| *v == ZERO));
        let z = vec![ONE; 7];
        assert_eq!(propagate(&s, 3.0, &z).unwrap(), z);
    }

    #[test]
    fn reduced_blocks_match_closed_form() {
        let p = MaterialParams::new(0.5, 1.4, &[1.0, 0.0]).unwrap();
        let s = build_symbol(&[1.0, 0.0, 0.0], 2, &p);
        // (a, u1) block
        let b1 = CMat::from_row_slice(2, 2, &[s.matrix[(0, 0)], s.matrix[(0, 1)], s.matrix[(1, 0)], s.matrix[(1, 1)]]);
        // (u2, H2) block
        let b2 = CMat::from_row_slice(2, 2, &[s.matrix[(2, 2)], s.matrix[(2, 4)], s.matrix[(4, 2)], s.matrix[(4, 4)]]);
        // the blocks decouple from everything else when H1 = 0
        assert_eq!(s.matrix[(0, 2)], ZERO);
        assert_eq!(s.matrix[(1, 4)], ZERO);
        let mut e1 = eigenvalues(&b1, &s.xi).unwrap();
        e1.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        let r3 = 3f64.sqrt() / 2.0;
        assert!((e1[0] - Complex64::new(-0.5, -r3)).norm() < 1e-12);
        assert!((e1[1] - Complex64::new(-0.5, r3)).norm() < 1e-12);
        let e2 = eigenvalues(&b2, &s.xi).unwrap();
        for l in e2 {
            assert!((l * l + 1.5 * l + 1.5).norm() < 1e-12);
        }
    }

    #[test]
    fn constraint_subspace_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in [2, 3] {
            let p = if dim == 2 { params_2d() } else { params_3d() };
            for _ in 0..50 {
                let rad = rng.random_range(0.01..10.0);
                let xi = random_xi(&mut rng, dim, rad);
                let s = build_symbol(&xi, dim, &p);
                let z = random_constrained(&mut rng, &xi, dim);
                let mz = s.apply(&z);
                let lon: Complex64 = (0..dim).map(|i| xi[i] * mz[1 + dim + i]).sum();
                assert!(lon.norm() < 1e-12 * (1.0 + dot3(&xi, &xi)));
            }
        }
    }

    #[test]
    fn symbol_matches_lattice_rhs() {
        let g = TorusGrid::new(2, 16, 2.0 * PI).unwrap();
        let d = Dyadic::with_rule(g, 1.0);
        let p = params_2d().with_direction(&[0.6, -0.8]).unwrap();
        let st = State::new(
            sample(&d, Rank::Scalar, Profile::Flat, 4, 0),
            sample(&d, Rank::Vector, Profile::Flat, 4, 1),
            sample_solenoidal(&d, Profile::Flat, 4, 2),
        )
        .unwrap();
        let rhs = linearized_rhs(&st, &p);
        for k in 0..g.len() {
            let s = build_symbol(&g.xi(k), 2, &p);
            let want = s.apply(&st.mode_vector(k));
            let got = rhs.mode_vector(k);
            for (a, b) in want.iter().zip(&got) {
                assert!((a - b).norm() < 1e-12 * (1.0 + a.norm()));
            }
        }
    }

    #[test]
    fn propagator_semigroup_and_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dim in [2, 3] {
            let p = if dim == 2 { params_2d() } else { params_3d() };
            for _ in 0..40 {
                let rad = 10f64.powf(rng.random_range(-2.0..1.0));
                let xi = random_xi(&mut rng, dim, rad);
                let s = build_symbol(&xi, dim, &p);
                let flow = ModeFlow::new(s.clone()).unwrap();
                let z0 = random_constrained(&mut rng, &xi, dim);
                assert_eq!(flow.propagate(0.0, &z0).unwrap().len(), z0.len());
                let (t1, t2) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
                let direct = flow.propagate(t1 + t2, &z0).unwrap();
                let composed = flow.propagate(t2, &flow.propagate(t1, &z0).unwrap()).unwrap();
                let scale = z0.iter().map(|v| v.norm()).fold(0.0, f64::max);
                for (a, b) in direct.iter().zip(&composed) {
                    assert!((a - b).norm() < 1e-10 * scale);
                }
                let lon: Complex64 = (0..dim).map(|i| xi[i] * direct[1 + dim + i]).sum();
                assert!(lon.norm() < 1e-10 * scale * norm3(&xi));
                // compare against the dense exponential
                let dense = (s.matrix.clone() * Complex64::new(t1, 0.0)).exp() * CVec::from_column_slice(&z0);
                let got = flow.propagate(t1, &z0).unwrap();
                for (a, b) in dense.iter().zip(&got) {
                    assert!((a - b).norm() < 1e-10 * scale);
                }
                let n2 = flow.norms_sq(&[t1], &z0).unwrap()[0];
                let direct_n2: f64 = got.iter().map(|v| v.norm_sqr()).sum();
                assert!((n2 - direct_n2).abs() < 1e-10 * scale * scale);
            }
        }
    }

    #[test]
    fn defective_point_uses_dense_fallback() {
        // with I perpendicular to xi the (a, omega) pair has a double root at |xi| = 2
        let p = MaterialParams::new(0.5, 1.4, &[0.0, 1.0]).unwrap();
        let xi = [2.0, 0.0, 0.0];
        let s = build_symbol(&xi, 2, &p);
        let flow = ModeFlow::new(s.clone()).unwrap();
        let z0 = vec![ONE, ZERO, ZERO, ZERO, ZERO];
        let dense = (s.matrix.clone() * Complex64::new(1.5, 0.0)).exp() * CVec::from_column_slice(&z0);
        for (a, b) in dense.iter().zip(&flow.propagate(1.5, &z0).unwrap()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn euclidean_norm_is_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = params_3d();
        for _ in 0..30 {
            let rad = rng.random_range(0.05..5.0);
                let xi = random_xi(&mut rng, 3, rad);
            let flow = ModeFlow::new(build_symbol(&xi, 3, &p)).unwrap();
            let z0 = random_constrained(&mut rng, &xi, 3);
            let ns = flow.norms_sq(&log_times(0.01, 50.0, 30), &z0).unwrap();
            for w in ns.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn spectrum_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for dim in [2, 3] {
            for _ in 0..300 {
                let mut dir = random_xi(&mut rng, dim, 1.0);
                if dim == 2 {
                    dir[2] = 0.0;
                }
                let p = MaterialParams::new(rng.random_range(0.1..0.9), 1.4, &dir[..dim]).unwrap();
                let rad = 10f64.powf(rng.random_range(-3.0..3.0));
                let xi = random_xi(&mut rng, dim, rad);
                let ab = build_symbol(&xi, dim, &p).spectral_abscissa().unwrap();
                assert!(ab <= 1e-12, "{ab}");
            }
        }
    }

    #[test]
    fn bounded_high_frequency_mode() {
        let p = params_3d();
        for r in [10.0, 100.0, 1000.0] {
            let ev = build_symbol(&[0.0, 0.0, r], 3, &p).constraint_eigenvalues().unwrap();
            let bounded: Vec<_> = ev.iter().filter(|l| l.norm() < 0.1 * r * r).collect();
            assert_eq!(bounded.len(), 1);
            if r == 1000.0 {
                assert!((bounded[0].re + 1.0).abs() < 0.1);
            }
        }
    }

    #[test]
    fn transformed_round_trip_and_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [2, 3] {
            let p = if dim == 2 { params_2d() } else { params_3d() };
            for _ in 0..30 {
                let rad = rng.random_range(0.1..5.0);
                let xi = random_xi(&mut rng, dim, rad);
                let z = random_constrained(&mut rng, &xi, dim);
                let t = to_transformed_mode(&xi, dim, &z).unwrap();
                let back = from_transformed_mode(&xi, dim, &t);
                for (a, b) in z.iter().zip(&back) {
                    assert!((a - b).norm() < 1e-12);
                }
                // T M z = Mt T z
                let mz = build_symbol(&xi, dim, &p).apply(&z);
                let lhs = to_transformed_mode(&xi, dim, &mz).unwrap().to_vec();
                let rhs = transformed_symbol(&xi, dim, &p) * CVec::from_column_slice(&t.to_vec());
                for (a, b) in lhs.iter().zip(rhs.iter()) {
                    assert!((a - b).norm() < 1e-12 * (1.0 + dot3(&xi, &xi)));
                }
            }
        }
    }

    #[test]
    fn lattice_transformed_variables() {
        let g = TorusGrid::new(2, 32, 4.0 * PI).unwrap();
        let d = Dyadic::new(g);
        let u = sample(&d, Rank::Vector, Profile::Flat, 6, 0);
        let st = State::new(sample(&d, Rank::Scalar, Profile::Flat, 6, 1), u.clone(), sample_solenoidal(&d, Profile::Flat, 6, 2)).unwrap();
        let t = to_transformed(&st).unwrap();
        let back = from_transformed(&t).unwrap();
        assert!(back.sub(&st).unwrap().norm_l2() <= 1e-12 * st.norm_l2());
        // gradient velocity has no vorticity, solenoidal velocity no dilatation
        let phi = sample(&d, Rank::Scalar, Profile::Flat, 6, 3);
        let grad = State::new(st.a.clone(), phi.gradient().unwrap(), st.h.clone()).unwrap();
        assert!(to_transformed(&grad).unwrap().vorticity.norm_l2() < 1e-12);
        let sol = State::new(st.a.clone(), u.leray_project().unwrap(), st.h.clone()).unwrap();
        assert!(to_transformed(&sol).unwrap().omega.norm_l2() < 1e-12);
        let mut meanful = st.clone();
        meanful.u.comps[0][0] = ONE;
        assert!(matches!(to_transformed(&meanful), Err(Error::NonzeroMean { .. })));
    }

    #[test]
    fn effective_velocity_cases() {
        let g = TorusGrid::new(2, 32, 4.0 * PI).unwrap();
        let d = Dyadic::new(g);
        let u = sample(&d, Rank::Vector, Profile::Flat, 7, 0);
        let a = u.divergence().unwrap();
        let st = State::new(a.clone(), u.clone(), SpectralField::zeros(g, Rank::Vector)).unwrap();
        assert_eq!(effective_velocity(&st).unwrap().norm_l2(), 0.0);
        // u = 0: w = i xi |xi|^-2 a on each mode
        let k = g.flat_index([2, 1, 0]);
        let mut single = SpectralField::zeros(g, Rank::Scalar);
        single.comps[0][k] = Complex64::new(0.3, 0.1);
        let st = State::new(single.clone(), SpectralField::zeros(g, Rank::Vector), SpectralField::zeros(g, Rank::Vector)).unwrap();
        let w = effective_velocity(&st).unwrap();
        let xi = g.xi(k);
        for i in 0..2 {
            let expect = I * xi[i] / dot3(&xi, &xi) * single.comps[0][k];
            assert!((w.comps[i][k] - expect).norm() < 1e-15);
        }
        let mut meanful = st;
        meanful.a.comps[0][0] = ONE;
        assert!(effective_velocity(&meanful).is_err());
    }

    #[test]
    fn effective_velocity_equation_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for dim in [2, 3] {
            let p = if dim == 2 { params_2d() } else { params_3d() };
            for _ in 0..40 {
                let rad = 10f64.powf(rng.random_range(-1.0..1.0));
                let xi = random_xi(&mut rng, dim, rad);
                let s = build_symbol(&xi, dim, &p);
                let flow = ModeFlow::new(s.clone()).unwrap();
                let z0 = random_constrained(&mut rng, &xi, dim);
                for t in [0.0, 0.3, 2.0] {
                    let z = flow.propagate(t, &z0).unwrap();
                    assert!(effective_velocity_residual(&s, &p, &z) < 1e-10);
                    assert!(damped_density_residual(&s, &z) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn energy_functional_window() {
        let (lo, hi) = equivalence_window(0.125, 8.0 / 3.0);
        assert!(lo >= 0.25 && hi <= 4.0);
        assert!(EnergyFunctional::new(0.125, 0).is_ok());
        assert!(EnergyFunctional::new(0.125, 4).is_err());
        let ef = EnergyFunctional::standard();
        let pure_a = TransformedMode {
            a: Complex64::new(2.0, 0.0),
            omega: ZERO,
            vorticity: vec![ZERO; 4],
            magnetic: vec![ZERO; 4],
        };
        let r = 0.7;
        assert!((ef.mode_form(r, &pure_a) - (1.0 + 0.125 * r * r) * 4.0).abs() < 1e-14);
    }

    #[test]
    fn lattice_block_energy() {
        let g = TorusGrid::new(2, 128, 16.0 * PI).unwrap();
        let d = Dyadic::new(g);
        let ef = EnergyFunctional::standard();
        let zero = State::zeros(g);
        assert_eq!(ef.block_energy(&d, &zero, 0).unwrap(), 0.0);
        assert!(matches!(ef.block_energy(&d, &zero, 1), Err(Error::AboveThreshold { .. })));
        let st = State::new(
            sample(&d, Rank::Scalar, Profile::Flat, 9, 0),
            sample(&d, Rank::Vector, Profile::Flat, 9, 1),
            sample_solenoidal(&d, Profile::Flat, 9, 2),
        )
        .unwrap();
        for k in d.j_min()..=0 {
            let (j, n) = ef.block_energy_and_norm(&d, &st, k).unwrap();
            let ratio = j * j / (n * n);
            assert!((0.25..=4.0).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn low_block_decay_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = params_2d();
        let ef = EnergyFunctional::standard();
        for k in -3..=0 {
            let modes: Vec<(Xi, Vec<Complex64>)> = (0..20)
                .map(|_| {
                    let rad = 2f64.powi(k) * rng.random_range(0.8..2.6);
                let xi = random_xi(&mut rng, 2, rad);
                    let z = random_constrained(&mut rng, &xi, 2);
                    (xi, z)
                })
                .collect();
            let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.25 / 4f64.powi(k)).collect();
            let dec = verify_low_freq_decay(&p, &ef, 2, k, &modes, &times).unwrap();
            assert!(dec.passed && dec.coefficient > 0.0, "{dec:?}");
        }
        let empty = verify_low_freq_decay(&p, &ef, 2, 0, &[], &[0.0, 1.0]).unwrap();
        assert!(empty.passed);
    }

    #[test]
    fn heat_mode_decays_at_exact_rate() {
        // I perpendicular to xi and H transverse to both: H decouples as a pure heat mode
        let ef = EnergyFunctional::standard();
        let k = -1;
        let r = 0.6;
        let t = 3.0;
        let p2 = MaterialParams::new(0.5, 1.4, &[1.0, 0.0, 0.0]).unwrap();
        let xi2 = [0.0, 0.0, r];
        let mut z2 = vec![ZERO; 7];
        z2[5] = ONE; // H_2, transverse to xi and to I
        let flow2 = ModeFlow::new(build_symbol(&xi2, 3, &p2)).unwrap();
        let zt2 = flow2.propagate(t, &z2).unwrap();
        assert!((zt2[5].re - (-r * r * t).exp()).abs() < 1e-12);
        let modes = vec![(xi2, z2)];
        let times: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let dec = verify_low_freq_decay(&p2, &ef, 3, k, &modes, &times).unwrap();
        assert!((dec.coefficient * 4f64.powi(k) - r * r).abs() < 1e-9, "{dec:?}");
    }

    #[test]
    fn gauss_legendre_and_gaussian_integral() {
        let nodes = gauss_legendre(10, 0.0, 2.0);
        let poly: f64 = nodes.iter().map(|(x, w)| w * x.powi(19)).sum();
        assert!((poly - 2f64.powi(20) / 20.0).abs() < 1e-9 * poly);
        for dim in [2, 3] {
            let p = QuadratureProfile::new(dim, 1.0, f64::INFINITY, -24, 4, QuadratureResolution::default()).unwrap();
            let got = p.integrate(|xi| (-dot3(xi, xi)).exp());
            let want = PI.powf(dim as f64 / 2.0);
            assert!((got - want).abs() < 1e-8 * want, "{dim}: {got} vs {want}");
        }
    }

    #[test]
    fn initial_profile_membership() {
        // sup_j 2^{-j sigma1} ||Delta_j z0|| is flat across low blocks
        let p = QuadratureProfile::power_law(2, 1.0, -12).unwrap();
        let s = quadrature_series(&p, &params_2d(), &[0.0]).unwrap();
        let weighted: Vec<f64> = (p.j_lo..=-2).map(|j| 2f64.powf(-(j as f64)) * s.blocks[0][(j - p.j_lo) as usize]).collect();
        let (mn, mx) = weighted.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(mx / mn < 1.0 + 1e-6, "{weighted:?}");
        for dim in [2, 3] {
            let p = QuadratureProfile::power_law(dim, 1.0, -6).unwrap();
            for (xi, _) in p.angular.iter().take(5) {
                let x = [0.5 * xi[0], 0.5 * xi[1], 0.5 * xi[2]];
                let z = p.initial_mode(&x, &params_3d().direction);
                let lon: Complex64 = (0..dim).map(|i| x[i] * z[1 + dim + i]).sum();
                assert!(lon.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn heat_oracle_closed_form() {
        // |z0| = 1 on |xi| <= 1 in 2D (sigma1 = 1): ||e^{t Lap} z0||^2 = 2 pi (1 - e^{-2t}) / (4t)
        let p = QuadratureProfile::power_law(2, 1.0, -30).unwrap();
        let times = log_times(1.0, 1e4, 21);
        let s = quadrature_series_with(&p, &times, |xi| {
            let r2 = dot3(xi, xi);
            Ok((times.iter().map(|t| (-2.0 * r2 * t).exp()).collect(), false))
        })
        .unwrap();
        for (t, l2) in times.iter().zip(&s.l2) {
            let want = (2.0 * PI * (1.0 - (-2.0 * t).exp()) / (4.0 * t)).sqrt();
            assert!((l2 - want).abs() < 1e-8 * want, "{t}: {l2} vs {want}");
        }
        // Besov B^0_{2,1} decays like t^{-1/2}
        let spec = BesovSpec::new(0.0, 2.0, 1.0, 0).unwrap();
        let tot = s.totals(spec);
        let slope = (tot[20] / tot[10]).ln() / (times[20] / times[10]).ln();
        assert!((slope + 0.5).abs() < 0.02, "{slope}");
    }

    #[test]
    fn quadrature_rejects_other_p() {
        let p = QuadratureProfile::power_law(2, 1.0, -4).unwrap();
        let spec = BesovSpec::new(0.0, 3.0, 1.0, 0).unwrap();
        assert!(quadrature_linear_besov(&p, &params_2d(), 1.0, spec).is_err());
    }

    #[test]
    fn calibration_reports() {
        let reps = calibrate_k0(&params_2d(), 0.125, 2, -2..=4).unwrap();
        assert_eq!(reps.len(), 7);
        assert!(reps.iter().find(|r| r.k0 == 0).unwrap().window_ok);
        assert!(!reps.iter().find(|r| r.k0 == 4).unwrap().window_ok);
        assert!(reps.iter().find(|r| r.k0 == 4).unwrap().split_ok);
    }

    #[test]
    fn sweep_rows() {
        let rows = spectrum_sweep(&params_2d(), 2, &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 4);
        assert!(rows.iter().filter(|r| r.xi_norm == 0.0).all(|r| r.re == 0.0 && r.im == 0.0));
    }

    proptest! {
        #[test]
        fn norm_contraction(seed in 0u64..10_000, lr in -2.0f64..2.0, t in 0.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xi = random_xi(&mut rng, 2, 10f64.powf(lr));
            let z0 = random_constrained(&mut rng, &xi, 2);
            let zt = propagate(&build_symbol(&xi, 2, &params_2d()), t, &z0).unwrap();
            let n0: f64 = z0.iter().map(|v| v.norm_sqr()).sum();
            let nt: f64 = zt.iter().map(|v| v.norm_sqr()).sum();
            prop_assert!(nt <= n0 * (1.0 + 1e-10));
        }
    }
}
