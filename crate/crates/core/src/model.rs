//! The perturbation state `(a, u, H)` around the equilibrium `(1, 0, I)` and
//! the source terms of the perturbation system
//!
//! ```text
//! d_t a + div u                                  = f
//! d_t u - A u + grad a + grad(I.H) - (I.grad) H  = g
//! d_t H - Lap H + (div u) I - (I.grad) u         = m,      div H = 0,
//! ```
//!
//! with `A = mu Lap + (lambda + mu) grad div` and `2 mu + lambda = 1`.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::littlewood_paley::TWO_THIRDS;
use crate::spectral::{dot3, transform_forward, transform_inverse, PhysicalField, Rank, SpectralField, TorusGrid, Xi};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// How the viscosities depend on the density `1 + a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViscosityLaw {
    Constant,
    /// `mu(rho) = mu* + mu_slope (rho - 1)`, and likewise for `lambda`.
    Affine { mu_slope: f64, lambda_slope: f64 },
}

/// Material constants in the normalized units `rho* = 1`, `P'(1) = 1`, `2 mu* + lambda* = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub mu: f64,
    pub lambda: f64,
    /// Exponent of the pressure law `P(rho) = rho^gamma / gamma`.
    pub pressure_exponent: f64,
    /// Unit vector of the equilibrium magnetic field (third entry unused in 2D).
    pub direction: Xi,
    pub viscosity: ViscosityLaw,
    /// Lower bound enforced on `1 + a`.
    pub density_floor: f64,
}

impl MaterialParams {
    /// Parameters with `lambda = 1 - 2 mu`; `direction` is normalized.
    pub fn new(mu: f64, pressure_exponent: f64, direction: &[f64]) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!("shear viscosity {mu} must be positive")));
        }
        if !(pressure_exponent > 1.0) {
            return Err(Error::InvalidParameter(format!("pressure exponent {pressure_exponent} must exceed 1")));
        }
        if direction.len() < 2 || direction.len() > 3 {
            return Err(Error::InvalidParameter("field direction needs 2 or 3 entries".into()));
        }
        let mut d = [0.0; 3];
        d[..direction.len()].copy_from_slice(direction);
        let n = dot3(&d, &d).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter("field direction must be nonzero".into()));
        }
        d.iter_mut().for_each(|x| *x /= n);
        Ok(Self {
            mu,
            lambda: 1.0 - 2.0 * mu,
            pressure_exponent,
            direction: d,
            viscosity: ViscosityLaw::Constant,
            density_floor: 0.1,
        })
    }

    /// `mu = 1/2`, `lambda = 0`, `gamma = 1.4`, field along the first axis.
    pub fn standard() -> Self {
        Self::new(0.5, 1.4, &[1.0, 0.0]).expect("valid defaults")
    }

    pub fn with_viscosity(mut self, law: ViscosityLaw) -> Self {
        self.viscosity = law;
        self
    }

    pub fn with_direction(mut self, direction: &[f64]) -> Result<Self> {
        let fresh = Self::new(self.mu, self.pressure_exponent, direction)?;
        self.direction = fresh.direction;
        Ok(self)
    }

    /// Check the direction against the grid dimension.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if dim == 2 && self.direction[2] != 0.0 {
            return Err(Error::InvalidParameter("2D run needs a planar field direction".into()));
        }
        Ok(())
    }
}

/// Pointwise nonlinear functions of the density perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composite {
    /// `a / (1 + a)`
    Pi1,
    /// `P'(1 + a) / (1 + a) - 1`
    Pi2,
    /// `mu(1 + a) - mu(1)`
    MuTilde,
    /// `lambda(1 + a) - lambda(1)`
    LambdaTilde,
}

impl Composite {
    pub fn eval(self, a: f64, params: &MaterialParams) -> f64 {
        match self {
            Composite::Pi1 => a / (1.0 + a),
            Composite::Pi2 => (1.0 + a).powf(params.pressure_exponent - 2.0) - 1.0,
            Composite::MuTilde => match params.viscosity {
                ViscosityLaw::Constant => 0.0,
                ViscosityLaw::Affine { mu_slope, .. } => mu_slope * a,
            },
            Composite::LambdaTilde => match params.viscosity {
                ViscosityLaw::Constant => 0.0,
                ViscosityLaw::Affine { lambda_slope, .. } => lambda_slope * a,
            },
        }
    }
}

/// First lattice point where `1 + a` drops below the floor.
pub fn check_density(a: &[f64], floor: f64) -> Result<()> {
    match a.iter().position(|v| !(1.0 + v >= floor)) {
        Some(index) => Err(Error::DensityFloor {
            value: 1.0 + a[index],
            floor,
            index,
        }),
        None => Ok(()),
    }
}

/// Evaluate a composite of a spectral scalar on the collocation lattice and transform back.
pub fn composite(which: Composite, a: &SpectralField, params: &MaterialParams) -> Result<SpectralField> {
    let phys = transform_inverse(a);
    check_density(&phys.comps[0], params.density_floor)?;
    let vals = phys.comps[0].iter().map(|&v| which.eval(v, params)).collect();
    transform_forward(&PhysicalField::from_components(a.grid, Rank::Scalar, vec![vals])?)
}

/// Density, velocity and magnetic perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub a: SpectralField,
    pub u: SpectralField,
    pub h: SpectralField,
}

impl State {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            a: SpectralField::zeros(grid, Rank::Scalar),
            u: SpectralField::zeros(grid, Rank::Vector),
            h: SpectralField::zeros(grid, Rank::Vector),
        }
    }

    pub fn new(a: SpectralField, u: SpectralField, h: SpectralField) -> Result<Self> {
        a.grid.check_same(&u.grid)?;
        a.grid.check_same(&h.grid)?;
        for (f, want) in [(&a, Rank::Scalar), (&u, Rank::Vector), (&h, Rank::Vector)] {
            if f.rank != want {
                return Err(Error::RankMismatch {
                    expected: want.name(),
                    found: f.rank.name(),
                });
            }
        }
        Ok(Self { a, u, h })
    }

    pub fn grid(&self) -> TorusGrid {
        self.a.grid
    }

    /// Number of scalar unknowns per mode, `2N + 1`.
    pub fn width(&self) -> usize {
        2 * self.grid().dim() + 1
    }

    pub fn fields(&self) -> [&SpectralField; 3] {
        [&self.a, &self.u, &self.h]
    }

    /// Coefficients of mode `k` in the order `(a, u_1..u_N, H_1..H_N)`.
    pub fn mode_vector(&self, k: usize) -> Vec<Complex64> {
        let mut z = Vec::with_capacity(self.width());
        z.push(self.a.comps[0][k]);
        z.extend(self.u.comps.iter().map(|c| c[k]));
        z.extend(self.h.comps.iter().map(|c| c[k]));
        z
    }

    pub fn set_mode_vector(&mut self, k: usize, z: &[Complex64]) {
        let n = self.grid().dim();
        self.a.comps[0][k] = z[0];
        for i in 0..n {
            self.u.comps[i][k] = z[1 + i];
            self.h.comps[i][k] = z[1 + n + i];
        }
    }

    pub fn scale(&self, s: f64) -> State {
        State {
            a: self.a.scale(s),
            u: self.u.scale(s),
            h: self.h.scale(s),
        }
    }

    pub fn add(&self, other: &State) -> Result<State> {
        Ok(State {
            a: self.a.add(&other.a)?,
            u: self.u.add(&other.u)?,
            h: self.h.add(&other.h)?,
        })
    }

    pub fn sub(&self, other: &State) -> Result<State> {
        Ok(State {
            a: self.a.sub(&other.a)?,
            u: self.u.sub(&other.u)?,
            h: self.h.sub(&other.h)?,
        })
    }

    /// Stacked `L²` norm of the triple.
    pub fn norm_l2(&self) -> f64 {
        self.fields().iter().map(|f| f.norm_l2().powi(2)).sum::<f64>().sqrt()
    }

    /// Largest lattice value of `|a|`, `|u_i|`, `|H_i|`.
    pub fn sup_norm(&self) -> f64 {
        self.fields()
            .iter()
            .map(|f| transform_inverse(f).max_abs())
            .fold(0.0, f64::max)
    }

    pub fn max_div_h(&self) -> f64 {
        self.h.max_divergence().unwrap_or(f64::INFINITY)
    }

    /// Check realness, the constraint `div H = 0` and the density floor.
    pub fn validate(&self, params: &MaterialParams) -> Result<()> {
        for (name, f) in [("a", &self.a), ("u", &self.u), ("H", &self.h)] {
            if !f.is_hermitian(1e-10) {
                return Err(Error::InvalidParameter(format!("{name} is not a real field")));
            }
        }
        let scale = self.h.max_coeff().max(f64::MIN_POSITIVE);
        let div = self.max_div_h();
        if div > 1e-10 * scale.max(1.0) {
            return Err(Error::Constraint(format!("max |div H| = {div:e}")));
        }
        check_density(&transform_inverse(&self.a).comps[0], params.density_floor)
    }
}

/// Linear part of the right-hand side:
/// `(-div u, A u - grad a - grad(I.H) + (I.grad) H, Lap H - (div u) I + (I.grad) u)`.
pub fn linearized_rhs(state: &State, params: &MaterialParams) -> State {
    let g = state.grid();
    let n = g.dim();
    let dir = params.direction;
    let mut out = State::zeros(g);
    for k in 0..g.len() {
        let xi = g.xi(k);
        let r2 = dot3(&xi, &xi);
        let a = state.a.comps[0][k];
        let mut xi_u = Complex64::new(0.0, 0.0);
        let mut dir_h = Complex64::new(0.0, 0.0);
        for j in 0..n {
            xi_u += xi[j] * state.u.comps[j][k];
            dir_h += dir[j] * state.h.comps[j][k];
        }
        let dir_xi = dot3(&dir, &xi);
        out.a.comps[0][k] = -I * xi_u;
        for i in 0..n {
            let u = state.u.comps[i][k];
            let h = state.h.comps[i][k];
            out.u.comps[i][k] = -(params.mu * r2 * u + (params.lambda + params.mu) * xi[i] * xi_u) - I * xi[i] * a - I * xi[i] * dir_h
                + I * dir_xi * h;
            out.h.comps[i][k] = -r2 * h - I * xi_u * dir[i] + I * dir_xi * u;
        }
    }
    out
}

/// Physical-space ingredients shared by the three source terms.
struct Lattice {
    a: Vec<f64>,
    u: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    grad_u: Vec<Vec<f64>>,
    grad_h: Vec<Vec<f64>>,
}

fn lattice_fields(state: &State) -> Result<Lattice> {
    let inv = |f: &SpectralField| transform_inverse(f).comps;
    Ok(Lattice {
        a: inv(&state.a).remove(0),
        u: inv(&state.u),
        h: inv(&state.h),
        grad_u: inv(&state.u.gradient()?),
        grad_h: inv(&state.h.gradient()?),
    })
}

fn forward(grid: TorusGrid, rank: Rank, comps: Vec<Vec<f64>>, rule: f64) -> Result<SpectralField> {
    Ok(transform_forward(&PhysicalField::from_components(grid, rank, comps)?)?.dealias(rule))
}

/// `f = -div(a u)`.
pub fn source_f(state: &State, rule: f64) -> Result<SpectralField> {
    let g = state.grid();
    let a = transform_inverse(&state.a).comps.remove(0);
    let u = transform_inverse(&state.u).comps;
    let au = u.iter().map(|c| c.iter().zip(&a).map(|(x, y)| x * y).collect()).collect();
    Ok(forward(g, Rank::Vector, au, rule)?.divergence()?.scale(-1.0))
}

/// `m = -H div u + (H.grad) u - (u.grad) H`.
pub fn source_m(state: &State, rule: f64) -> Result<SpectralField> {
    let lat = lattice_fields(state)?;
    source_m_from(state.grid(), &lat, rule)
}

fn source_m_from(g: TorusGrid, lat: &Lattice, rule: f64) -> Result<SpectralField> {
    let n = g.dim();
    let mut out = vec![vec![0.0; g.len()]; n];
    for x in 0..g.len() {
        let div_u: f64 = (0..n).map(|j| lat.grad_u[j * n + j][x]).sum();
        for i in 0..n {
            let mut v = -lat.h[i][x] * div_u;
            for j in 0..n {
                v += lat.h[j][x] * lat.grad_u[i * n + j][x] - lat.u[j][x] * lat.grad_h[i * n + j][x];
            }
            out[i][x] = v;
        }
    }
    forward(g, Rank::Vector, out, rule)
}

/// Momentum source `g`, assembled from its seven groups.
pub fn source_g(state: &State, params: &MaterialParams, rule: f64) -> Result<SpectralField> {
    let lat = lattice_fields(state)?;
    source_g_from(state, params, &lat, rule)
}

fn source_g_from(state: &State, params: &MaterialParams, lat: &Lattice, rule: f64) -> Result<SpectralField> {
    let g = state.grid();
    let n = g.dim();
    check_density(&lat.a, params.density_floor)?;
    let dir = params.direction;

    // linear operators evaluated spectrally, then sampled
    let au = {
        let mut out = SpectralField::zeros(g, Rank::Vector);
        for k in 0..g.len() {
            let xi = g.xi(k);
            let r2 = dot3(&xi, &xi);
            let xi_u: Complex64 = (0..n).map(|j| xi[j] * state.u.comps[j][k]).sum();
            for i in 0..n {
                out.comps[i][k] = -(params.mu * r2 * state.u.comps[i][k] + (params.lambda + params.mu) * xi[i] * xi_u);
            }
        }
        transform_inverse(&out).comps
    };
    let grad_a = transform_inverse(&state.a.gradient()?).comps;
    let magnetic_lin = {
        // grad(I.H) - (I.grad) H
        let mut out = SpectralField::zeros(g, Rank::Vector);
        for k in 0..g.len() {
            let xi = g.deriv_xi(k);
            let dir_h: Complex64 = (0..n).map(|j| dir[j] * state.h.comps[j][k]).sum();
            let dir_xi = dot3(&dir, &xi);
            for i in 0..n {
                out.comps[i][k] = I * xi[i] * dir_h - I * dir_xi * state.h.comps[i][k];
            }
        }
        transform_inverse(&out).comps
    };
    let viscous = match params.viscosity {
        ViscosityLaw::Constant => None,
        ViscosityLaw::Affine { .. } => {
            let mut stress = vec![vec![0.0; g.len()]; n * n];
            for x in 0..g.len() {
                let mu_t = Composite::MuTilde.eval(lat.a[x], params);
                let la_t = Composite::LambdaTilde.eval(lat.a[x], params);
                let div_u: f64 = (0..n).map(|j| lat.grad_u[j * n + j][x]).sum();
                for i in 0..n {
                    for j in 0..n {
                        let d = 0.5 * (lat.grad_u[i * n + j][x] + lat.grad_u[j * n + i][x]);
                        stress[i * n + j][x] = 2.0 * mu_t * d + if i == j { la_t * div_u } else { 0.0 };
                    }
                }
            }
            let s = transform_forward(&PhysicalField::from_components(g, Rank::Matrix, stress)?)?;
            Some(transform_inverse(&s.divergence()?).comps)
        }
    };

    let mut out = vec![vec![0.0; g.len()]; n];
    for x in 0..g.len() {
        let a = lat.a[x];
        let pi1 = Composite::Pi1.eval(a, params);
        let pi2 = Composite::Pi2.eval(a, params);
        let inv_rho = 1.0 - pi1;
        for i in 0..n {
            let mut v = 0.0;
            for j in 0..n {
                // -(u.grad) u
                v -= lat.u[j][x] * lat.grad_u[i * n + j][x];
                // -(1/(1+a)) (1/2 grad|H|^2 - (H.grad) H)_i = -(1/(1+a)) H_j (d_i H_j - d_j H_i)
                v -= inv_rho * lat.h[j][x] * (lat.grad_h[j * n + i][x] - lat.grad_h[i * n + j][x]);
            }
            v -= pi1 * au[i][x];
            v -= pi2 * grad_a[i][x];
            v += pi1 * magnetic_lin[i][x];
            if let Some(vis) = &viscous {
                v += inv_rho * vis[i][x];
            }
            out[i][x] = v;
        }
    }
    forward(g, Rank::Vector, out, rule)
}

/// Sources `(f, g, m)` evaluated together, sharing the lattice transforms.
pub fn sources(state: &State, params: &MaterialParams, rule: f64) -> Result<State> {
    let lat = lattice_fields(state)?;
    let g = state.grid();
    let au = lat.u.iter().map(|c| c.iter().zip(&lat.a).map(|(x, y)| x * y).collect()).collect();
    let f = forward(g, Rank::Vector, au, rule)?.divergence()?.scale(-1.0);
    let gm = source_g_from(state, params, &lat, rule)?;
    let m = source_m_from(g, &lat, rule)?;
    State::new(f, gm, m)
}

/// Sources with the default two-thirds rule.
pub fn sources_default(state: &State, params: &MaterialParams) -> Result<State> {
    sources(state, params, TWO_THIRDS)
}

const MAGIC: &[u8; 8] = b"MHDSNAP1";

/// Write `state` at time `t`: an 8-byte tag, then `N`, `M` (u64), `L`, `t` (f64),
/// then the coefficients of `a`, `u_1..`, `H_1..` in lexicographic lattice order
/// (`k` from `-M/2` to `M/2 - 1`, first axis slowest) as little-endian `(re, im)` pairs.
pub fn write_snapshot<W: Write>(w: &mut W, state: &State, t: f64) -> Result<()> {
    let g = state.grid();
    w.write_all(MAGIC)?;
    w.write_all(&(g.dim() as u64).to_le_bytes())?;
    w.write_all(&(g.points() as u64).to_le_bytes())?;
    w.write_all(&g.length().to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    let order = lexicographic_order(&g);
    let mut buf = Vec::with_capacity(16 * g.len());
    for f in state.fields() {
        for c in &f.comps {
            buf.clear();
            for &k in &order {
                buf.extend_from_slice(&c[k].re.to_le_bytes());
                buf.extend_from_slice(&c[k].im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Flat indices listed in lexicographic order of signed modes.
fn lexicographic_order(g: &TorusGrid) -> Vec<usize> {
    let m = g.points() as i64;
    let n = g.dim();
    let mut out = Vec::with_capacity(g.len());
    for lin in 0..g.len() {
        let mut k = [0i64; 3];
        let mut rest = lin as i64;
        for d in (0..n).rev() {
            k[d] = rest % m - m / 2;
            rest /= m;
        }
        out.push(g.flat_index(k));
    }
    out
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(State, f64)> {
    let mut tag = [0u8; 8];
    r.read_exact(&mut tag)?;
    if &tag != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word)?;
        Ok(word)
    };
    let dim = u64::from_le_bytes(next(r)?) as usize;
    let points = u64::from_le_bytes(next(r)?) as usize;
    let length = f64::from_le_bytes(next(r)?);
    let t = f64::from_le_bytes(next(r)?);
    let g = TorusGrid::new(dim, points, length).map_err(|e| Error::Snapshot(e.to_string()))?;
    let order = lexicographic_order(&g);
    let mut state = State::zeros(g);
    let mut buf = vec![0u8; 16 * g.len()];
    for f in [&mut state.a, &mut state.u, &mut state.h] {
        for c in f.comps.iter_mut() {
            r.read_exact(&mut buf)?;
            for (i, &k) in order.iter().enumerate() {
                let re = f64::from_le_bytes(buf[16 * i..16 * i + 8].try_into().unwrap());
                let im = f64::from_le_bytes(buf[16 * i + 8..16 * i + 16].try_into().unwrap());
                c[k] = Complex64::new(re, im);
            }
        }
    }
    Ok((state, t))
}
