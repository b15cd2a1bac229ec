//! Time stepping of semilinear systems `z' = M z + N(z)` on the torus.
//!
//! The linear part is diagonal in the Fourier index, so each mode carries its
//! own small generator. Two two-stage schemes are provided: an exponential
//! Runge–Kutta method that integrates the linear part exactly, and a
//! Crank–Nicolson/Heun implicit-explicit pair.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{build_symbol, Polarization};
use crate::littlewood_paley::TWO_THIRDS;
use crate::model::{check_density, sources, MaterialParams, State};
use crate::spectral::{norm3, transform_inverse, SpectralField, TorusGrid};

type CMat = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exponential Runge–Kutta of order two (linear part exact per mode).
    Exponential,
    /// Crank–Nicolson on the linear part, Heun on the nonlinear part.
    Imex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub method: Method,
    pub dt: f64,
    pub t_end: f64,
    /// Fraction of the half-lattice kept by dealiasing.
    pub dealias: f64,
    /// Keep every `snapshot_every`-th state (0 keeps only the endpoints).
    pub snapshot_every: usize,
    /// Advective Courant bound `dt max|u| / dx <= cfl`.
    pub cfl: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            method: Method::Exponential,
            dt: 0.1,
            t_end: 100.0,
            dealias: TWO_THIRDS,
            snapshot_every: 100,
            cfl: 0.5,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step dt = {} must be positive", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon t_end = {} must be nonnegative", self.t_end)));
        }
        if !(self.dealias > 0.0 && self.dealias <= 1.0) {
            return Err(Error::InvalidParameter(format!("dealias rule {} outside (0, 1]", self.dealias)));
        }
        if !(self.cfl > 0.0) {
            return Err(Error::InvalidParameter(format!("CFL number {} must be positive", self.cfl)));
        }
        Ok(())
    }

    /// Number of steps, with the last step shortened to land on `t_end`.
    pub fn steps(&self) -> usize {
        let n = self.t_end / self.dt;
        let r = n.round();
        if (n - r).abs() < 1e-9 {
            r as usize
        } else {
            n.ceil() as usize
        }
    }
}

/// A mode index and, for real problems, the index of its conjugate partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModePair {
    pub k: usize,
    pub mirror: Option<usize>,
}

/// `z' = M z + N(z)` with a per-mode linear generator.
///
/// Only the listed modes are advanced; a mirror mode receives the complex
/// conjugate of its partner, which presumes `M(-xi) = conj(M(xi))`.
pub trait Semilinear {
    type State: Clone;

    fn width(&self) -> usize;
    fn modes(&self) -> Vec<ModePair>;
    fn generator(&self, k: usize) -> CMat;
    /// Frequency and integer index of mode `k`, for error reports.
    fn mode_xi(&self, k: usize) -> crate::spectral::Xi;
    fn mode_index(&self, k: usize) -> [i64; 3];
    fn nonlinear(&self, s: &Self::State) -> Result<Self::State>;
    fn read_mode(&self, s: &Self::State, k: usize, out: &mut [Complex64]);
    fn write_mode(&self, s: &mut Self::State, k: usize, z: &[Complex64]);
    /// Checks before a step of size `dt`.
    fn admit(&self, _s: &Self::State, _dt: f64) -> Result<()> {
        Ok(())
    }
    /// Constraint enforcement after a step.
    fn finish(&self, _s: &mut Self::State) -> Result<()> {
        Ok(())
    }
    fn distance(&self, a: &Self::State, b: &Self::State) -> f64;
}

/// `exp(A)`, `phi1(A)`, `phi2(A)` from one exponential of an augmented block matrix.
pub fn phi_functions(a: &CMat) -> (CMat, CMat, CMat) {
    let n = a.nrows();
    let mut aug = CMat::zeros(3 * n, 3 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        aug[(i, n + i)] = ONE;
        aug[(n + i, 2 * n + i)] = ONE;
    }
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
        e.view((0, 2 * n), (n, n)).into_owned(),
    )
}

#[derive(Debug, Clone)]
enum ModeOps {
    /// `exp(hM)`, `h phi1(hM)`, `h phi2(hM)`.
    Exponential { e: CMat, p1: CMat, p2: CMat },
    /// `(I - hM/2)^{-1} (I + hM/2)` and `h (I - hM/2)^{-1}`.
    Imex { prop: CMat, res: CMat },
}

fn matvec(m: &CMat, z: &[Complex64], out: &mut [Complex64]) {
    let n = z.len();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = ZERO;
        for j in 0..n {
            acc += m[(i, j)] * z[j];
        }
        *o = acc;
    }
}

fn matvec_add(m: &CMat, z: &[Complex64], out: &mut [Complex64]) {
    let n = z.len();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = ZERO;
        for j in 0..n {
            acc += m[(i, j)] * z[j];
        }
        *o += acc;
    }
}

/// Per-mode operators for a fixed step size.
pub struct Stepper<'a, S: Semilinear> {
    system: &'a S,
    method: Method,
    dt: f64,
    modes: Vec<ModePair>,
    ops: Vec<ModeOps>,
}

impl<'a, S: Semilinear> Stepper<'a, S> {
    pub fn new(system: &'a S, method: Method, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step dt = {dt} must be positive")));
        }
        let modes = system.modes();
        let w = system.width();
        let h = Complex64::new(dt, 0.0);
        let ops = modes
            .iter()
            .map(|m| {
                let a = system.generator(m.k) * h;
                match method {
                    Method::Exponential => {
                        let (e, p1, p2) = phi_functions(&a);
                        if e.iter().chain(p1.iter()).chain(p2.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                            let xi = system.mode_xi(m.k);
                            return Err(Error::NonFinitePropagator { xi: xi.to_vec() });
                        }
                        Ok(ModeOps::Exponential { e, p1: p1 * h, p2: p2 * h })
                    }
                    Method::Imex => {
                        let half = a * Complex64::new(0.5, 0.0);
                        let id = CMat::identity(w, w);
                        let inv = (&id - &half)
                            .try_inverse()
                            .ok_or_else(|| Error::SingularMultiplier {
                                mode: system.mode_index(m.k).to_vec(),
                            })?;
                        Ok(ModeOps::Imex {
                            prop: &inv * (&id + &half),
                            res: inv * h,
                        })
                    }
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            system,
            method,
            dt,
            modes,
            ops,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn method(&self) -> Method {
        self.method
    }

    fn write(&self, s: &mut S::State, pair: ModePair, z: &[Complex64], buf: &mut [Complex64]) {
        self.system.write_mode(s, pair.k, z);
        if let Some(m) = pair.mirror {
            for (b, v) in buf.iter_mut().zip(z) {
                *b = v.conj();
            }
            self.system.write_mode(s, m, buf);
        }
    }

    /// One step of size `dt`.
    pub fn step(&self, z: &S::State) -> Result<S::State> {
        self.system.admit(z, self.dt)?;
        let w = self.system.width();
        let n0 = self.system.nonlinear(z)?;
        let mut zk = vec![ZERO; w];
        let mut nk = vec![ZERO; w];
        let mut n1k = vec![ZERO; w];
        let mut out = vec![ZERO; w];
        let mut tmp = vec![ZERO; w];
        let mut conj = vec![ZERO; w];
        let mut stage = z.clone();
        for (pair, op) in self.modes.iter().zip(&self.ops) {
            self.system.read_mode(z, pair.k, &mut zk);
            self.system.read_mode(&n0, pair.k, &mut nk);
            match op {
                ModeOps::Exponential { e, p1, .. } => {
                    matvec(e, &zk, &mut out);
                    matvec_add(p1, &nk, &mut out);
                }
                ModeOps::Imex { prop, res } => {
                    matvec(prop, &zk, &mut out);
                    matvec_add(res, &nk, &mut out);
                }
            }
            self.write(&mut stage, *pair, &out, &mut conj);
        }
        let n1 = self.system.nonlinear(&stage)?;
        let mut next = stage.clone();
        for (pair, op) in self.modes.iter().zip(&self.ops) {
            self.system.read_mode(&n0, pair.k, &mut nk);
            self.system.read_mode(&n1, pair.k, &mut n1k);
            match op {
                ModeOps::Exponential { p2, .. } => {
                    self.system.read_mode(&stage, pair.k, &mut out);
                    for (t, (b, a)) in tmp.iter_mut().zip(n1k.iter().zip(&nk)) {
                        *t = b - a;
                    }
                    matvec_add(p2, &tmp, &mut out);
                }
                ModeOps::Imex { prop, res } => {
                    self.system.read_mode(z, pair.k, &mut zk);
                    matvec(prop, &zk, &mut out);
                    for (t, (b, a)) in tmp.iter_mut().zip(n1k.iter().zip(&nk)) {
                        *t = 0.5 * (b + a);
                    }
                    matvec_add(res, &tmp, &mut out);
                }
            }
            self.write(&mut next, *pair, &out, &mut conj);
        }
        self.system.finish(&mut next)?;
        Ok(next)
    }
}

/// Advance `initial` to `t_end` with steps of size `dt` (last step shortened).
pub fn integrate<S: Semilinear>(system: &S, initial: &S::State, method: Method, dt: f64, t_end: f64) -> Result<S::State> {
    let cfg = SchemeConfig {
        method,
        dt,
        t_end,
        ..SchemeConfig::default()
    };
    let n = cfg.steps();
    let full = Stepper::new(system, method, dt)?;
    let mut z = initial.clone();
    for i in 0..n {
        let remaining = t_end - i as f64 * dt;
        z = if remaining < dt * (1.0 - 1e-9) {
            Stepper::new(system, method, remaining)?.step(&z)?
        } else {
            full.step(&z)?
        };
    }
    Ok(z)
}

/// The perturbation system on a periodic lattice.
#[derive(Debug, Clone)]
pub struct MhdSystem {
    pub grid: TorusGrid,
    pub params: MaterialParams,
    pub dealias: f64,
    /// When false only the linear part is advanced.
    pub nonlinear: bool,
    /// Advective Courant bound.
    pub cfl: f64,
}

impl MhdSystem {
    pub fn new(grid: TorusGrid, params: MaterialParams, scheme: &SchemeConfig) -> Result<Self> {
        params.check_dim(grid.dim())?;
        scheme.validate()?;
        Ok(Self {
            grid,
            params,
            dealias: scheme.dealias,
            nonlinear: true,
            cfl: scheme.cfl,
        })
    }

    pub fn linear_only(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    /// `dt max|u| / dx`.
    pub fn courant(&self, s: &State, dt: f64) -> f64 {
        dt * transform_inverse(&s.u).max_abs() / self.grid.spacing()
    }
}

fn canonical(k: [i64; 3]) -> bool {
    for v in k {
        if v != 0 {
            return v > 0;
        }
    }
    true
}

impl Semilinear for MhdSystem {
    fn mode_xi(&self, k: usize) -> crate::spectral::Xi {
        self.grid.xi(k)
    }

    fn mode_index(&self, k: usize) -> [i64; 3] {
        self.grid.mode(k)
    }

    type State = State;

    fn width(&self) -> usize {
        2 * self.grid.dim() + 1
    }

    fn modes(&self) -> Vec<ModePair> {
        let g = &self.grid;
        let cut = self.dealias * g.points() as f64 / 2.0;
        (0..g.len())
            .filter(|&k| {
                let m = g.mode(k);
                !g.is_nyquist(k) && canonical(m) && m.iter().take(g.dim()).all(|&v| (v.abs() as f64) <= cut)
            })
            .map(|k| {
                let c = g.conjugate_index(k);
                ModePair {
                    k,
                    mirror: (c != k).then_some(c),
                }
            })
            .collect()
    }

    fn generator(&self, k: usize) -> CMat {
        build_symbol(&self.grid.xi(k), self.grid.dim(), &self.params).matrix
    }

    fn nonlinear(&self, s: &State) -> Result<State> {
        if self.nonlinear {
            sources(s, &self.params, self.dealias)
        } else {
            Ok(State::zeros(self.grid))
        }
    }

    fn read_mode(&self, s: &State, k: usize, out: &mut [Complex64]) {
        let n = self.grid.dim();
        out[0] = s.a.comps[0][k];
        for i in 0..n {
            out[1 + i] = s.u.comps[i][k];
            out[1 + n + i] = s.h.comps[i][k];
        }
    }

    fn write_mode(&self, s: &mut State, k: usize, z: &[Complex64]) {
        s.set_mode_vector(k, z);
    }

    fn admit(&self, s: &State, dt: f64) -> Result<()> {
        if self.nonlinear {
            let c = self.courant(s, dt);
            if c > self.cfl {
                let limit = dt * self.cfl / c;
                return Err(Error::Cfl {
                    dt,
                    limit,
                    suggested: 0.9 * limit,
                });
            }
            check_density(&transform_inverse(&s.a).comps[0], self.params.density_floor)?;
        }
        Ok(())
    }

    fn finish(&self, s: &mut State) -> Result<()> {
        s.h = s.h.leray_project()?;
        if self.nonlinear {
            check_density(&transform_inverse(&s.a).comps[0], self.params.density_floor)?;
        }
        Ok(())
    }

    fn distance(&self, a: &State, b: &State) -> f64 {
        a.sub(b).map(|d| d.norm_l2()).unwrap_or(f64::INFINITY)
    }
}

/// Per-step record written to the diagnostics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub t: f64,
    pub mean_a: f64,
    pub max_div_h: f64,
    pub dt: f64,
    pub cfl: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<State>,
    /// One entry per step, including the initial state at index 0.
    pub diagnostics: Vec<Diagnostic>,
}

fn diagnostic(system: &MhdSystem, s: &State, t: f64, dt: f64) -> Diagnostic {
    Diagnostic {
        t,
        mean_a: s.a.mean()[0],
        max_div_h: s.max_div_h(),
        dt,
        cfl: system.courant(s, dt),
    }
}

/// Integrate the perturbation system, calling `observe(step, t, state)` on every state.
pub fn run_observed(
    initial: &State,
    params: &MaterialParams,
    scheme: &SchemeConfig,
    mut observe: impl FnMut(usize, f64, &State) -> Result<()>,
) -> Result<Trajectory> {
    let system = MhdSystem::new(initial.grid(), *params, scheme)?;
    run_system(&system, initial, scheme, &mut observe)
}

/// [`run_observed`] for a prepared system, which may have the nonlinearity switched off.
pub fn run_system(
    system: &MhdSystem,
    initial: &State,
    scheme: &SchemeConfig,
    observe: &mut dyn FnMut(usize, f64, &State) -> Result<()>,
) -> Result<Trajectory> {
    scheme.validate()?;
    initial.validate(&system.params)?;
    let outside = initial.fields().iter().map(|f| f.energy_outside(system.dealias)).fold(0.0, f64::max);
    if outside > 0.0 {
        return Err(Error::InvalidParameter(format!(
            "initial data has {outside:e} of its energy outside the dealiased range"
        )));
    }
    let steps = scheme.steps();
    let stepper = Stepper::new(system, scheme.method, scheme.dt)?;
    let mut z = initial.clone();
    let mut t = 0.0;
    let mut traj = Trajectory {
        times: vec![0.0],
        snapshots: vec![z.clone()],
        diagnostics: vec![diagnostic(system, &z, 0.0, scheme.dt)],
    };
    observe(0, 0.0, &z)?;
    for i in 1..=steps {
        let h = (scheme.t_end - t).min(scheme.dt);
        z = if h < scheme.dt * (1.0 - 1e-9) {
            Stepper::new(system, scheme.method, h)?.step(&z)?
        } else {
            stepper.step(&z)?
        };
        t = if i == steps { scheme.t_end } else { i as f64 * scheme.dt };
        traj.diagnostics.push(diagnostic(system, &z, t, h));
        observe(i, t, &z)?;
        if i == steps || (scheme.snapshot_every > 0 && i % scheme.snapshot_every == 0) {
            traj.times.push(t);
            traj.snapshots.push(z.clone());
        }
    }
    Ok(traj)
}

pub fn run(initial: &State, params: &MaterialParams, scheme: &SchemeConfig) -> Result<Trajectory> {
    run_observed(initial, params, scheme, |_, _, _| Ok(()))
}

/// Errors against a fine-step reference for a ladder of step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub reference_dt: f64,
    /// Least-squares slope of `log error` against `log dt`.
    pub observed_order: f64,
    /// Whether errors decrease with the step size.
    pub monotone: bool,
}

/// Temporal order of `method` on `system` up to `t_end`.
pub fn convergence_study<S: Semilinear>(system: &S, initial: &S::State, method: Method, t_end: f64, dts: &[f64]) -> Result<ConvergenceReport> {
    if dts.len() < 3 {
        return Err(Error::InvalidParameter("convergence study needs at least three step sizes".into()));
    }
    let ratios: Vec<f64> = dts.windows(2).map(|w| w[0] / w[1]).collect();
    if ratios.iter().any(|r| (r - ratios[0]).abs() > 1e-9 * ratios[0] || *r <= 1.0) {
        return Err(Error::InvalidParameter("step sizes must decrease in geometric progression".into()));
    }
    let reference_dt = dts[dts.len() - 1] / 8.0;
    let reference = integrate(system, initial, method, reference_dt, t_end)?;
    let errors = dts
        .iter()
        .map(|&dt| Ok(system.distance(&integrate(system, initial, method, dt, t_end)?, &reference)))
        .collect::<Result<Vec<f64>>>()?;
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(ConvergenceReport {
        dts: dts.to_vec(),
        errors,
        reference_dt,
        observed_order: sxy / sxx,
        monotone,
    })
}

/// Scalar test problem `a' = kappa Lap a - v . grad a - d_1(a^2 / 2)` with a fixed drift `v`.
#[derive(Debug, Clone)]
pub struct BurgersDrift {
    pub grid: TorusGrid,
    pub kappa: f64,
    pub drift: SpectralField,
    pub dealias: f64,
}

impl Semilinear for BurgersDrift {
    fn mode_xi(&self, k: usize) -> crate::spectral::Xi {
        self.grid.xi(k)
    }

    fn mode_index(&self, k: usize) -> [i64; 3] {
        self.grid.mode(k)
    }

    type State = SpectralField;

    fn width(&self) -> usize {
        1
    }

    fn modes(&self) -> Vec<ModePair> {
        let g = &self.grid;
        let cut = self.dealias * g.points() as f64 / 2.0;
        (0..g.len())
            .filter(|&k| !g.is_nyquist(k) && canonical(g.mode(k)) && g.mode(k).iter().take(g.dim()).all(|&v| (v.abs() as f64) <= cut))
            .map(|k| {
                let c = g.conjugate_index(k);
                ModePair {
                    k,
                    mirror: (c != k).then_some(c),
                }
            })
            .collect()
    }

    fn generator(&self, k: usize) -> CMat {
        let r = norm3(&self.grid.xi(k));
        CMat::from_element(1, 1, Complex64::new(-self.kappa * r * r, 0.0))
    }

    fn nonlinear(&self, a: &SpectralField) -> Result<SpectralField> {
        let pa = transform_inverse(a);
        let pv = transform_inverse(&self.drift);
        let pg = transform_inverse(&a.gradient()?);
        let n = self.grid.dim();
        let values: Vec<f64> = (0..self.grid.len())
            .map(|x| {
                let adv: f64 = (0..n).map(|i| pv.comps[i][x] * pg.comps[i][x]).sum();
                -adv - pa.comps[0][x] * pg.comps[0][x]
            })
            .collect();
        let phys = crate::spectral::PhysicalField::from_components(self.grid, crate::spectral::Rank::Scalar, vec![values])?;
        Ok(crate::spectral::transform_forward(&phys)?.dealias(self.dealias))
    }

    fn read_mode(&self, s: &SpectralField, k: usize, out: &mut [Complex64]) {
        out[0] = s.comps[0][k];
    }

    fn write_mode(&self, s: &mut SpectralField, k: usize, z: &[Complex64]) {
        s.comps[0][k] = z[0];
    }

    fn distance(&self, a: &SpectralField, b: &SpectralField) -> f64 {
        a.sub(b).map(|d| d.norm_l2()).unwrap_or(f64::INFINITY)
    }
}

/// Radial shape of random initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialProfile {
    Zero,
    /// `|xi|^(sigma1 - N/2)` on `0 < |xi| <= cutoff`.
    PowerLaw { sigma1: f64, cutoff: f64 },
}

/// Seeded random initial data with random phases, scaled to a given sup norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub profile: InitialProfile,
    /// Largest lattice value of `|a|`, `|u_i|`, `|H_i|`.
    pub amplitude: f64,
    pub seed: u64,
    pub polarization: Polarization,
}

impl InitialData {
    pub fn build(&self, grid: TorusGrid, params: &MaterialParams, dealias: f64) -> Result<State> {
        let mut s = State::zeros(grid);
        let (sigma1, cutoff) = match self.profile {
            InitialProfile::Zero => return Ok(s),
            InitialProfile::PowerLaw { sigma1, cutoff } => (sigma1, cutoff),
        };
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!("amplitude {} must be finite and nonnegative", self.amplitude)));
        }
        let n = grid.dim();
        let cut = dealias * grid.points() as f64 / 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for k in 0..grid.len() {
            let m = grid.mode(k);
            if grid.is_nyquist(k) || !canonical(m) || m.iter().take(n).any(|&v| (v.abs() as f64) > cut) {
                continue;
            }
            let xi = grid.xi(k);
            let r = norm3(&xi);
            if r == 0.0 || r > cutoff {
                continue;
            }
            let phase = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * rng.random::<f64>());
            let amp = r.powf(sigma1 - n as f64 / 2.0);
            let z: Vec<Complex64> = self
                .polarization
                .mode_vector(&xi, n, &params.direction, amp)
                .into_iter()
                .map(|v| v * phase)
                .collect();
            s.set_mode_vector(k, &z);
            let zc: Vec<Complex64> = z.iter().map(|v| v.conj()).collect();
            s.set_mode_vector(grid.conjugate_index(k), &zc);
        }
        let sup = s.sup_norm();
        Ok(if sup > 0.0 { s.scale(self.amplitude / sup) } else { s })
    }
}
