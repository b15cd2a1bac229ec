//! Experiment configuration, subcommand drivers and output files.
//!
//! A run is described by a [`RunConfig`] read from TOML. Every section is
//! optional and unknown keys are rejected. Each subcommand writes into
//! `<outdir>/<run-id>/`, where the run id hashes the subcommand and the resolved
//! configuration (seed included), so reruns overwrite identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bony::{standard_suite, Harness, RatioReport, SuiteParams};
use crate::decay::{
    check_p, check_sigma, check_sigma1, fit_exponent, linear_oracle_fits, DecayFit, LowNormReport, LyapunovReport, Monitor,
    MonitorConfig, OracleFit, OracleWindow, RateQuery, Verdict,
};
use crate::error::{Error, Result};
use crate::integrator::{run_observed, InitialData, InitialProfile, SchemeConfig};
use crate::linear::{log_times, spectrum_sweep, Polarization, QuadratureResolution, SpectrumRow};
use crate::littlewood_paley::{BesovNorm, BesovSpec, Dyadic};
use crate::model::{write_snapshot, MaterialParams, ViscosityLaw};
use crate::spectral::TorusGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub points: usize,
    pub length: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            points: 256,
            length: 16.0 * std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSection {
    /// Shear viscosity; the bulk viscosity is `1 - 2 mu`.
    pub mu: f64,
    pub pressure_exponent: f64,
    pub direction: Vec<f64>,
    pub viscosity: ViscosityLaw,
    pub density_floor: f64,
}

impl Default for MaterialSection {
    fn default() -> Self {
        Self {
            mu: 0.5,
            pressure_exponent: 1.4,
            direction: vec![1.0, 0.0],
            viscosity: ViscosityLaw::Constant,
            density_floor: 0.1,
        }
    }
}

impl MaterialSection {
    pub fn params(&self) -> Result<MaterialParams> {
        if !(self.density_floor > 0.0 && self.density_floor < 1.0) {
            return Err(Error::Config(format!("density_floor = {} must lie in (0, 1)", self.density_floor)));
        }
        let mut m = MaterialParams::new(self.mu, self.pressure_exponent, &self.direction)?.with_viscosity(self.viscosity);
        m.density_floor = self.density_floor;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentSection {
    pub p: f64,
    pub sigma1: f64,
    /// Regularities whose decay is fitted.
    pub sigmas: Vec<f64>,
    pub k0: i32,
    pub gamma: f64,
}

impl Default for ExponentSection {
    fn default() -> Self {
        Self {
            p: 2.0,
            sigma1: 1.0,
            sigmas: vec![0.0],
            k0: 0,
            gamma: 0.125,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Zero,
    PowerLaw,
}

/// Initial data `|xi|^(sigma1 - N/2)` on `|xi| <= cutoff` with random phases; the seed is the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub profile: ProfileKind,
    pub cutoff: f64,
    /// Sup norm of the initial perturbation.
    pub amplitude: f64,
    pub polarization: Polarization,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            profile: ProfileKind::PowerLaw,
            cutoff: 2.0,
            amplitude: 1e-3,
            polarization: Polarization::DensityMagnetic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub linear: OracleWindow,
    /// Torus fit window; defaults to `[10 dt, min(L^2/4, t_end)]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub torus_window: Option<[f64; 2]>,
    pub tolerance: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            linear: OracleWindow::default(),
            torus_window: None,
            tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub samples: usize,
    /// Coarse lattice; the fine lattice has twice the points.
    pub points: usize,
    pub length: f64,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            samples: 200,
            points: 256,
            length: 8.0 * std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub norms: Vec<f64>,
    /// Number of angles to `I`, evenly spaced in `[0, pi)`.
    pub angles: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        let mut norms = vec![0.0];
        norms.extend(log_times(1e-3, 1e3, 25));
        Self { norms, angles: 8 }
    }
}

/// Everything a subcommand needs, with defaults for every key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dim: usize,
    pub seed: u64,
    pub outdir: PathBuf,
    pub grid: GridSection,
    pub material: MaterialSection,
    pub exponents: ExponentSection,
    pub scheme: SchemeConfig,
    pub initial: InitialSection,
    pub fit: FitSection,
    pub quadrature: QuadratureResolution,
    pub estimates: EstimateSection,
    pub spectrum: SpectrumSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            seed: 42,
            outdir: PathBuf::from("runs"),
            grid: GridSection::default(),
            material: MaterialSection::default(),
            exponents: ExponentSection::default(),
            scheme: SchemeConfig::default(),
            initial: InitialSection::default(),
            fit: FitSection::default(),
            quadrature: QuadratureResolution::default(),
            estimates: EstimateSection::default(),
            spectrum: SpectrumSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Parameter windows of the decay theory plus basic sanity of every section.
    pub fn validate(&self) -> Result<()> {
        let e = &self.exponents;
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::Config(format!("dim = {} must be 2 or 3", self.dim)));
        }
        check_p(self.dim, e.p)?;
        check_sigma1(self.dim, e.p, e.sigma1)?;
        for &s in &e.sigmas {
            check_sigma(self.dim, e.p, e.sigma1, s)?;
        }
        if !(e.gamma > 0.0) {
            return Err(Error::Config(format!("gamma = {} must be positive", e.gamma)));
        }
        TorusGrid::new(self.dim, self.grid.points, self.grid.length)?;
        self.material.params()?.check_dim(self.dim)?;
        self.scheme.validate()?;
        if !(self.initial.amplitude >= 0.0 && self.initial.cutoff > 0.0) {
            return Err(Error::Config("initial amplitude must be nonnegative and cutoff positive".into()));
        }
        let w = &self.fit.linear;
        if !(w.t1 > w.t0 && w.t0 > 0.0) {
            return Err(Error::Config(format!("linear fit window [{}, {}] needs t1 > t0 > 0", w.t0, w.t1)));
        }
        if let Some([t0, t1]) = self.fit.torus_window {
            if !(t1 > t0 && t0 >= 0.0) {
                return Err(Error::Config(format!("torus fit window [{t0}, {t1}] needs t1 > t0 ≥ 0")));
            }
        }
        if !(self.fit.tolerance > 0.0) {
            return Err(Error::Config("fit tolerance must be positive".into()));
        }
        if self.estimates.samples == 0 {
            return Err(Error::Config("estimates.samples must be at least 1".into()));
        }
        if self.spectrum.angles == 0 || self.spectrum.norms.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::Config("spectrum needs at least one angle and finite nonnegative norms".into()));
        }
        Ok(())
    }

    pub fn torus(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, self.grid.points, self.grid.length)
    }

    pub fn initial_data(&self) -> InitialData {
        InitialData {
            profile: match self.initial.profile {
                ProfileKind::Zero => InitialProfile::Zero,
                ProfileKind::PowerLaw => InitialProfile::PowerLaw {
                    sigma1: self.exponents.sigma1,
                    cutoff: self.initial.cutoff,
                },
            },
            amplitude: self.initial.amplitude,
            seed: self.seed,
            polarization: self.initial.polarization,
        }
    }

    pub fn torus_window(&self) -> [f64; 2] {
        self.fit.torus_window.unwrap_or_else(|| {
            let l = self.grid.length;
            [10.0 * self.scheme.dt, (l * l / 4.0).min(self.scheme.t_end)]
        })
    }
}

/// A subcommand with its resolved configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    LinearDecay,
    Simulate,
    VerifyEstimates,
    Spectrum,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::LinearDecay => "linear-decay",
            Command::Simulate => "simulate",
            Command::VerifyEstimates => "verify-estimates",
            Command::Spectrum => "spectrum",
        }
    }
}

/// Hash of the subcommand and the resolved configuration; the output directory does not enter.
pub fn run_id(cmd: Command, cfg: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(cmd.name().as_bytes());
    h.update(b"\n");
    let hashed = RunConfig {
        outdir: PathBuf::new(),
        ..cfg.clone()
    };
    h.update(hashed.to_toml().as_bytes());
    h.finalize().iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Long-format series `(t, norm_id, value)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub rows: Vec<(f64, String, f64)>,
}

impl Series {
    pub fn push(&mut self, t: f64, id: &str, value: f64) {
        self.rows.push((t, id.to_string(), value));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,norm_id,value\n");
        for (t, id, v) in &self.rows {
            let _ = writeln!(out, "{t:.16e},{id},{v:.16e}");
        }
        out
    }
}

/// Outcome of `linear-decay`.
#[derive(Debug, Clone)]
pub struct LinearDecayOutcome {
    pub fits: Vec<OracleFit>,
    pub series: Series,
}

impl LinearDecayOutcome {
    pub fn passed(&self) -> bool {
        self.fits.iter().all(|f| f.fit.verdict.passed())
    }
}

/// Continuum linear-semigroup norms for every configured regularity, fitted against the predicted rate.
pub fn cmd_linear_decay(cfg: &RunConfig) -> Result<LinearDecayOutcome> {
    cfg.validate()?;
    let e = &cfg.exponents;
    if e.p != 2.0 {
        return Err(Error::Config(format!("linear-decay evaluates continuum L² block norms and needs p = 2, got p = {}", e.p)));
    }
    let window = OracleWindow {
        tolerance: cfg.fit.tolerance,
        ..cfg.fit.linear
    };
    let fits = linear_oracle_fits(cfg.dim, e.sigma1, &e.sigmas, &cfg.material.params()?, &window, cfg.quadrature)?;
    let mut series = Series::default();
    for f in &fits {
        for (t, v) in f.times.iter().zip(&f.values) {
            series.push(*t, &f.fit.series_id, *v);
        }
    }
    Ok(LinearDecayOutcome { fits, series })
}

/// Conservation and constraint checks of a torus run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub max_mean_drift: f64,
    pub max_div_h: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMonitors {
    pub steps: usize,
    pub t_end: f64,
    pub constraints: ConstraintReport,
    pub lyapunov: LyapunovReport,
    pub low_norm: LowNormReport,
    /// Six terms of the solution-space norm at `t_end`.
    pub xp_terms: [f64; 6],
    pub xp: f64,
}

impl SimulationMonitors {
    pub fn passed(&self) -> bool {
        self.constraints.verdict.passed() && self.lyapunov.verdict.passed() && self.low_norm.verdict.passed()
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub monitors: SimulationMonitors,
    /// Observed torus exponents; informative only, since a bounded box cannot show the whole-space rate.
    pub fits: Vec<DecayFit>,
    pub series: Series,
    pub final_state: crate::model::State,
}

/// Conservation tolerance on `mean(a)` and `div H`.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-10;

/// Nonlinear torus run with every monitor attached at every step.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulationOutcome> {
    cfg.validate()?;
    let grid = cfg.torus()?;
    let params = cfg.material.params()?;
    let e = &cfg.exponents;
    let z0 = cfg.initial_data().build(grid, &params, cfg.scheme.dealias)?;
    let mut monitor = Monitor::new(
        grid,
        MonitorConfig {
            p: e.p,
            sigma1: e.sigma1,
            k0: e.k0,
            ..MonitorConfig::default()
        },
    )?;
    let d = Dyadic::new(grid);
    let specs: Vec<(String, BesovSpec)> = e
        .sigmas
        .iter()
        .map(|&s| Ok((format!("besov_sigma{s}"), BesovSpec::new(s, e.p, 1.0, e.k0)?)))
        .collect::<Result<_>>()?;
    let mut series = Series::default();
    let mut norms: Vec<Vec<(f64, f64)>> = vec![Vec::new(); specs.len()];
    let mut reached = (0, 0.0);
    let traj = run_observed(&z0, &params, &cfg.scheme, |step, t, s| {
        reached = (step, t);
        monitor.observe(t, s)?;
        let ladder = d.block_norms(&[&s.a, &s.u, &s.h], e.p)?;
        for ((id, spec), out) in specs.iter().zip(norms.iter_mut()) {
            let v = BesovNorm::from_block_norms(*spec, d.j_min(), &ladder).total;
            series.push(t, id, v);
            out.push((t, v));
        }
        Ok(())
    })
    .map_err(|cause| Error::RunAborted {
        step: reached.0,
        t: reached.1,
        cause: Box::new(cause),
    })?;
    for (m, diag) in monitor.samples.iter().zip(&traj.diagnostics) {
        for (id, v) in [
            ("lyapunov", m.lyapunov),
            ("low_negative", m.low_negative),
            ("a1", m.a1),
            ("a2", m.a2),
            ("int_a1", m.int_a1),
            ("int_a2", m.int_a2),
            ("xp", m.xp),
            ("mean_a", diag.mean_a),
            ("max_div_h", diag.max_div_h),
        ] {
            series.push(m.t, id, v);
        }
    }
    let mean0 = traj.diagnostics[0].mean_a;
    let drift = traj.diagnostics.iter().map(|g| (g.mean_a - mean0).abs()).fold(0.0, f64::max);
    let div = traj.diagnostics.iter().map(|g| g.max_div_h).fold(0.0, f64::max);
    let window = cfg.torus_window();
    let mut fits = Vec::new();
    for ((id, spec), pts) in specs.iter().zip(&norms) {
        if window[1] <= window[0] || pts.iter().all(|(_, v)| *v == 0.0) {
            continue;
        }
        let predicted = -RateQuery::besov(cfg.dim, e.p, e.sigma1, spec.s).rate()?;
        match fit_exponent(id, pts, window, predicted, cfg.fit.tolerance) {
            Ok(f) => fits.push(f),
            Err(Error::TooFewSamples { .. }) => {}
            Err(err) => return Err(err),
        }
    }
    let monitors = SimulationMonitors {
        steps: cfg.scheme.steps(),
        t_end: cfg.scheme.t_end,
        constraints: ConstraintReport {
            max_mean_drift: drift,
            max_div_h: div,
            tolerance: CONSTRAINT_TOLERANCE,
            verdict: Verdict::from_bool(drift <= CONSTRAINT_TOLERANCE && div <= CONSTRAINT_TOLERANCE),
        },
        lyapunov: monitor.lyapunov_report(),
        low_norm: monitor.low_norm_report(),
        xp_terms: monitor.xp_terms(),
        xp: monitor.samples.last().map_or(0.0, |m| m.xp),
    };
    Ok(SimulationOutcome {
        monitors,
        fits,
        series,
        final_state: traj.snapshots.last().cloned().expect("trajectory keeps its endpoint"),
    })
}

/// Randomized ratio tests of the full inequality suite.
pub fn cmd_verify_estimates(cfg: &RunConfig, jobs: usize) -> Result<Vec<RatioReport>> {
    cfg.validate()?;
    let e = &cfg.exponents;
    let es = &cfg.estimates;
    let harness = Harness::new(cfg.dim, es.points, es.length, es.samples, cfg.seed)?;
    let suite = standard_suite(
        cfg.dim,
        SuiteParams {
            p: e.p,
            sigma1: e.sigma1,
            k0: e.k0,
        },
        &cfg.material.params()?,
    );
    harness.run_all(&suite, jobs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub rows: usize,
    pub max_re: f64,
    pub tolerance: f64,
    /// Least damped eigenvalue at the largest swept norm, over all angles.
    pub largest_norm: f64,
    pub bounded_mode_re: f64,
    pub verdict: Verdict,
}

/// Constraint-subspace eigenvalues over a sweep of norms and angles.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<(Vec<SpectrumRow>, SpectrumSummary)> {
    cfg.validate()?;
    let n = cfg.spectrum.angles;
    let angles: Vec<f64> = (0..n).map(|i| std::f64::consts::PI * i as f64 / n as f64).collect();
    let rows = spectrum_sweep(&cfg.material.params()?, cfg.dim, &cfg.spectrum.norms, &angles)?;
    let max_re = rows.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max);
    let largest = cfg.spectrum.norms.iter().copied().fold(0.0, f64::max);
    let bounded = rows
        .iter()
        .filter(|r| r.xi_norm == largest)
        .map(|r| r.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let tolerance = 1e-12;
    Ok((
        rows.clone(),
        SpectrumSummary {
            rows: rows.len(),
            max_re,
            tolerance,
            largest_norm: largest,
            bounded_mode_re: bounded,
            verdict: Verdict::from_bool(max_re <= tolerance),
        },
    ))
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn spectrum_csv(rows: &[SpectrumRow]) -> String {
    let mut out = String::from("xi_norm,angle_to_I,eig_index,re,im\n");
    for r in rows {
        let _ = writeln!(out, "{:.16e},{:.16e},{},{:.16e},{:.16e}", r.xi_norm, r.angle_to_i, r.eig_index, r.re, r.im);
    }
    out
}

fn estimates_csv(reports: &[RatioReport]) -> String {
    let mut out = String::from("estimate_id,samples,max_ratio,median_ratio,max_ratio_fine,resolution_stability,verdict\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.estimate_id,
            r.samples,
            r.max_ratio,
            r.median_ratio,
            r.max_ratio_fine,
            r.resolution_stability,
            if r.passed() { "pass" } else { "fail" }
        );
    }
    out
}

/// Files of one run, relative to its directory.
pub type Artifacts = Vec<(&'static str, Vec<u8>)>;

/// Summary lines printed for a run, and whether every verdict passed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub lines: Vec<String>,
    pub passed: bool,
}

fn verdict_word(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Run one subcommand and collect the files it produces.
pub fn execute(cmd: Command, cfg: &RunConfig, jobs: usize) -> Result<(Vec<String>, bool, Artifacts)> {
    let mut files: Artifacts = vec![("config.resolved", cfg.to_toml().into_bytes())];
    let mut lines = Vec::new();
    let passed = match cmd {
        Command::LinearDecay => {
            let out = cmd_linear_decay(cfg)?;
            for f in &out.fits {
                lines.push(format!(
                    "{} {}: fitted {:.4} ± {:.1e}, predicted {:.4}, window [{}, {}]",
                    verdict_word(f.fit.verdict.passed()),
                    f.fit.series_id,
                    f.fit.fitted,
                    f.fit.stderr,
                    f.fit.predicted,
                    f.fit.window[0],
                    f.fit.window[1]
                ));
            }
            let fits: Vec<&DecayFit> = out.fits.iter().map(|f| &f.fit).collect();
            files.push(("series.csv", out.series.to_csv().into_bytes()));
            files.push(("fits.json", json(&fits).into_bytes()));
            out.passed()
        }
        Command::Simulate => {
            let out = cmd_simulate(cfg)?;
            let m = &out.monitors;
            lines.push(format!(
                "{} constraints: mean(a) drift {:.2e}, max div H {:.2e}",
                verdict_word(m.constraints.verdict.passed()),
                m.constraints.max_mean_drift,
                m.constraints.max_div_h
            ));
            lines.push(format!(
                "{} lyapunov: worst relative increase {:.2e} after {} steps",
                verdict_word(m.lyapunov.verdict.passed()),
                m.lyapunov.max_relative_increase,
                m.lyapunov.transient
            ));
            lines.push(format!(
                "{} low-frequency norm: first half max {:.4e}, second half max {:.4e}",
                verdict_word(m.low_norm.verdict.passed()),
                m.low_norm.first_half_max,
                m.low_norm.second_half_max
            ));
            for f in &out.fits {
                lines.push(format!(
                    "info {}: torus exponent {:.4} (whole-space prediction {:.4})",
                    f.series_id, f.fitted, f.predicted
                ));
            }
            let mut snap = Vec::new();
            write_snapshot(&mut snap, &out.final_state, m.t_end)?;
            files.push(("series.csv", out.series.to_csv().into_bytes()));
            files.push(("fits.json", json(&out.fits).into_bytes()));
            files.push(("monitors.json", json(m).into_bytes()));
            files.push(("final.snap", snap));
            m.passed()
        }
        Command::VerifyEstimates => {
            let reports = cmd_verify_estimates(cfg, jobs)?;
            for r in &reports {
                lines.push(format!(
                    "{} {}: max ratio {:.4e}, stability {:.4}",
                    verdict_word(r.passed()),
                    r.estimate_id,
                    r.max_ratio,
                    r.resolution_stability
                ));
            }
            files.push(("series.csv", estimates_csv(&reports).into_bytes()));
            files.push(("estimates.json", json(&reports).into_bytes()));
            reports.iter().all(RatioReport::passed)
        }
        Command::Spectrum => {
            let (rows, summary) = cmd_spectrum(cfg)?;
            lines.push(format!(
                "{} spectrum: max Re {:.3e} over {} eigenvalues; least damped at |xi| = {} is {:.4}",
                verdict_word(summary.verdict.passed()),
                summary.max_re,
                summary.rows,
                summary.largest_norm,
                summary.bounded_mode_re
            ));
            files.push(("series.csv", spectrum_csv(&rows).into_bytes()));
            files.push(("monitors.json", json(&summary).into_bytes()));
            summary.verdict.passed()
        }
    };
    Ok((lines, passed, files))
}

pub fn write_artifacts(dir: &Path, files: &Artifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        let mut f = fs::File::create(dir.join(name))?;
        f.write_all(bytes)?;
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "mhd-besov", version, about = "Decay experiments for small perturbations of compressible MHD")]
pub struct Cli {
    /// TOML configuration; repeat to run several experiments.
    #[arg(long = "config", global = true)]
    pub configs: Vec<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    pub outdir: Option<PathBuf>,
    /// Print the resolved configuration and run directory without computing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CliCommand {
    /// Fit decay exponents of the continuum linear semigroup.
    LinearDecay,
    /// Nonlinear torus run with Lyapunov, low-frequency and solution-norm monitors.
    Simulate,
    /// Randomized ratio tests of the product, commutator, composition and interpolation estimates.
    VerifyEstimates,
    /// Eigenvalue sweep of the linearized symbol.
    Spectrum,
}

impl From<CliCommand> for Command {
    fn from(c: CliCommand) -> Self {
        match c {
            CliCommand::LinearDecay => Command::LinearDecay,
            CliCommand::Simulate => Command::Simulate,
            CliCommand::VerifyEstimates => Command::VerifyEstimates,
            CliCommand::Spectrum => Command::Spectrum,
        }
    }
}

/// Resolve the configurations named on the command line (defaults when none).
pub fn resolve_configs(cli: &Cli) -> Result<Vec<RunConfig>> {
    let mut cfgs = if cli.configs.is_empty() {
        vec![RunConfig::default()]
    } else {
        cli.configs.iter().map(|p| RunConfig::load(p)).collect::<Result<_>>()?
    };
    for c in &mut cfgs {
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        if let Some(o) = &cli.outdir {
            c.outdir = o.clone();
        }
        c.validate()?;
    }
    Ok(cfgs)
}

/// Exit code: 0 when every verdict passes, 1 when one fails, 2 on errors.
pub fn run_cli(cli: Cli, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32 {
    let cmd = Command::from(cli.command);
    let cfgs = match resolve_configs(&cli) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    if cli.dry_run {
        for c in &cfgs {
            let id = run_id(cmd, c);
            let _ = writeln!(out, "# {} run {id} -> {}", cmd.name(), c.outdir.join(&id).display());
            let _ = write!(out, "{}", c.to_toml());
        }
        return 0;
    }
    let jobs = cli.jobs.max(1);
    let inner_jobs = if cfgs.len() == 1 { jobs } else { 1 };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutcome>>>> = Mutex::new((0..cfgs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(cfgs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(c) = cfgs.get(i) else { break };
                let id = run_id(cmd, c);
                let dir = c.outdir.join(&id);
                let r = execute(cmd, c, inner_jobs).and_then(|(lines, passed, files)| {
                    write_artifacts(&dir, &files)?;
                    Ok(RunOutcome {
                        run_id: id,
                        dir,
                        lines,
                        passed,
                    })
                });
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let mut code = 0;
    for r in results.into_inner().expect("workers joined") {
        match r.expect("every config ran") {
            Ok(o) => {
                let _ = writeln!(out, "# {} run {} -> {}", cmd.name(), o.run_id, o.dir.display());
                for l in &o.lines {
                    let _ = writeln!(out, "{l}");
                }
                if !o.passed && code == 0 {
                    code = 1;
                }
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                code = 2;
            }
        }
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert!(RunConfig::from_toml("").is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sigma = 1.0", "[exponents]\nsigam1 = 1.0", "[scheme]\nstep = 0.1", "[fit.linear]\nt2 = 3.0"] {
            let err = RunConfig::from_toml(text).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{text}: {err}");
        }
    }

    #[test]
    fn theory_windows_are_checked_at_load() {
        let msg = |t: &str| RunConfig::from_toml(t).unwrap_err().to_string();
        assert!(msg("dim = 3\n[exponents]\nsigma1 = 1.5\nsigmas = [0.75]").contains("σ ≤ N/p − 1"));
        assert!(msg("[exponents]\np = 4.0\nsigma1 = 0.0\nsigmas = [-0.5]").contains("excluded when N = 2"));
        assert!(msg("[exponents]\nsigma1 = 1.2").contains("σ₁ ≤ 2N/p − N/2"));
        assert!(msg("[exponents]\nsigma1 = -0.1").contains("1 − N/2 < σ₁"));
        assert!(msg("[exponents]\nsigmas = [-2.0]").contains("< σ"));
        assert!(msg("[exponents]\np = 1.5").contains("2 ≤ p"));
        assert!(msg("dim = 3\n[exponents]\np = 4.5\nsigma1 = 0.0").contains("min(4, 2N/(N−2))"));
        assert!(msg("dim = 4").contains("dim"));
    }

    #[test]
    fn run_id_depends_on_command_and_seed() {
        let c = RunConfig::default();
        let mut d = c.clone();
        d.seed += 1;
        assert_eq!(run_id(Command::Spectrum, &c), run_id(Command::Spectrum, &c.clone()));
        assert_ne!(run_id(Command::Spectrum, &c), run_id(Command::Simulate, &c));
        assert_ne!(run_id(Command::Spectrum, &c), run_id(Command::Spectrum, &d));
        assert_eq!(run_id(Command::Spectrum, &c).len(), 16);
    }

    #[test]
    fn csv_uses_seventeen_significant_digits() {
        let mut s = Series::default();
        s.push(0.1, "x", 1.0 / 3.0);
        let line = s.to_csv().lines().nth(1).unwrap().to_string();
        assert_eq!(line, "1.0000000000000001e-1,x,3.3333333333333331e-1");
        let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
    }

    #[test]
    fn torus_window_default() {
        let c = RunConfig::default();
        let [t0, t1] = c.torus_window();
        assert!((t0 - 1.0).abs() < 1e-12 && t1 == 100.0);
    }

    #[test]
    fn spectrum_rows_and_summary() {
        let c = RunConfig {
            spectrum: SpectrumSection {
                norms: vec![0.0, 0.05, 1.0, 1e3],
                angles: 4,
            },
            ..RunConfig::default()
        };
        let (rows, summary) = cmd_spectrum(&c).unwrap();
        assert_eq!(rows.len(), 4 * 4 * 4);
        assert!(rows.iter().filter(|r| r.xi_norm == 0.0).all(|r| r.re == 0.0 && r.im == 0.0));
        assert!(summary.verdict.passed());
        assert!((summary.bounded_mode_re + 1.0).abs() < 0.1);
    }
}
