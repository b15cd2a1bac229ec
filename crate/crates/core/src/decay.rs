//! Predicted decay rates, exponent fits, and trajectory monitors.

use serde::{Deserialize, Serialize};

use crate::bony::{standard_suite, Harness, RatioReport, SuiteParams};
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::linear::{log_times, quadrature_series, QuadratureProfile, QuadratureResolution};
use crate::littlewood_paley::{BesovNorm, BesovSpec, Dyadic};
use crate::model::{MaterialParams, State};
use crate::spectral::TorusGrid;

/// Integrability exponent admissible for the global theory:
/// `2 <= p <= min(4, 2N/(N-2))`, and `p != 4` when `N = 2`.
pub fn check_p(dim: usize, p: f64) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidParameter(format!("dimension N = {dim} must be at least 2")));
    }
    let n = dim as f64;
    let upper = if dim == 2 { 4.0 } else { (2.0 * n / (n - 2.0)).min(4.0) };
    if !(p >= 2.0) {
        return Err(Error::InvalidParameter(format!("p = {p} violates 2 ≤ p")));
    }
    if p > upper {
        return Err(Error::InvalidParameter(format!("p = {p} violates p ≤ min(4, 2N/(N−2)) = {upper}")));
    }
    if dim == 2 && p == 4.0 {
        return Err(Error::InvalidParameter("p = 4 is excluded when N = 2".into()));
    }
    Ok(())
}

/// Low-frequency regularity window `1 − N/2 < σ₁ ≤ 2N/p − N/2`.
pub fn check_sigma1(dim: usize, p: f64, sigma1: f64) -> Result<()> {
    let n = dim as f64;
    if !(sigma1 > 1.0 - n / 2.0) {
        return Err(Error::InvalidParameter(format!("σ₁ = {sigma1} violates 1 − N/2 < σ₁ (N = {dim})")));
    }
    let upper = 2.0 * n / p - n / 2.0;
    if sigma1 > upper + 1e-12 {
        return Err(Error::InvalidParameter(format!("σ₁ = {sigma1} violates σ₁ ≤ 2N/p − N/2 = {upper}")));
    }
    Ok(())
}

/// Regularity window of the Besov rate, `-sigma1 - N/2 + N/p < sigma <= N/p - 1`.
pub fn check_sigma(dim: usize, p: f64, sigma1: f64, sigma: f64) -> Result<()> {
    let n = dim as f64;
    let lower = -sigma1 - n / 2.0 + n / p;
    let upper = n / p - 1.0;
    if !(sigma > lower) {
        return Err(Error::InvalidParameter(format!("σ = {sigma} violates −σ₁ − N/2 + N/p < σ, i.e. σ > {lower}")));
    }
    if sigma > upper + 1e-12 {
        return Err(Error::InvalidParameter(format!("σ = {sigma} violates σ ≤ N/p − 1 = {upper}")));
    }
    Ok(())
}

/// Window of the Lebesgue rate: `p <= r <= inf` and `-sigma1 - N/2 + N/p < l + N/p - N/r <= N/p - 1`.
pub fn check_lebesgue(dim: usize, p: f64, sigma1: f64, l: f64, r: f64) -> Result<()> {
    let n = dim as f64;
    if !(r >= p) {
        return Err(Error::InvalidParameter(format!("r = {r} violates p ≤ r ≤ ∞ (p = {p})")));
    }
    let shifted = l + n / p - n / r;
    let lower = -sigma1 - n / 2.0 + n / p;
    let upper = n / p - 1.0;
    if !(shifted > lower) {
        return Err(Error::InvalidParameter(format!(
            "l = {l}, r = {r} violate −σ₁ − N/2 + N/p < l + N/p − N/r (got {shifted}, need > {lower})"
        )));
    }
    if shifted > upper + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "l = {l}, r = {r} violate l + N/p − N/r ≤ N/p − 1 (got {shifted}, need ≤ {upper})"
        )));
    }
    Ok(())
}

/// Norm whose decay is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateTarget {
    /// `B^sigma_{p,1}`.
    Besov { sigma: f64 },
    /// `Lambda^l` in `L^r`.
    Lebesgue { l: f64, r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateQuery {
    pub dim: usize,
    pub p: f64,
    pub sigma1: f64,
    pub target: RateTarget,
}

impl RateQuery {
    pub fn besov(dim: usize, p: f64, sigma1: f64, sigma: f64) -> Self {
        Self {
            dim,
            p,
            sigma1,
            target: RateTarget::Besov { sigma },
        }
    }

    pub fn lebesgue(dim: usize, p: f64, sigma1: f64, l: f64, r: f64) -> Self {
        Self {
            dim,
            p,
            sigma1,
            target: RateTarget::Lebesgue { l, r },
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_p(self.dim, self.p)?;
        check_sigma1(self.dim, self.p, self.sigma1)?;
        match self.target {
            RateTarget::Besov { sigma } => check_sigma(self.dim, self.p, self.sigma1, sigma),
            RateTarget::Lebesgue { l, r } => check_lebesgue(self.dim, self.p, self.sigma1, l, r),
        }
    }

    /// Decay exponent `e` in `(1 + t)^(-e)`.
    pub fn rate(&self) -> Result<f64> {
        match self.target {
            RateTarget::Besov { .. } => predicted_besov_rate(self),
            RateTarget::Lebesgue { .. } => predicted_lebesgue_rate(self),
        }
    }
}

/// `N/2 (1/2 - 1/p) + (sigma + sigma1)/2`.
pub fn predicted_besov_rate(q: &RateQuery) -> Result<f64> {
    let RateTarget::Besov { sigma } = q.target else {
        return Err(Error::InvalidParameter("Besov rate needs a Besov target".into()));
    };
    q.validate()?;
    let n = q.dim as f64;
    Ok(n / 2.0 * (0.5 - 1.0 / q.p) + (sigma + q.sigma1) / 2.0)
}

/// `N/2 (1/2 - 1/r) + (l + sigma1)/2`.
pub fn predicted_lebesgue_rate(q: &RateQuery) -> Result<f64> {
    let RateTarget::Lebesgue { l, r } = q.target else {
        return Err(Error::InvalidParameter("Lebesgue rate needs a Lebesgue target".into()));
    };
    q.validate()?;
    let n = q.dim as f64;
    let inv_r = if r.is_infinite() { 0.0 } else { 1.0 / r };
    Ok(n / 2.0 * (0.5 - inv_r) + (l + q.sigma1) / 2.0)
}

/// Weight of the `B^{-sigma1}_{2,inf}` factor when interpolating `B^{N/2-1}_{2,1}` against `B^{N/2+1}_{2,inf}`.
pub fn theta0(dim: usize, sigma1: f64) -> f64 {
    2.0 / (dim as f64 / 2.0 + 1.0 + sigma1)
}

/// Weight of the `B^{-sigma1}_{2,inf}` factor when interpolating `B^{sigma + N/2 - N/p}_{2,1}` against `B^{N/2-1}_{2,inf}`.
pub fn theta1(dim: usize, p: f64, sigma1: f64, sigma: f64) -> Result<f64> {
    let n = dim as f64;
    let th = (n / p - 1.0 - sigma) / (n / 2.0 - 1.0 + sigma1);
    if !(th > 0.0 && th < 1.0) {
        return Err(Error::InvalidParameter(format!("θ₁ = {th} outside (0, 1); needs σ < N/p − 1")));
    }
    Ok(th)
}

/// `theta2` from `m (1 - theta2) + k theta2 = l + N (1/p - 1/r)` with
/// `m = N/p - 1` and `k = -sigma1 - N (1/2 - 1/p) + eps`.
pub fn theta2(dim: usize, p: f64, sigma1: f64, l: f64, r: f64, eps: f64) -> Result<f64> {
    let n = dim as f64;
    let m = n / p - 1.0;
    let k = -sigma1 - n * (0.5 - 1.0 / p) + eps;
    let inv_r = if r.is_infinite() { 0.0 } else { 1.0 / r };
    let th = (l + n * (1.0 / p - inv_r) - m) / (k - m);
    if !(th > 0.0 && th < 1.0) {
        return Err(Error::InvalidParameter(format!("θ₂ = {th} outside (0, 1); decrease ε")));
    }
    Ok(th)
}

/// Solution of `L' + c L^(1+alpha) = 0`, `alpha = 2/(N/2 - 1 + sigma1)`.
pub fn lyapunov_envelope(dim: usize, sigma1: f64, c: f64, l0: f64, t: f64) -> f64 {
    let alpha = 2.0 / (dim as f64 / 2.0 - 1.0 + sigma1);
    (l0.powf(-alpha) + c * alpha * t).powf(-1.0 / alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Power-law fit `value ~ (1 + t)^fitted` over a time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub series_id: String,
    pub window: [f64; 2],
    pub samples: usize,
    pub fitted: f64,
    pub stderr: f64,
    /// Predicted exponent (negative for decay).
    pub predicted: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// Minimum number of samples inside the fit window.
pub const MIN_FIT_SAMPLES: usize = 10;

/// Least-squares slope of `log value` against `log(1 + t)` over `window`.
pub fn fit_exponent(series_id: &str, series: &[(f64, f64)], window: [f64; 2], predicted: f64, tolerance: f64) -> Result<DecayFit> {
    if !(window[1] > window[0] && window[0] >= 0.0) {
        return Err(Error::InvalidParameter(format!("fit window [{}, {}] needs t1 > t0 ≥ 0", window[0], window[1])));
    }
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|(t, _)| *t >= window[0] && *t <= window[1]).collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            found: pts.len(),
            needed: MIN_FIT_SAMPLES,
        });
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter(format!("series {series_id} has nonpositive value {v} at t = {t}")));
    }
    let xs: Vec<f64> = pts.iter().map(|(t, _)| (1.0 + t).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("fit window contains a single time".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = if pts.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(DecayFit {
        series_id: series_id.to_string(),
        window,
        samples: pts.len(),
        fitted: slope,
        stderr,
        predicted,
        tolerance,
        verdict: Verdict::from_bool((slope - predicted).abs() <= tolerance),
    })
}

/// Exponents and threshold shared by the trajectory monitors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub p: f64,
    pub sigma1: f64,
    pub k0: i32,
    /// Steps ignored before monotonicity is checked.
    pub transient: usize,
    /// Allowed relative increase of the Lyapunov composite per step.
    pub tolerance: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            sigma1: 1.0,
            k0: 0,
            transient: 10,
            tolerance: 1e-6,
        }
    }
}

/// Norms of one state entering the monitors; `low`/`high` split at `k0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormLadder {
    pub t: f64,
    /// `||(a,u,H)||^l` in `B^{N/2-1}_{2,1}`.
    pub low_critical: f64,
    /// `||(a,u,H)||^l` in `B^{N/2+1}_{2,1}`.
    pub low_upper: f64,
    /// `||(a,u,H)||^l` in `B^{-sigma1}_{2,inf}`.
    pub low_negative: f64,
    /// `||(grad a,u,H)||^h` in `B^{N/p-1}_{p,1}`.
    pub high_composite: f64,
    /// `||a||^h` in `B^{N/p}_{p,1}`.
    pub a_high: f64,
    /// `||(u,H)||^h` in `B^{N/p-1}_{p,1}`.
    pub uh_high_lower: f64,
    /// `||(u,H)||^h` in `B^{N/p+1}_{p,1}`.
    pub uh_high_upper: f64,
    /// `||(a,u,H)||^h` in `B^{N/p}_{p,1}`.
    pub z_high: f64,
    /// `||H||^h` in `B^{N/p}_{p,1}`.
    pub h_high: f64,
    /// Full `||a||`, `||H||` in `B^{N/p}_{p,1}` and `||(u,H)||` in `B^{N/p+1}_{p,1}`.
    pub a_full: f64,
    pub h_full: f64,
    pub uh_full_upper: f64,
}

impl NormLadder {
    pub fn measure(d: &Dyadic, cfg: &MonitorConfig, t: f64, s: &State) -> Result<Self> {
        let n = d.grid().dim() as f64;
        let p = cfg.p;
        let spec = |s: f64, p: f64, r: f64| BesovSpec::new(s, p, r, cfg.k0);
        let z2 = d.block_norms(&[&s.a, &s.u, &s.h], 2.0)?;
        let zp = if p == 2.0 { z2.clone() } else { d.block_norms(&[&s.a, &s.u, &s.h], p)? };
        let a = d.block_norms(&[&s.a], p)?;
        let uh = d.block_norms(&[&s.u, &s.h], p)?;
        let h = d.block_norms(&[&s.h], p)?;
        let grad_a = s.a.gradient()?;
        let comp = d.block_norms(&[&grad_a, &s.u, &s.h], p)?;
        let j0 = d.j_min();
        let norm = |ladder: &[f64], sp: BesovSpec| BesovNorm::from_block_norms(sp, j0, ladder);
        let np = n / p;
        Ok(Self {
            t,
            low_critical: norm(&z2, spec(n / 2.0 - 1.0, 2.0, 1.0)?).low,
            low_upper: norm(&z2, spec(n / 2.0 + 1.0, 2.0, 1.0)?).low,
            low_negative: norm(&z2, spec(-cfg.sigma1, 2.0, f64::INFINITY)?).low,
            high_composite: norm(&comp, spec(np - 1.0, p, 1.0)?).high,
            a_high: norm(&a, spec(np, p, 1.0)?).high,
            uh_high_lower: norm(&uh, spec(np - 1.0, p, 1.0)?).high,
            uh_high_upper: norm(&uh, spec(np + 1.0, p, 1.0)?).high,
            z_high: norm(&zp, spec(np, p, 1.0)?).high,
            h_high: norm(&h, spec(np, p, 1.0)?).high,
            a_full: norm(&a, spec(np, p, 1.0)?).total,
            h_full: norm(&h, spec(np, p, 1.0)?).total,
            uh_full_upper: norm(&uh, spec(np + 1.0, p, 1.0)?).total,
        })
    }

    /// Low part in `B^{N/2-1}_{2,1}` plus high part of `(grad a, u, H)` in `B^{N/p-1}_{p,1}`.
    pub fn lyapunov(&self) -> f64 {
        self.low_critical + self.high_composite
    }

    /// Coefficient of the quadratic term in the low-frequency energy inequality.
    pub fn a1(&self) -> f64 {
        self.low_upper
            + self.a_high
            + self.uh_high_upper
            + self.a_full * self.a_full
            + self.a_full * self.uh_full_upper
            + self.a_full * self.h_full
    }

    /// Coefficient of the linear term in the low-frequency energy inequality.
    pub fn a2(&self) -> f64 {
        self.z_high * self.z_high
            + self.uh_high_upper * self.a_full * self.a_high
            + self.a_full * self.a_full * self.a_high
            + self.a_high * self.uh_high_upper
            + self.h_high * self.h_high * self.a_full
    }
}

/// Running Chemin–Lerner accumulators for the six terms of the solution-space norm.
#[derive(Debug, Clone, PartialEq)]
pub struct XpAccumulator {
    dim: usize,
    p: f64,
    k0: i32,
    j_min: i32,
    last: Option<(f64, [Vec<f64>; 3])>,
    sup: [Vec<f64>; 3],
    integral: [Vec<f64>; 3],
}

impl XpAccumulator {
    pub fn new(d: &Dyadic, p: f64, k0: i32) -> Self {
        let nb = d.block_count();
        Self {
            dim: d.grid().dim(),
            p,
            k0,
            j_min: d.j_min(),
            last: None,
            sup: [vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]],
            integral: [vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]],
        }
    }

    /// Fold in the state at time `t` (times must increase).
    pub fn observe(&mut self, d: &Dyadic, t: f64, s: &State) -> Result<()> {
        let ladders = [
            d.block_norms(&[&s.a, &s.u, &s.h], 2.0)?,
            d.block_norms(&[&s.a], self.p)?,
            d.block_norms(&[&s.u, &s.h], self.p)?,
        ];
        if let Some((t_prev, prev)) = &self.last {
            let dt = t - t_prev;
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter(format!("times must increase: {t_prev} then {t}")));
            }
            for c in 0..3 {
                for b in 0..ladders[c].len() {
                    self.integral[c][b] += 0.5 * dt * (ladders[c][b] + prev[c][b]);
                }
            }
        }
        for c in 0..3 {
            for (m, v) in self.sup[c].iter_mut().zip(&ladders[c]) {
                *m = m.max(*v);
            }
        }
        self.last = Some((t, ladders));
        Ok(())
    }

    fn weighted(&self, ladder: &[f64], s: f64, low: bool) -> f64 {
        ladder
            .iter()
            .enumerate()
            .filter(|(b, _)| (self.j_min + *b as i32 <= self.k0) == low)
            .map(|(b, v)| 2f64.powf((self.j_min + b as i32) as f64 * s) * v)
            .sum()
    }

    /// The six terms in order: low sup, low integral, `a` high sup, `a` high integral,
    /// `(u,H)` high sup, `(u,H)` high integral.
    pub fn terms(&self) -> [f64; 6] {
        let n = self.dim as f64;
        let np = n / self.p;
        [
            self.weighted(&self.sup[0], n / 2.0 - 1.0, true),
            self.weighted(&self.integral[0], n / 2.0 + 1.0, true),
            self.weighted(&self.sup[1], np, false),
            self.weighted(&self.integral[1], np, false),
            self.weighted(&self.sup[2], np - 1.0, false),
            self.weighted(&self.integral[2], np + 1.0, false),
        ]
    }

    pub fn value(&self) -> f64 {
        self.terms().iter().sum()
    }
}

/// One row of the monitor table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSample {
    pub t: f64,
    pub lyapunov: f64,
    pub low_negative: f64,
    pub a1: f64,
    pub a2: f64,
    /// Trapezoid integrals of `A1` and `A2` up to `t`.
    pub int_a1: f64,
    pub int_a2: f64,
    pub xp: f64,
}

/// Incremental monitors fed one state at a time.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub config: MonitorConfig,
    d: Dyadic,
    xp: XpAccumulator,
    pub ladders: Vec<NormLadder>,
    pub samples: Vec<MonitorSample>,
}

impl Monitor {
    pub fn new(grid: TorusGrid, config: MonitorConfig) -> Result<Self> {
        check_p(grid.dim(), config.p)?;
        check_sigma1(grid.dim(), config.p, config.sigma1)?;
        let d = Dyadic::new(grid);
        let xp = XpAccumulator::new(&d, config.p, config.k0);
        Ok(Self {
            config,
            d,
            xp,
            ladders: Vec::new(),
            samples: Vec::new(),
        })
    }

    pub fn dyadic(&self) -> &Dyadic {
        &self.d
    }

    pub fn observe(&mut self, t: f64, s: &State) -> Result<()> {
        let ladder = NormLadder::measure(&self.d, &self.config, t, s)?;
        self.xp.observe(&self.d, t, s)?;
        let (a1, a2) = (ladder.a1(), ladder.a2());
        let (int_a1, int_a2) = match self.samples.last() {
            Some(prev) => {
                let dt = t - prev.t;
                (prev.int_a1 + 0.5 * dt * (prev.a1 + a1), prev.int_a2 + 0.5 * dt * (prev.a2 + a2))
            }
            None => (0.0, 0.0),
        };
        self.samples.push(MonitorSample {
            t,
            lyapunov: ladder.lyapunov(),
            low_negative: ladder.low_negative,
            a1,
            a2,
            int_a1,
            int_a2,
            xp: self.xp.value(),
        });
        self.ladders.push(ladder);
        Ok(())
    }

    pub fn xp_terms(&self) -> [f64; 6] {
        self.xp.terms()
    }

    pub fn lyapunov_report(&self) -> LyapunovReport {
        lyapunov_report(&self.samples, &self.config, self.d.grid().dim())
    }

    pub fn low_norm_report(&self) -> LowNormReport {
        low_norm_report(&self.samples)
    }
}

/// Monotonicity of the Lyapunov composite along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub transient: usize,
    pub tolerance: f64,
    /// Largest `(L_{n+1} - L_n) / L_n` after the transient.
    pub max_relative_increase: f64,
    /// `1 + 2/(N/2 - 1 + sigma1)`.
    pub exponent: f64,
    /// Smallest `-L' / L^exponent` after the transient (finite differences).
    pub min_dissipation_ratio: f64,
    pub verdict: Verdict,
}

fn lyapunov_report(samples: &[MonitorSample], cfg: &MonitorConfig, dim: usize) -> LyapunovReport {
    let exponent = 1.0 + 2.0 / (dim as f64 / 2.0 - 1.0 + cfg.sigma1);
    let mut worst = 0.0f64;
    let mut min_ratio = f64::INFINITY;
    for w in samples.windows(2).skip(cfg.transient) {
        let (a, b) = (w[0].lyapunov, w[1].lyapunov);
        if a > 0.0 {
            worst = worst.max((b - a) / a);
            let rate = -(b - a) / (w[1].t - w[0].t);
            min_ratio = min_ratio.min(rate / a.powf(exponent));
        } else if b > 0.0 {
            worst = f64::INFINITY;
        }
    }
    if !min_ratio.is_finite() {
        min_ratio = 0.0;
    }
    LyapunovReport {
        transient: cfg.transient,
        tolerance: cfg.tolerance,
        max_relative_increase: worst,
        exponent,
        min_dissipation_ratio: min_ratio,
        verdict: Verdict::from_bool(worst <= cfg.tolerance),
    }
}

/// Boundedness of the low-frequency negative-regularity norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowNormReport {
    pub initial: f64,
    pub first_half_max: f64,
    pub second_half_max: f64,
    pub overall_max: f64,
    pub int_a1: f64,
    pub int_a2: f64,
    pub verdict: Verdict,
}

fn low_norm_report(samples: &[MonitorSample]) -> LowNormReport {
    let half = samples.len().div_ceil(2);
    let max = |s: &[MonitorSample]| s.iter().map(|m| m.low_negative).fold(0.0, f64::max);
    let first = max(&samples[..half]);
    let second = max(&samples[half..]);
    let last = samples.last();
    LowNormReport {
        initial: samples.first().map_or(0.0, |m| m.low_negative),
        first_half_max: first,
        second_half_max: second,
        overall_max: first.max(second),
        int_a1: last.map_or(0.0, |m| m.int_a1),
        int_a2: last.map_or(0.0, |m| m.int_a2),
        verdict: Verdict::from_bool(second <= 2.0 * first && first.is_finite()),
    }
}

fn monitor_states<'a>(grid: TorusGrid, cfg: MonitorConfig, states: impl IntoIterator<Item = (f64, &'a State)>) -> Result<Monitor> {
    let mut m = Monitor::new(grid, cfg)?;
    for (t, s) in states {
        m.observe(t, s)?;
    }
    Ok(m)
}

fn trajectory_states(traj: &Trajectory) -> impl Iterator<Item = (f64, &State)> {
    traj.times.iter().copied().zip(traj.snapshots.iter())
}

fn trajectory_grid(traj: &Trajectory) -> Result<TorusGrid> {
    traj.snapshots.first().map(|s| s.grid()).ok_or(Error::EmptySeries)
}

/// Lyapunov composite over the stored snapshots of a trajectory.
pub fn monitor_lyapunov(traj: &Trajectory, cfg: MonitorConfig) -> Result<(Vec<MonitorSample>, LyapunovReport)> {
    let m = monitor_states(trajectory_grid(traj)?, cfg, trajectory_states(traj))?;
    let r = m.lyapunov_report();
    Ok((m.samples, r))
}

/// Low-frequency `B^{-sigma1}_{2,inf}` norm and the `A1`, `A2` integrals over the stored snapshots.
pub fn monitor_low_norm(traj: &Trajectory, cfg: MonitorConfig) -> Result<(Vec<MonitorSample>, LowNormReport)> {
    let m = monitor_states(trajectory_grid(traj)?, cfg, trajectory_states(traj))?;
    let r = m.low_norm_report();
    Ok((m.samples, r))
}

/// Solution-space norm at the final stored time.
pub fn compute_xp(traj: &Trajectory, p: f64, k0: i32) -> Result<f64> {
    let grid = trajectory_grid(traj)?;
    let d = Dyadic::new(grid);
    let mut acc = XpAccumulator::new(&d, p, k0);
    for (t, s) in trajectory_states(traj) {
        acc.observe(&d, t, s)?;
    }
    Ok(acc.value())
}

/// Empirical constants of the two interpolation inequalities, including the
/// threshold instance and the instance used for the Lebesgue rates.
pub fn interpolation_checks(h: &Harness, p: f64, sigma1: f64, k0: i32) -> Result<Vec<RatioReport>> {
    let dim = h.coarse.grid().dim();
    check_p(dim, p)?;
    check_sigma1(dim, p, sigma1)?;
    let suite = standard_suite(dim, SuiteParams { p, sigma1, k0 }, &MaterialParams::standard());
    suite
        .iter()
        .filter(|e| {
            let id = e.id();
            id.starts_with("interpolation") || id.starts_with("gagliardo_nirenberg")
        })
        .map(|e| h.run(e.as_ref()))
        .collect()
}

/// Fit of a whole-space linear-semigroup norm series against the predicted exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub query: RateQuery,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: DecayFit,
}

/// Sampling of the linear oracle series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleWindow {
    pub t0: f64,
    pub t1: f64,
    pub samples: usize,
    /// Lowest block of the radial grid; must reach below `2^(-1/2 log2 t1)`.
    pub j_lo: i32,
    pub tolerance: f64,
}

impl Default for OracleWindow {
    fn default() -> Self {
        Self {
            t0: 1e2,
            t1: 1e4,
            samples: 21,
            j_lo: -12,
            tolerance: 0.05,
        }
    }
}

/// `Bdot^sigma_{2,1}` norms of the linear semigroup on power-law data, fitted over the window.
/// `sigmas` share one quadrature pass.
pub fn linear_oracle_fits(
    dim: usize,
    sigma1: f64,
    sigmas: &[f64],
    params: &MaterialParams,
    window: &OracleWindow,
    resolution: QuadratureResolution,
) -> Result<Vec<OracleFit>> {
    for &s in sigmas {
        RateQuery::besov(dim, 2.0, sigma1, s).validate()?;
    }
    linear_oracle_ladder(dim, sigma1, sigmas, params, window, resolution)
}

/// As [`linear_oracle_fits`], without the upper bound `sigma <= N/p - 1` of the nonlinear theory;
/// the linear semigroup obeys the same exponent for every `sigma > -sigma1`.
pub fn linear_oracle_ladder(
    dim: usize,
    sigma1: f64,
    sigmas: &[f64],
    params: &MaterialParams,
    window: &OracleWindow,
    resolution: QuadratureResolution,
) -> Result<Vec<OracleFit>> {
    check_p(dim, 2.0)?;
    check_sigma1(dim, 2.0, sigma1)?;
    if let Some(s) = sigmas.iter().find(|&&s| !(s > -sigma1)) {
        return Err(Error::InvalidParameter(format!("σ = {s} violates −σ₁ < σ for p = 2")));
    }
    params.check_dim(dim)?;
    let profile = QuadratureProfile::new(dim, sigma1, 1.0, window.j_lo, 0, resolution)?;
    let times = log_times(window.t0, window.t1, window.samples);
    let series = quadrature_series(&profile, params, &times)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let query = RateQuery::besov(dim, 2.0, sigma1, sigma);
            let values = series.totals(BesovSpec::new(sigma, 2.0, 1.0, 0)?);
            let pts: Vec<(f64, f64)> = times.iter().copied().zip(values.iter().copied()).collect();
            let id = format!("besov_s{sigma}_sigma1_{sigma1}_n{dim}");
            let predicted = -(sigma + sigma1) / 2.0;
            let fit = fit_exponent(&id, &pts, [window.t0, window.t1], predicted, window.tolerance)?;
            Ok(OracleFit {
                query,
                times: times.clone(),
                values,
                fit,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{run_system, InitialData, InitialProfile, MhdSystem, SchemeConfig};
    use crate::littlewood_paley::TWO_THIRDS;
    use crate::linear::Polarization;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn besov_rate_examples() {
        assert!(close(predicted_besov_rate(&RateQuery::besov(2, 2.0, 1.0, 0.0)).unwrap(), 0.5, 1e-15));
        assert!(close(predicted_besov_rate(&RateQuery::besov(3, 2.0, 1.5, 0.0)).unwrap(), 0.75, 1e-15));
        assert!(close(predicted_besov_rate(&RateQuery::besov(3, 4.0, 0.0, -0.25)).unwrap(), 0.25, 1e-15));
    }

    #[test]
    fn lebesgue_rate_examples() {
        assert!(close(predicted_lebesgue_rate(&RateQuery::lebesgue(2, 2.0, 1.0, 0.0, 2.0)).unwrap(), 0.5, 1e-15));
        let err = predicted_lebesgue_rate(&RateQuery::lebesgue(3, 2.0, 1.5, 0.0, 6.0)).unwrap_err();
        assert!(err.to_string().contains("N/p − 1"), "{err}");
        for (n, p, s1, s) in [(3, 3.0, 0.5, -0.2), (3, 2.0, 1.0, 0.3), (2, 3.0, 0.3, -0.5)] {
            let b = predicted_besov_rate(&RateQuery::besov(n, p, s1, s)).unwrap();
            let l = predicted_lebesgue_rate(&RateQuery::lebesgue(n, p, s1, s, p)).unwrap();
            assert!(close(b, l, 1e-15));
        }
    }

    #[test]
    fn each_constraint_has_its_own_message() {
        let msg = |q: RateQuery| q.validate().unwrap_err().to_string();
        assert!(msg(RateQuery::besov(2, 1.5, 0.5, 0.0)).contains("2 ≤ p"));
        assert!(msg(RateQuery::besov(3, 4.5, 0.0, 0.0)).contains("min(4, 2N/(N−2))"));
        assert!(msg(RateQuery::besov(2, 4.0, 0.0, -0.5)).contains("excluded when N = 2"));
        assert!(msg(RateQuery::besov(3, 2.0, -0.6, 0.0)).contains("1 − N/2 < σ₁"));
        assert!(msg(RateQuery::besov(3, 2.0, 1.6, 0.0)).contains("σ₁ ≤ 2N/p − N/2"));
        assert!(msg(RateQuery::besov(3, 2.0, 1.5, 0.6)).contains("σ ≤ N/p − 1"));
        assert!(msg(RateQuery::besov(3, 2.0, 1.5, -1.6)).contains("−σ₁ − N/2 + N/p < σ"));
        assert!(msg(RateQuery::lebesgue(3, 3.0, 0.5, 0.0, 2.0)).contains("p ≤ r"));
        assert!(msg(RateQuery::lebesgue(3, 2.0, 0.5, -3.0, 2.0)).contains("< l + N/p − N/r"));
        assert!(msg(RateQuery::lebesgue(3, 2.0, 1.5, 0.0, 6.0)).contains("l + N/p − N/r ≤ N/p − 1"));
    }

    #[test]
    fn closed_upper_endpoint_is_accepted() {
        assert!(RateQuery::besov(3, 2.0, 1.5, 0.5).validate().is_ok());
        assert!(RateQuery::besov(2, 2.0, 1.0, 0.0).validate().is_ok());
    }

    #[test]
    fn rate_is_monotone_in_sigma_and_sigma1() {
        for n in [2usize, 3] {
            for p in [2.0, 2.5, 3.0] {
                if check_p(n, p).is_err() {
                    continue;
                }
                let nf = n as f64;
                let s1_hi = 2.0 * nf / p - nf / 2.0;
                for i in 1..8 {
                    let s1 = (1.0 - nf / 2.0) + (s1_hi - 1.0 + nf / 2.0) * i as f64 / 8.0;
                    let lo = -s1 - nf / 2.0 + nf / p;
                    let hi = nf / p - 1.0;
                    let s = 0.5 * (lo + hi);
                    let r = |s1: f64, s: f64| predicted_besov_rate(&RateQuery::besov(n, p, s1, s)).unwrap();
                    assert!(r(s1, s + 1e-3) > r(s1, s));
                    assert!(r(s1 + 1e-3, s) > r(s1, s));
                }
            }
        }
    }

    #[test]
    fn theta_values() {
        assert!(close(theta0(2, 1.0), 2.0 / 3.0, 1e-15));
        assert!(close(theta0(3, 1.5), 2.0 / 4.0, 1e-15));
        assert!(close(theta1(3, 2.0, 1.5, 0.0).unwrap(), 0.25, 1e-15));
        assert!(theta1(3, 2.0, 1.5, 0.5).is_err());
        let th = theta2(3, 2.0, 1.0, -0.6, 4.0, 0.1).unwrap();
        let (m, k) = (0.5, -1.0 + 0.1);
        assert!(close(m * (1.0 - th) + k * th, -0.6 + 3.0 * 0.25, 1e-14));
    }

    #[test]
    fn envelope_solves_the_differential_inequality() {
        let (n, s1, c, l0) = (2, 1.0, 0.3, 2.0);
        let alpha = 2.0 / (n as f64 / 2.0 - 1.0 + s1);
        assert!(close(lyapunov_envelope(n, s1, c, l0, 0.0), l0, 1e-14));
        for t in [0.5, 3.0, 40.0] {
            let h = 1e-5;
            let d = (lyapunov_envelope(n, s1, c, l0, t + h) - lyapunov_envelope(n, s1, c, l0, t - h)) / (2.0 * h);
            let l = lyapunov_envelope(n, s1, c, l0, t);
            assert!((d + c * l.powf(1.0 + alpha)).abs() < 1e-8);
        }
        let pts: Vec<(f64, f64)> = log_times(1e3, 1e7, 20)
            .into_iter()
            .map(|t| (t, lyapunov_envelope(3, 1.5, c, l0, t)))
            .collect();
        let fit = fit_exponent("envelope", &pts, [1e3, 1e7], -(0.5 + 1.5) / 2.0, 1e-3).unwrap();
        assert!(fit.verdict.passed(), "{fit:?}");
    }

    #[test]
    fn fit_recovers_power_laws() {
        let pts: Vec<(f64, f64)> = (0..40).map(|i| (i as f64 * 5.0, (1.0 + i as f64 * 5.0).powf(-0.75))).collect();
        let fit = fit_exponent("synthetic", &pts, [0.0, 200.0], -0.75, 1e-3).unwrap();
        assert!(close(fit.fitted, -0.75, 1e-12) && fit.stderr < 1e-10 && fit.verdict.passed());
        let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 3.0)).collect();
        let fit = fit_exponent("flat", &flat, [0.0, 19.0], 0.0, 1e-3).unwrap();
        assert!(fit.fitted.abs() < 1e-12 && fit.verdict.passed());
    }

    #[test]
    fn fit_rejects_bad_input() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 1.0 - i as f64 / 10.0)).collect();
        assert!(matches!(fit_exponent("x", &pts, [0.0, 19.0], 0.0, 0.1), Err(Error::InvalidParameter(_))));
        assert!(matches!(fit_exponent("x", &pts[..5], [0.0, 19.0], 0.0, 0.1), Err(Error::TooFewSamples { .. })));
        assert!(fit_exponent("x", &pts, [5.0, 5.0], 0.0, 0.1).is_err());
        let fit = fit_exponent("x", &[(0.0, 1.0); 12].iter().enumerate().map(|(i, _)| (i as f64, 2f64.powi(-(i as i32)))).collect::<Vec<_>>(), [0.0, 11.0], 0.0, 0.05).unwrap();
        assert_eq!(fit.verdict, Verdict::Fail);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fit_is_exact_on_power_laws(e in -3.0f64..1.0, t0 in 0.0f64..50.0, span in 10.0f64..1e4, c in 0.1f64..10.0) {
            let pts: Vec<(f64, f64)> = log_times(1.0 + t0, 1.0 + t0 + span, 15)
                .into_iter()
                .map(|s| (s - 1.0, c * s.powf(e)))
                .collect();
            let fit = fit_exponent("p", &pts, [t0, t0 + span], e, 1e-3).unwrap();
            prop_assert!((fit.fitted - e).abs() < 1e-9);
        }
    }

    fn grid() -> TorusGrid {
        TorusGrid::new(2, 64, 8.0 * PI).unwrap()
    }

    fn cfg() -> MonitorConfig {
        MonitorConfig {
            k0: -1,
            ..MonitorConfig::default()
        }
    }

    fn linear_trajectory(amplitude: f64) -> Trajectory {
        let params = MaterialParams::standard();
        let scheme = SchemeConfig {
            dt: 0.1,
            t_end: 6.0,
            snapshot_every: 1,
            ..SchemeConfig::default()
        };
        let init = InitialData {
            profile: InitialProfile::PowerLaw { sigma1: 1.0, cutoff: 2.0 },
            amplitude,
            seed: 3,
            polarization: Polarization::DensityMagnetic,
        };
        let s = init.build(grid(), &params, TWO_THIRDS).unwrap();
        let system = MhdSystem::new(grid(), params, &scheme).unwrap().linear_only();
        run_system(&system, &s, &scheme, &mut |_, _, _| Ok(())).unwrap()
    }

    #[test]
    fn zero_trajectory_monitors() {
        let traj = linear_trajectory(0.0);
        let (samples, lyap) = monitor_lyapunov(&traj, cfg()).unwrap();
        assert!(samples.iter().all(|m| m.lyapunov == 0.0 && m.a1 == 0.0 && m.a2 == 0.0));
        assert!(lyap.verdict.passed());
        let (_, low) = monitor_low_norm(&traj, cfg()).unwrap();
        assert!(low.verdict.passed() && low.overall_max == 0.0);
        assert_eq!(compute_xp(&traj, 2.0, -1).unwrap(), 0.0);
    }

    #[test]
    fn linear_trajectory_monitors() {
        let traj = linear_trajectory(1e-2);
        let (samples, lyap) = monitor_lyapunov(&traj, cfg()).unwrap();
        assert!(samples[0].lyapunov > 0.0);
        assert!(lyap.verdict.passed(), "{lyap:?}");
        let (samples, low) = monitor_low_norm(&traj, cfg()).unwrap();
        assert!(low.verdict.passed(), "{low:?}");
        for w in samples.windows(2) {
            assert!(w[1].low_negative <= w[0].low_negative * (1.0 + 1e-12));
            assert!(w[1].xp >= w[0].xp && w[1].int_a1 >= w[0].int_a1);
        }
    }

    #[test]
    fn xp_of_a_time_constant_state() {
        let traj = linear_trajectory(1e-2);
        let s = &traj.snapshots[3];
        let d = Dyadic::new(s.grid());
        let mut acc = XpAccumulator::new(&d, 2.0, -1);
        let mut history = Vec::new();
        for i in 0..=4 {
            acc.observe(&d, i as f64 * 2.5, s).unwrap();
            history.push(acc.terms());
        }
        let (first, last) = (history[0], history[4]);
        for k in [0, 2, 4] {
            assert!(close(first[k], last[k], 1e-14 * first[k].max(1.0)));
        }
        for k in [1, 3, 5] {
            assert_eq!(first[k], 0.0);
            assert!(close(last[k], 2.0 * history[2][k], 1e-12 * last[k]));
        }
        let static_low = d
            .besov_stacked(&[&s.a, &s.u, &s.h], BesovSpec::new(0.0, 2.0, 1.0, -1).unwrap())
            .unwrap()
            .low;
        assert!(close(last[0], static_low, 1e-12 * static_low));
    }

    #[test]
    fn xp_rejects_non_increasing_times() {
        let traj = linear_trajectory(1e-2);
        let d = Dyadic::new(grid());
        let mut acc = XpAccumulator::new(&d, 2.0, -1);
        acc.observe(&d, 1.0, &traj.snapshots[0]).unwrap();
        assert!(acc.observe(&d, 1.0, &traj.snapshots[1]).is_err());
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        let traj = Trajectory {
            times: vec![],
            snapshots: vec![],
            diagnostics: vec![],
        };
        assert!(matches!(compute_xp(&traj, 2.0, 0), Err(Error::EmptySeries)));
    }

    #[test]
    fn oracle_fit_two_dimensions() {
        let window = OracleWindow {
            samples: 11,
            ..OracleWindow::default()
        };
        let fits = linear_oracle_fits(2, 1.0, &[0.0], &MaterialParams::standard(), &window, QuadratureResolution::default()).unwrap();
        let f = &fits[0].fit;
        assert!(f.verdict.passed() && close(f.predicted, -0.5, 1e-15), "{f:?}");
    }
}
