//! Fixed-point realization of the local well-posedness scheme.
//!
//! The solution is split as `φ = φ_L + δφ`, `θ = θ̄ + δθ`, where `φ_L` solves the
//! linear damped bilaplacian flow. The map `𝓛` sends `(δφ, δθ)` to the solution
//! of the linear problems forced by `f1`, `f2` evaluated at the full fields.
//! Time series live on a uniform grid `t_0 = 0 < … < t_N = T`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Fourier, SpectralField};
use crate::littlewood_paley::{self, DyadicPartition, SmallnessReport, TimeNorm};
use crate::model_a2::{self, SimConfig};
use crate::thermo::{self, Model, ModelParams, ThermoState};

/// Consecutive non-contracting iterations after which the iteration is declared divergent.
pub const DIVERGENCE_STREAK: usize = 3;

/// Differences below this fraction of the iterate norm are round-off and count as converged.
pub const ROUNDOFF_REL: f64 = 1e-8;

/// Bisection steps used to locate `T_χ`.
const T_CHI_BISECTIONS: usize = 40;

fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::TimeGrid(format!("need at least 2 time samples, got {}", times.len())));
    }
    if times[0] != 0.0 {
        return Err(Error::TimeGrid(format!("time grid must start at 0, starts at {}", times[0])));
    }
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) || !w[1].is_finite() {
            return Err(Error::TimeGrid(format!(
                "times must be strictly increasing: t[{}] = {}, t[{}] = {}",
                i,
                w[0],
                i + 1,
                w[1]
            )));
        }
    }
    Ok(())
}

/// Spacing of a uniform time grid.
fn uniform_dt(times: &[f64]) -> Result<f64> {
    check_times(times)?;
    let dt = times[1] - times[0];
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
            return Err(Error::TimeGrid(format!("time grid is not uniform at interval {i}")));
        }
    }
    Ok(dt)
}

/// `times[i] = i·T/steps`.
pub fn uniform_times(t_end: f64, steps: usize) -> Vec<f64> {
    let dt = t_end / steps as f64;
    (0..=steps).map(|i| i as f64 * dt).collect()
}

fn check_series(series: &[Field], times: &[f64], what: &str, grid: &crate::grid::GridSpec) -> Result<()> {
    if series.len() != times.len() {
        return Err(Error::TimeGrid(format!(
            "{what} has {} samples for {} times",
            series.len(),
            times.len()
        )));
    }
    if let Some(bad) = series.iter().find(|f| f.grid() != grid) {
        return Err(Error::GridMismatch(format!("{what} sampled on {}, expected {}", bad.grid(), grid)));
    }
    Ok(())
}

/// Decay rate of the φ propagator, `εθ̄|k|⁴/(1+α|k|²)`.
fn phi_rate(k2: f64, p: &ModelParams) -> f64 {
    p.eps * p.theta_bar * k2 * k2 / (1.0 + p.alpha * k2)
}

fn theta_rate(k2: f64, p: &ModelParams) -> f64 {
    p.kappa * k2 / p.k_b
}

/// `∫_0^h e^{−λ(h−s)} ds`.
fn etd_weight(lambda: f64, h: f64) -> f64 {
    if lambda == 0.0 {
        h
    } else {
        -(-lambda * h).exp_m1() / lambda
    }
}

/// Per-mode exponential integrator for `u̇ = −λ(k)u + m(k)·ĝ(t_n)` on each interval.
fn etd_series(
    f: &Fourier,
    u0: SpectralField,
    forcing: Option<&[SpectralField]>,
    times: &[f64],
    rate: impl Fn(f64) -> f64,
    gain: impl Fn(f64) -> f64,
) -> Vec<SpectralField> {
    let k2 = f.k_squared();
    let lam: Vec<f64> = k2.iter().map(|&k| rate(k)).collect();
    let gn: Vec<f64> = k2.iter().map(|&k| gain(k)).collect();
    let mut out = Vec::with_capacity(times.len());
    out.push(u0);
    for n in 0..times.len() - 1 {
        let h = times[n + 1] - times[n];
        let mut next = out[n].clone();
        for (i, z) in next.coeffs_mut().iter_mut().enumerate() {
            *z *= (-lam[i] * h).exp();
            if let Some(g) = forcing {
                *z += g[n].coeffs()[i] * (etd_weight(lam[i], h) * gn[i]);
            }
        }
        out.push(next);
    }
    out
}

fn spectral_fourier(f: &Field) -> Fourier {
    Fourier::new(*f.grid()).with_dealias(false)
}

fn to_fields(f: &Fourier, hats: &[SpectralField]) -> Result<Vec<Field>> {
    hats.iter().map(|h| f.inverse(h)).collect()
}

fn to_hats(f: &Fourier, fields: &[Field]) -> Result<Vec<SpectralField>> {
    fields.iter().map(|x| f.transform(x)).collect()
}

/// `φ_L(t)` from the exact per-mode propagator `exp(−t·εθ̄|k|⁴/(1+α|k|²))`.
pub fn free_evolution(phi0: &Field, p: &ModelParams, times: &[f64]) -> Result<Vec<Field>> {
    p.validate()?;
    check_times(times)?;
    let f = spectral_fourier(phi0);
    let h0 = f.transform(phi0)?;
    let out = times
        .iter()
        .map(|&t| f.apply_radial(&h0, |k2| (-t * phi_rate(k2, p)).exp()))
        .collect::<Vec<_>>();
    to_fields(&f, &out)
}

fn phi_solve_hat(f: &Fourier, g: &[SpectralField], phi0: SpectralField, p: &ModelParams, times: &[f64]) -> Vec<SpectralField> {
    etd_series(f, phi0, Some(g), times, |k2| phi_rate(k2, p), |k2| 1.0 / (1.0 + p.alpha * k2))
}

fn theta_solve_hat(f: &Fourier, h: &[SpectralField], theta0: SpectralField, p: &ModelParams, times: &[f64]) -> Vec<SpectralField> {
    etd_series(f, theta0, Some(h), times, |k2| theta_rate(k2, p), |_| 1.0 / p.k_b)
}

/// Solves `∂tφ − αΔ∂tφ + εθ̄Δ²φ = g`, `φ(0) = φ₀`, holding `g` constant on each interval.
pub fn linear_phi_solve(g: &[Field], phi0: &Field, p: &ModelParams, times: &[f64]) -> Result<Vec<Field>> {
    p.validate()?;
    check_times(times)?;
    check_series(g, times, "phi forcing", phi0.grid())?;
    let f = spectral_fourier(phi0);
    let gh = to_hats(&f, g)?;
    to_fields(&f, &phi_solve_hat(&f, &gh, f.transform(phi0)?, p, times))
}

/// Solves `k_B∂tθ − κΔθ = h`, `θ(0) = θ₀`, holding `h` constant on each interval.
pub fn linear_theta_solve(h: &[Field], theta0: &Field, p: &ModelParams, times: &[f64]) -> Result<Vec<Field>> {
    p.validate()?;
    check_times(times)?;
    check_series(h, times, "theta forcing", theta0.grid())?;
    let f = spectral_fourier(theta0);
    let hh = to_hats(&f, h)?;
    to_fields(&f, &theta_solve_hat(&f, &hh, f.transform(theta0)?, p, times))
}

/// Which block norm a Chemin–Lerner sum uses.
#[derive(Clone, Copy)]
enum BlockKind {
    Plain,
    Gradient,
}

/// `Σ_q 2^{qs} ‖ ‖Δ_q u(t)‖ ‖_{L^ρ_t}` on spectral samples.
fn cl_hat(hats: &[SpectralField], dt: f64, s: f64, rho: TimeNorm, part: &DyadicPartition, kind: BlockKind) -> f64 {
    part.blocks()
        .map(|q| {
            let samples: Vec<f64> = hats
                .iter()
                .map(|h| match kind {
                    BlockKind::Plain => part.block_norm(h, q),
                    BlockKind::Gradient => part.block_gradient_norm(h, q),
                })
                .collect();
            2f64.powf(q as f64 * s) * littlewood_paley::time_norm(&samples, dt, rho)
        })
        .sum()
}

fn radial_series(f: &Fourier, hats: &[SpectralField], m: impl Fn(f64) -> f64 + Copy) -> Vec<SpectralField> {
    hats.iter().map(|h| f.apply_radial(h, m)).collect()
}

fn combine(a: &SpectralField, b: &SpectralField, ca: f64, cb: f64) -> SpectralField {
    let mut out = a.clone();
    for (z, &w) in out.coeffs_mut().iter_mut().zip(b.coeffs()) {
        *z = *z * ca + w * cb;
    }
    out
}

/// Second-order finite-difference time derivative with one-sided ends.
fn time_derivative(hats: &[SpectralField], dt: f64) -> Vec<SpectralField> {
    let n = hats.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                let t = combine(&hats[1], &hats[0], 4.0, -3.0);
                combine(&t, &hats[2], 1.0 / (2.0 * dt), -1.0 / (2.0 * dt))
            } else if i == n - 1 {
                let t = combine(&hats[n - 1], &hats[n - 2], 3.0, -4.0);
                combine(&t, &hats[n - 3], 1.0 / (2.0 * dt), 1.0 / (2.0 * dt))
            } else {
                combine(&hats[i + 1], &hats[i - 1], 0.5 / dt, -0.5 / dt)
            }
        })
        .collect()
}

/// The seven summands of the 𝒦 norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KNormReport {
    /// `‖δφ‖_{L̃^∞ B^{d/2+2}}`
    pub phi_linf: f64,
    /// `‖Δ²δφ‖_{L¹ B^{d/2}}`
    pub phi_bilap_l1: f64,
    /// `‖∂tδφ‖_{L̃² B^{d/2}}`
    pub phi_dt_l2: f64,
    /// `‖∂t∇δφ‖_{L̃² B^{d/2}}`
    pub phi_dt_grad_l2: f64,
    /// `‖δθ‖_{L̃^∞ B^{d/2}}`
    pub theta_linf: f64,
    /// `‖Δδθ‖_{L¹ B^{d/2}}`
    pub theta_lap_l1: f64,
    /// `‖∂tδθ‖_{L¹ B^{d/2}}`
    pub theta_dt_l1: f64,
    pub sum: f64,
}

impl KNormReport {
    pub fn summands(&self) -> [f64; 7] {
        [
            self.phi_linf,
            self.phi_bilap_l1,
            self.phi_dt_l2,
            self.phi_dt_grad_l2,
            self.theta_linf,
            self.theta_lap_l1,
            self.theta_dt_l1,
        ]
    }
}

fn k_norm_hat(dphi: &[SpectralField], dtheta: &[SpectralField], dt: f64, part: &DyadicPartition) -> KNormReport {
    let f = part.fourier();
    let s = part.grid().dim() as f64 / 2.0;
    let bilap = radial_series(f, dphi, |k2| k2 * k2);
    let dphi_t = time_derivative(dphi, dt);
    let lap = radial_series(f, dtheta, |k2| k2);
    let dtheta_t = time_derivative(dtheta, dt);
    let mut r = KNormReport {
        phi_linf: cl_hat(dphi, dt, s + 2.0, TimeNorm::LInf, part, BlockKind::Plain),
        phi_bilap_l1: cl_hat(&bilap, dt, s, TimeNorm::L1, part, BlockKind::Plain),
        phi_dt_l2: cl_hat(&dphi_t, dt, s, TimeNorm::L2, part, BlockKind::Plain),
        phi_dt_grad_l2: cl_hat(&dphi_t, dt, s, TimeNorm::L2, part, BlockKind::Gradient),
        theta_linf: cl_hat(dtheta, dt, s, TimeNorm::LInf, part, BlockKind::Plain),
        theta_lap_l1: cl_hat(&lap, dt, s, TimeNorm::L1, part, BlockKind::Plain),
        theta_dt_l1: cl_hat(&dtheta_t, dt, s, TimeNorm::L1, part, BlockKind::Plain),
        sum: 0.0,
    };
    r.sum = r.summands().iter().sum();
    r
}

/// `‖(δφ, δθ)‖_𝒦` on a uniform time grid; time derivatives by finite differences.
pub fn k_norm(dphi: &[Field], dtheta: &[Field], part: &DyadicPartition, times: &[f64]) -> Result<KNormReport> {
    let dt = uniform_dt(times)?;
    if times.len() < 3 {
        return Err(Error::TimeGrid(format!(
            "the K norm needs at least 3 snapshots, got {}",
            times.len()
        )));
    }
    check_series(dphi, times, "dphi", part.grid())?;
    check_series(dtheta, times, "dtheta", part.grid())?;
    let f = part.fourier();
    Ok(k_norm_hat(&to_hats(f, dphi)?, &to_hats(f, dtheta)?, dt, part))
}

/// Left- over right-hand side of each a-priori inequality for the φ problem, with `C = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiEstimateRatios {
    /// `‖φ‖_{L̃^∞B^s} / (‖φ₀‖ + ‖g‖_{L¹B^s})`
    pub sup: f64,
    /// `α‖Δφ‖_{L̃^∞B^s} / (α‖Δφ₀‖ + ‖g‖_{L¹B^s})`
    pub damped: f64,
    /// `(ν‖Δ²φ‖_{L¹B^s} + ‖∂tφ‖_{L¹B^s}) / (‖φ₀‖ + α‖Δφ₀‖ + ‖g‖_{L¹B^s})`
    pub dissipation: f64,
    /// `(‖∂tφ‖_{L̃²B^s} + √α‖∂t∇φ‖_{L̃²B^s}) / (√ν‖Δφ₀‖ + ‖g‖_{L̃²B^{s−1}}/√α)`, only for `α > 0`.
    pub rate_l2: Option<f64>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Solves the φ problem and measures every a-priori inequality at `s = d/2`.
///
/// `∂tφ` is read off the equation, not differenced. The last inequality is
/// evaluated with `g` itself in `L̃²B^{s−1}`.
pub fn phi_estimate_ratios(
    g: &[Field],
    phi0: &Field,
    p: &ModelParams,
    times: &[f64],
    part: &DyadicPartition,
) -> Result<PhiEstimateRatios> {
    p.validate()?;
    let dt = uniform_dt(times)?;
    check_series(g, times, "phi forcing", part.grid())?;
    let f = part.fourier();
    let s = part.grid().dim() as f64 / 2.0;
    let nu = p.eps * p.theta_bar;
    let gh = to_hats(f, g)?;
    let h0 = part.transform(phi0)?;
    let sol = phi_solve_hat(f, &gh, h0.clone(), p, times);
    let rate: Vec<SpectralField> = sol
        .iter()
        .zip(&gh)
        .map(|(u, g)| {
            let mut out = u.clone();
            for ((z, &gz), &k2) in out.coeffs_mut().iter_mut().zip(g.coeffs()).zip(f.k_squared()) {
                *z = (gz - *z * (nu * k2 * k2)) / (1.0 + p.alpha * k2);
            }
            out
        })
        .collect();

    let besov = |h: &SpectralField, s: f64| -> f64 { part.blocks().map(|q| 2f64.powf(q as f64 * s) * part.block_norm(h, q)).sum() };
    let phi0_n = besov(&h0, s);
    let lap0_n = besov(&f.apply_radial(&h0, |k2| k2), s);
    let g_l1 = cl_hat(&gh, dt, s, TimeNorm::L1, part, BlockKind::Plain);

    let sup = cl_hat(&sol, dt, s, TimeNorm::LInf, part, BlockKind::Plain);
    let lap = cl_hat(&radial_series(f, &sol, |k2| k2), dt, s, TimeNorm::LInf, part, BlockKind::Plain);
    let bilap = cl_hat(&radial_series(f, &sol, |k2| k2 * k2), dt, s, TimeNorm::L1, part, BlockKind::Plain);
    let rate_l1 = cl_hat(&rate, dt, s, TimeNorm::L1, part, BlockKind::Plain);

    let rate_l2 = (p.alpha > 0.0).then(|| {
        let num = cl_hat(&rate, dt, s, TimeNorm::L2, part, BlockKind::Plain)
            + p.alpha.sqrt() * cl_hat(&rate, dt, s, TimeNorm::L2, part, BlockKind::Gradient);
        let den = nu.sqrt() * lap0_n + cl_hat(&gh, dt, s - 1.0, TimeNorm::L2, part, BlockKind::Plain) / p.alpha.sqrt();
        ratio(num, den)
    });

    Ok(PhiEstimateRatios {
        sup: ratio(sup, phi0_n + g_l1),
        damped: ratio(p.alpha * lap, p.alpha * lap0_n + g_l1),
        dissipation: ratio(nu * bilap + rate_l1, phi0_n + p.alpha * lap0_n + g_l1),
        rate_l2,
    })
}

/// `(k_B‖θ‖_{L̃^∞B^s} + κ‖Δθ‖_{L¹B^s} + k_B‖∂tθ‖_{L¹B^s}) / (k_B‖θ₀‖_{B^s} + ‖h‖_{L¹B^s})`.
pub fn theta_estimate_ratio(
    h: &[Field],
    theta0: &Field,
    p: &ModelParams,
    times: &[f64],
    s: f64,
    part: &DyadicPartition,
) -> Result<f64> {
    p.validate()?;
    let dt = uniform_dt(times)?;
    check_series(h, times, "theta forcing", part.grid())?;
    let f = part.fourier();
    let hh = to_hats(f, h)?;
    let h0 = part.transform(theta0)?;
    let sol = theta_solve_hat(f, &hh, h0.clone(), p, times);
    let rate: Vec<SpectralField> = sol
        .iter()
        .zip(&hh)
        .map(|(u, h)| {
            let mut out = u.clone();
            for ((z, &hz), &k2) in out.coeffs_mut().iter_mut().zip(h.coeffs()).zip(f.k_squared()) {
                *z = (hz - *z * (p.kappa * k2)) / p.k_b;
            }
            out
        })
        .collect();
    let theta0_n: f64 = part.blocks().map(|q| 2f64.powf(q as f64 * s) * part.block_norm(&h0, q)).sum();
    let lhs = p.k_b * cl_hat(&sol, dt, s, TimeNorm::LInf, part, BlockKind::Plain)
        + p.kappa * cl_hat(&radial_series(f, &sol, |k2| k2), dt, s, TimeNorm::L1, part, BlockKind::Plain)
        + p.k_b * cl_hat(&rate, dt, s, TimeNorm::L1, part, BlockKind::Plain);
    let rhs = p.k_b * theta0_n + cl_hat(&hh, dt, s, TimeNorm::L1, part, BlockKind::Plain);
    Ok(ratio(lhs, rhs))
}

fn default_chi() -> f64 {
    0.5
}
fn default_t_end() -> f64 {
    1e-2
}
fn default_n_iter() -> usize {
    8
}
fn default_tol() -> f64 {
    1e-10
}
fn default_steps() -> usize {
    100
}

/// Ball radius, horizon and stopping rules of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    #[serde(default = "default_chi")]
    pub chi: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    /// Stop once `‖X^{m+1} − X^m‖_𝒦` falls below this.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Time intervals on `[0, T]`.
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            chi: default_chi(),
            t_end: default_t_end(),
            n_iter: default_n_iter(),
            tol: default_tol(),
            steps: default_steps(),
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.chi.is_finite() && self.chi > 0.0) {
            return Err(Error::Config(format!("picard.chi must be positive, got {}", self.chi)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::Config(format!("picard.t_end must be positive, got {}", self.t_end)));
        }
        if self.n_iter < 2 {
            return Err(Error::Config(format!("picard.n_iter must be at least 2, got {}", self.n_iter)));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::Config(format!("picard.tol must be non-negative, got {}", self.tol)));
        }
        if self.steps < 2 {
            return Err(Error::Config(format!("picard.steps must be at least 2, got {}", self.steps)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }
}

/// The six `φ_L` norms bounded by `χ²` in the definition of `T_χ`, summed, on `[0, T]`.
pub fn phi_l_norm(phi0: &Field, p: &ModelParams, t_end: f64, steps: usize, part: &DyadicPartition) -> Result<f64> {
    let times = uniform_times(t_end, steps);
    let dt = uniform_dt(&times)?;
    let f = part.fourier();
    let s = part.grid().dim() as f64 / 2.0;
    let h0 = part.transform(phi0)?;
    let phl: Vec<SpectralField> = times
        .iter()
        .map(|&t| f.apply_radial(&h0, |k2| (-t * phi_rate(k2, p)).exp()))
        .collect();
    let rate = radial_series(f, &phl, |k2| -phi_rate(k2, p));
    let lap = radial_series(f, &phl, |k2| k2);
    let bilap = radial_series(f, &phl, |k2| k2 * k2);
    use BlockKind::*;
    use TimeNorm::*;
    Ok(cl_hat(&phl, dt, s, L2, part, Gradient)
        + cl_hat(&lap, dt, s, L2, part, Plain)
        + cl_hat(&bilap, dt, s, L1, part, Plain)
        + cl_hat(&lap, dt, s, L2, part, Gradient)
        + cl_hat(&rate, dt, s, L2, part, Plain)
        + cl_hat(&rate, dt, s, L2, part, Gradient))
}

/// Largest `T ∈ (0, 1]` with `phi_l_norm(T) ≤ χ²`, by bisection.
pub fn t_chi(phi0: &Field, p: &ModelParams, chi: f64, steps: usize, part: &DyadicPartition) -> Result<f64> {
    let target = chi * chi;
    if phi_l_norm(phi0, p, 1.0, steps, part)? <= target {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..T_CHI_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if phi_l_norm(phi0, p, mid, steps, part)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One line of `picard_report.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardRow {
    pub iteration: usize,
    pub k_norm: f64,
    /// `‖X^i − X^{i−1}‖_𝒦`, absent for the initial iterate.
    pub diff_norm: Option<f64>,
    /// `r_{i−1} = diff_i / diff_{i−1}`.
    pub ratio: Option<f64>,
    pub in_ball: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicardOutcome {
    Converged,
    Diverged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct PicardReport {
    pub rows: Vec<PicardRow>,
    pub outcome: PicardOutcome,
    pub chi: f64,
    pub t_end: f64,
    pub t_chi: f64,
    pub phi_l_norm: f64,
    /// Final-time fields of the last iterate.
    pub phi_final: Field,
    pub theta_final: Field,
    /// `‖φ_Picard(T) − φ_A2(T)‖ / ‖φ_A2(T)‖`; absent when the direct run fails.
    pub a2_relative_l2: Option<f64>,
}

impl PicardReport {
    pub fn all_in_ball(&self) -> bool {
        self.rows.iter().all(|r| r.in_ball)
    }

    /// `(m, r_m)` for every measured successive-difference ratio.
    pub fn contraction_ratios(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.ratio.map(|v| (r.iteration - 1, v)))
            .collect()
    }

    pub fn to_csv(&self, smallness: Option<&SmallnessReport>) -> String {
        let mut out = String::new();
        if let Some(s) = smallness {
            for line in s.summary().lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        let _ = writeln!(
            out,
            "# chi={:e} T={:e} T_chi={:e} phi_L_norm={:e} outcome={:?}",
            self.chi, self.t_end, self.t_chi, self.phi_l_norm, self.outcome
        );
        if let Some(e) = self.a2_relative_l2 {
            let _ = writeln!(out, "# a2_relative_l2={e:e}");
        }
        out.push_str("iteration,k_norm,diff_norm,ratio,in_ball\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{},{},{}",
                r.iteration,
                r.k_norm,
                opt(r.diff_norm),
                opt(r.ratio),
                r.in_ball
            );
        }
        out
    }
}

/// Backward differences, zero at the first sample.
fn backward_rates(series: &[Field], dt: f64) -> Vec<Field> {
    let g = *series[0].grid();
    std::iter::once(Field::zeros(g))
        .chain(series.windows(2).map(|w| w[1].sub(&w[0]).scale(1.0 / dt)))
        .collect()
}

/// `𝓛(δφ, δθ)` in spectral form.
#[allow(clippy::too_many_arguments)]
fn apply_l(
    f: &Fourier,
    ft: &Fourier,
    phi_l: &[Field],
    dphi: &[SpectralField],
    dtheta: &[SpectralField],
    dtheta0: &SpectralField,
    p: &ModelParams,
    times: &[f64],
    dt: f64,
) -> Result<(Vec<SpectralField>, Vec<SpectralField>)> {
    let phi: Vec<Field> = phi_l
        .iter()
        .zip(dphi)
        .map(|(l, d)| ft.inverse(d).map(|d| l.add(&d)))
        .collect::<Result<_>>()?;
    let theta: Vec<Field> = dtheta
        .iter()
        .map(|d| ft.inverse(d).map(|d| d.map(|v| v + p.theta_bar)))
        .collect::<Result<_>>()?;
    let phi_t = backward_rates(&phi, dt);
    let theta_t = backward_rates(&theta, dt);
    let mut g = Vec::with_capacity(times.len());
    let mut h = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let state = ThermoState {
            phi: phi[i].clone(),
            theta: theta[i].clone(),
            dphi_dt: None,
            dtheta_dt: Some(theta_t[i].clone()),
        };
        thermo::check_temperature(&state.theta)?;
        let phi_hat = f.transform(&state.phi)?;
        g.push(model_a2::rhs_f1_hat(f, &phi_hat, &state, p)?);
        let raw = model_a2::rhs_f2_grid(f, &state, &phi_t[i], p)?;
        h.push(f.project(f.transform(&raw)?));
    }
    let zero = SpectralField::zeros(*ft.grid());
    Ok((phi_solve_hat(ft, &g, zero, p, times), theta_solve_hat(ft, &h, dtheta0.clone(), p, times)))
}

fn sub_series(a: &[SpectralField], b: &[SpectralField]) -> Vec<SpectralField> {
    a.iter().zip(b).map(|(x, y)| combine(x, y, 1.0, -1.0)).collect()
}

/// Iterates `X^{m+1} = 𝓛(X^m)` from `X^0 = (0, heat flow of δθ₀)` and measures contraction.
///
/// Divergence after [`DIVERGENCE_STREAK`] ratios `≥ 1` is an outcome, not an error.
/// The fixed point is compared with a direct A2 run at step `T/steps`.
pub fn picard_iterate(
    phi0: &Field,
    theta0: &Field,
    p: &ModelParams,
    cfg: &PicardConfig,
    part: &DyadicPartition,
) -> Result<PicardReport> {
    cfg.validate()?;
    p.validate()?;
    let grid = *part.grid();
    if *phi0.grid() != grid || *theta0.grid() != grid {
        return Err(Error::GridMismatch(format!(
            "initial data on {} and {}, partition built for {}",
            phi0.grid(),
            theta0.grid(),
            grid
        )));
    }
    thermo::check_temperature(theta0)?;
    let p = ModelParams { model: Model::A2, ..*p };
    let times = uniform_times(cfg.t_end, cfg.steps);
    let dt = cfg.dt();
    let f = Fourier::new(grid);
    let ft = part.fourier();

    let phi_l = free_evolution(phi0, &p, &times)?;
    let dtheta0 = ft.transform(&theta0.map(|v| v - p.theta_bar))?;
    let zeros = vec![SpectralField::zeros(grid); times.len()];
    let mut dphi = zeros.clone();
    let mut dtheta = theta_solve_hat(ft, &zeros, dtheta0.clone(), &p, &times);

    let norm0 = k_norm_hat(&dphi, &dtheta, dt, part).sum;
    let mut rows = vec![PicardRow {
        iteration: 0,
        k_norm: norm0,
        diff_norm: None,
        ratio: None,
        in_ball: norm0 <= cfg.chi,
    }];
    let mut outcome = PicardOutcome::MaxIterations;
    let mut prev_diff: Option<f64> = None;
    let mut streak = 0;
    for it in 1..=cfg.n_iter {
        let (nphi, ntheta) = apply_l(&f, ft, &phi_l, &dphi, &dtheta, &dtheta0, &p, &times, dt)?;
        let diff = k_norm_hat(&sub_series(&nphi, &dphi), &sub_series(&ntheta, &dtheta), dt, part).sum;
        let norm = k_norm_hat(&nphi, &ntheta, dt, part).sum;
        let ratio = prev_diff.filter(|&d| d > 0.0).map(|d| diff / d);
        rows.push(PicardRow {
            iteration: it,
            k_norm: norm,
            diff_norm: Some(diff),
            ratio,
            in_ball: norm <= cfg.chi,
        });
        dphi = nphi;
        dtheta = ntheta;
        if !diff.is_finite() {
            outcome = PicardOutcome::Diverged;
            break;
        }
        if diff <= cfg.tol.max(ROUNDOFF_REL * norm) {
            outcome = PicardOutcome::Converged;
            break;
        }
        streak = if ratio.is_some_and(|r| r >= 1.0) { streak + 1 } else { 0 };
        if streak >= DIVERGENCE_STREAK {
            outcome = PicardOutcome::Diverged;
            break;
        }
        prev_diff = Some(diff);
    }

    let last = times.len() - 1;
    let phi_final = phi_l[last].add(&ft.inverse(&dphi[last])?);
    let theta_final = ft.inverse(&dtheta[last])?.map(|v| v + p.theta_bar);

    let mut sim = SimConfig::new(grid, p, dt, cfg.t_end);
    sim.output_every = cfg.steps;
    let init = ThermoState::new(phi0.clone(), theta0.clone())?.at_rest();
    let a2_relative_l2 = match model_a2::simulate(&sim, init) {
        Ok(traj) if traj.completed() => {
            let direct = &traj.last().phi;
            Some(phi_final.sub(direct).l2_norm() / direct.l2_norm().max(1e-300))
        }
        _ => None,
    };

    Ok(PicardReport {
        rows,
        outcome,
        chi: cfg.chi,
        t_end: cfg.t_end,
        t_chi: t_chi(phi0, &p, cfg.chi, cfg.steps, part)?,
        phi_l_norm: phi_l_norm(phi0, &p, cfg.t_end, cfg.steps, part)?,
        phi_final,
        theta_final,
        a2_relative_l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::littlewood_paley::{build_partition, calibrate};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;
    use std::f64::consts::TAU;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(2, n, TAU).unwrap()
    }

    fn params() -> ModelParams {
        ModelParams {
            eps: 0.5,
            theta_bar: 2.0,
            alpha: 0.3,
            kappa: 1.5,
            k_b: 0.8,
            ..Default::default()
        }
    }

    fn max_diff(a: &Field, b: &Field) -> f64 {
        a.sub(b).max_abs()
    }

    #[test]
    fn free_evolution_identity_and_mean() {
        let g = grid(16);
        let p = params();
        let phi0 = Field::from_fn(g, |x| 0.3 + (x[0] + x[1]).sin() + 0.2 * (3.0 * x[1]).cos());
        let times = uniform_times(0.5, 5);
        let out = free_evolution(&phi0, &p, &times).unwrap();
        assert!(max_diff(&out[0], &phi0) < 1e-14);
        for f in &out {
            assert!((f.mean() - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn free_evolution_single_mode_is_scalar_exponential() {
        let g = grid(16);
        let p = params();
        let phi0 = Field::from_fn(g, |x| (2.0 * x[0] + x[1]).cos());
        let times = uniform_times(0.2, 4);
        let out = free_evolution(&phi0, &p, &times).unwrap();
        let lam = phi_rate(5.0, &p);
        for (f, &t) in out.iter().zip(&times) {
            assert!(max_diff(f, &phi0.scale((-lam * t).exp())) < 1e-14);
        }
    }

    #[test]
    fn phi_solve_without_forcing_is_free_evolution() {
        let g = grid(16);
        let p = params();
        let phi0 = Field::from_fn(g, |x| x[0].sin() * (2.0 * x[1]).cos());
        let times = uniform_times(0.1, 7);
        let zero = vec![Field::zeros(g); times.len()];
        let a = linear_phi_solve(&zero, &phi0, &p, &times).unwrap();
        let b = free_evolution(&phi0, &p, &times).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(max_diff(x, y) < 1e-14);
        }
    }

    #[test]
    fn phi_solve_constant_forcing_matches_scalar_ode() {
        // (1+α)ȧ = −ν a + G on the mode cos x
        let g = grid(16);
        let p = params();
        let nu = p.eps * p.theta_bar;
        let (a0, big_g) = (0.4, 1.3);
        let phi0 = Field::from_fn(g, |x| a0 * x[0].cos());
        let forcing = Field::from_fn(g, |x| big_g * x[0].cos());
        let times = uniform_times(0.3, 6);
        let out = linear_phi_solve(&vec![forcing; times.len()], &phi0, &p, &times).unwrap();
        let lam = nu / (1.0 + p.alpha);
        for (f, &t) in out.iter().zip(&times) {
            let amp = big_g / nu + (a0 - big_g / nu) * (-lam * t).exp();
            let exact = Field::from_fn(g, |x| amp * x[0].cos());
            assert!(max_diff(f, &exact) < 1e-12);
        }
    }

    #[test]
    fn theta_solve_heat_decay_and_steady_state() {
        let g = grid(16);
        let p = params();
        let theta0 = Field::from_fn(g, |x| (x[0] - x[1]).cos());
        let times = uniform_times(0.4, 8);
        let zero = vec![Field::zeros(g); times.len()];
        let out = linear_theta_solve(&zero, &theta0, &p, &times).unwrap();
        let lam = p.kappa * 2.0 / p.k_b;
        for (f, &t) in out.iter().zip(&times) {
            assert!(max_diff(f, &theta0.scale((-lam * t).exp())) < 1e-14);
        }

        let h = Field::from_fn(g, |x| 2.0 * x[1].sin());
        let steady = h.scale(1.0 / p.kappa);
        let times = uniform_times(6.0, 30);
        let out = linear_theta_solve(&vec![h; times.len()], &Field::zeros(g), &p, &times).unwrap();
        let gaps: Vec<f64> = out.iter().map(|f| max_diff(f, &steady)).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]));
        assert!(gaps.last().unwrap() < &1e-3);
    }

    #[test]
    fn solvers_reject_bad_time_grids() {
        let g = grid(8);
        let p = params();
        let f = Field::zeros(g);
        assert!(matches!(free_evolution(&f, &p, &[0.0]), Err(Error::TimeGrid(_))));
        assert!(matches!(free_evolution(&f, &p, &[0.0, 0.2, 0.1]), Err(Error::TimeGrid(_))));
        let times = uniform_times(1.0, 4);
        let short = vec![Field::zeros(g); 3];
        assert!(matches!(linear_phi_solve(&short, &f, &p, &times), Err(Error::TimeGrid(_))));
        assert!(matches!(linear_theta_solve(&short, &f, &p, &times), Err(Error::TimeGrid(_))));
    }

    #[test]
    fn k_norm_zero_scaling_and_snapshot_count() {
        let g = grid(16);
        let part = build_partition(g);
        let times = uniform_times(0.1, 4);
        let z = vec![Field::zeros(g); times.len()];
        assert_eq!(k_norm(&z, &z, &part, &times).unwrap().sum, 0.0);

        let dphi: Vec<Field> = times
            .iter()
            .map(|&t| Field::from_fn(g, |x| (1.0 + t) * (x[0] + 2.0 * x[1]).sin()))
            .collect();
        let dtheta: Vec<Field> = times
            .iter()
            .map(|&t| Field::from_fn(g, |x| t * t * (3.0 * x[0]).cos()))
            .collect();
        let base = k_norm(&dphi, &dtheta, &part, &times).unwrap();
        for c in [-2.5, 0.3, 7.0] {
            let sp: Vec<Field> = dphi.iter().map(|f| f.scale(c)).collect();
            let st: Vec<Field> = dtheta.iter().map(|f| f.scale(c)).collect();
            let r = k_norm(&sp, &st, &part, &times).unwrap();
            assert!((r.sum - c.abs() * base.sum).abs() < 1e-10 * base.sum);
        }
        assert!((base.summands().iter().sum::<f64>() - base.sum).abs() < 1e-15 * base.sum);
        assert!(base.summands().iter().all(|&v| v >= 0.0));

        let t2 = uniform_times(0.1, 1);
        assert!(matches!(k_norm(&dphi[..2], &dtheta[..2], &part, &t2), Err(Error::TimeGrid(_))));
    }

    #[test]
    fn k_norm_time_constant_theta_by_hand() {
        let g = grid(16);
        let part = build_partition(g);
        let times = uniform_times(0.2, 5);
        let th = Field::from_fn(g, |x| x[0].cos() + 0.5 * (4.0 * x[1]).sin());
        let dtheta = vec![th.clone(); times.len()];
        let dphi = vec![Field::zeros(g); times.len()];
        let r = k_norm(&dphi, &dtheta, &part, &times).unwrap();
        let b = littlewood_paley::besov_norm(&th, 1.0, &part).unwrap().norm;
        let f = part.fourier();
        let lap = f.d(&th, crate::grid::Derivative::Laplacian).unwrap().scale(-1.0);
        let bl = littlewood_paley::besov_norm(&lap, 1.0, &part).unwrap().norm;
        assert!((r.theta_linf - b).abs() < 1e-12 * b);
        assert!((r.theta_lap_l1 - 0.2 * bl).abs() < 1e-12 * bl);
        assert!(r.theta_dt_l1.abs() < 1e-10);
        assert!((r.sum - b - 0.2 * bl).abs() < 1e-10 * b);
    }

    fn random_series(g: GridSpec, times: &[f64], rng: &mut Xoshiro256PlusPlus) -> Vec<Field> {
        let a = thermo::smooth_direction(g, rng);
        let b = thermo::smooth_direction(g, rng);
        let w = rng.random_range(1.0..20.0);
        times.iter().map(|&t| a.add(&b.scale((w * t).cos()))).collect()
    }

    #[test]
    fn a_priori_constants_hold_out() {
        let g = grid(32);
        let part = build_partition(g);
        let p = params();
        let times = uniform_times(0.2, 40);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let mut runs = Vec::new();
        for _ in 0..20 {
            let gs = random_series(g, &times, &mut rng);
            let phi0 = thermo::smooth_direction(g, &mut rng);
            let r = phi_estimate_ratios(&gs, &phi0, &p, &times, &part).unwrap();
            let t = theta_estimate_ratio(&gs, &phi0, &p, &times, 1.0, &part).unwrap();
            runs.push([r.sup, r.damped, r.dissipation, r.rate_l2.unwrap(), t]);
        }
        let (cal, hold) = runs.split_at(10);
        for j in 0..5 {
            let c = calibrate(cal.iter().map(|r| r[j]));
            assert!(c.is_finite() && c > 0.0);
            assert!(hold.iter().all(|r| r[j] <= c), "estimate {j}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(PicardConfig::default().validate().is_ok());
        let bad = [
            PicardConfig { chi: 0.0, ..Default::default() },
            PicardConfig { t_end: -1.0, ..Default::default() },
            PicardConfig { n_iter: 1, ..Default::default() },
            PicardConfig { steps: 1, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn stationary_data_is_a_fixed_point() {
        let g = grid(16);
        let part = build_partition(g);
        let p = params();
        let phi0 = Field::constant(g, 0.2);
        let theta0 = Field::constant(g, p.theta_bar);
        let cfg = PicardConfig {
            steps: 10,
            ..Default::default()
        };
        let r = picard_iterate(&phi0, &theta0, &p, &cfg, &part).unwrap();
        assert_eq!(r.outcome, PicardOutcome::Converged);
        assert!(r.rows.len() <= 3);
        assert!(r.rows.last().unwrap().diff_norm.unwrap() < cfg.tol);
        assert!(r.a2_relative_l2.unwrap() < 1e-12);
        assert!(r.to_csv(None).contains("iteration,k_norm,diff_norm,ratio,in_ball"));
    }

    #[test]
    fn t_chi_is_monotone_in_chi() {
        let g = grid(16);
        let part = build_partition(g);
        let p = params();
        let phi0 = Field::from_fn(g, |x| 0.05 * x[0].cos());
        let a = t_chi(&phi0, &p, 0.1, 20, &part).unwrap();
        let b = t_chi(&phi0, &p, 0.3, 20, &part).unwrap();
        assert!(a <= b && a > 0.0);
        assert!(phi_l_norm(&phi0, &p, a, 20, &part).unwrap() <= 0.01 * (1.0 + 1e-9));
    }
}
