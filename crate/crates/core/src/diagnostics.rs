//! Thermodynamic audits of simulated states.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{self, Field, Fourier, GridSpec};
use crate::model_a1;
use crate::model_a2::Trajectory;
use crate::thermo::{self, Model, ModelParams, ThermoState};

/// One line of `diagnostics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub t: f64,
    /// `∫φ`.
    pub mass: f64,
    pub e_tot: f64,
    /// `|E(t) − E(0)| / max(|E(0)|, 1e−30)`.
    pub e_drift_rel: f64,
    pub min_theta: f64,
    pub min_entropy_production: f64,
    /// L² norm of the discrete Clausius–Duhem residual; 0 on the initial row.
    pub cd_residual_l2: f64,
    /// A1 runs only.
    pub reg_delta: Option<f64>,
}

pub const CSV_HEADER: &str = "step,t,mass,E_tot,E_drift_rel,min_theta,min_entropy_production,cd_residual_l2";

impl DiagnosticsRow {
    pub fn csv_header(a1: bool) -> String {
        if a1 {
            format!("{CSV_HEADER},reg_delta")
        } else {
            CSV_HEADER.to_string()
        }
    }

    /// Fixed-format CSV line; shortest round-trip float formatting keeps reruns byte-identical.
    pub fn to_csv(&self) -> String {
        let mut line = format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step,
            self.t,
            self.mass,
            self.e_tot,
            self.e_drift_rel,
            self.min_theta,
            self.min_entropy_production,
            self.cd_residual_l2
        );
        if let Some(d) = self.reg_delta {
            let _ = write!(line, ",{d:e}");
        }
        line
    }
}

pub fn rows_to_csv(rows: &[DiagnosticsRow]) -> String {
    let a1 = rows.first().is_some_and(|r| r.reg_delta.is_some());
    let mut out = DiagnosticsRow::csv_header(a1);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Audits states of one run against the energy of its initial state.
#[derive(Debug, Clone)]
pub struct Auditor {
    fourier: Fourier,
    params: ModelParams,
    e0: f64,
}

impl Auditor {
    pub fn new(f: &Fourier, p: &ModelParams, init: &ThermoState) -> Result<Self> {
        Ok(Self {
            fourier: f.clone(),
            params: *p,
            e0: thermo::total_energy(f, init, p)?,
        })
    }

    pub fn initial_energy(&self) -> f64 {
        self.e0
    }

    fn base_row(&self, step: usize, t: f64, s: &ThermoState) -> Result<DiagnosticsRow> {
        let f = &self.fourier;
        let p = &self.params;
        let e = thermo::total_energy(f, s, p)?;
        let mu = thermo::chemical_potential(f, s, p)?;
        let prod = thermo::entropy_production(f, s, &mu, p)?;
        Ok(DiagnosticsRow {
            step,
            t,
            mass: s.phi.integral(),
            e_tot: e,
            e_drift_rel: (e - self.e0).abs() / self.e0.abs().max(1e-30),
            min_theta: s.theta.min().1,
            min_entropy_production: prod.min().1,
            cd_residual_l2: 0.0,
            reg_delta: (p.model == Model::A1).then_some(p.a1_reg),
        })
    }

    pub fn audit_initial(&self, s: &ThermoState) -> Result<DiagnosticsRow> {
        self.base_row(0, 0.0, s)
    }

    /// Row for `curr`, reached from `prev` in one step of size `dt`.
    pub fn audit(&self, step: usize, t: f64, prev: &ThermoState, curr: &ThermoState, dt: f64) -> Result<DiagnosticsRow> {
        let mut row = self.base_row(step, t, curr)?;
        row.cd_residual_l2 = clausius_duhem_residual(&self.fourier, prev, curr, dt, &self.params)?.l2_norm();
        Ok(row)
    }
}

/// `θ(s(curr) − s(prev))/dt + θ div(q/θ) − θΔ*` with `q = −κ∇θ`, all at `curr`.
/// For A1 the transport term `θ div(u s)` is added to the rate.
pub fn clausius_duhem_residual(
    f: &Fourier,
    prev: &ThermoState,
    curr: &ThermoState,
    dt: f64,
    p: &ModelParams,
) -> Result<Field> {
    if prev.phi.grid() != curr.phi.grid() {
        return Err(Error::GridMismatch(format!(
            "previous state on {}, current on {}",
            prev.phi.grid(),
            curr.phi.grid()
        )));
    }
    let th = &curr.theta;
    let s_prev = thermo::entropy_density(f, prev, p)?;
    let s_curr = thermo::entropy_density(f, curr, p)?;
    let rate = s_curr.sub(&s_prev).scale(1.0 / dt);
    let q_over_theta: Vec<Field> = f
        .gradient(th)?
        .iter()
        .map(|g| g.zip_map(th, |gi, t| -p.kappa * gi / t))
        .collect();
    let div_q = f.divergence(&q_over_theta)?;
    let mu = thermo::chemical_potential(f, curr, p)?;
    let prod = thermo::entropy_production(f, curr, &mu, p)?;
    let mut lhs = rate.add(&div_q);
    if p.model == Model::A1 {
        let u = model_a1::a1_velocity(f, curr, &mu, p, p.a1_reg)?;
        let us: Vec<Field> = u.iter().map(|c| c.mul(&s_curr)).collect();
        lhs = lhs.add(&f.divergence(&us)?);
    }
    Ok(lhs.mul(th).sub(&prod))
}

/// Outcome of the Ginzburg–Landau monotonicity audit.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub non_increasing: bool,
    /// First step whose energy exceeds its predecessor by more than the tolerance.
    pub first_violation: Option<(usize, f64)>,
    pub max_increase: f64,
    pub steps_checked: usize,
}

/// Allowed energy increase per step.
pub const DECAY_TOLERANCE: f64 = 1e-10;

/// Checks that the recorded Ginzburg–Landau energies never increase beyond [`DECAY_TOLERANCE`].
///
/// Uses the per-step record of an isothermal run, or recomputes it from the
/// snapshots when no per-step record exists.
pub fn isothermal_decay_check(traj: &Trajectory, p: &ModelParams) -> Result<DecayReport> {
    let energies = if traj.gl_energy.is_empty() {
        let f = Fourier::new(*traj.last().phi.grid());
        traj.states
            .iter()
            .map(|s| thermo::ginzburg_landau_energy(&f, &s.phi, p))
            .collect::<Result<Vec<_>>>()?
    } else {
        traj.gl_energy.clone()
    };
    Ok(decay_report(&energies))
}

pub fn decay_report(energies: &[f64]) -> DecayReport {
    let mut first_violation = None;
    let mut max_increase = f64::NEG_INFINITY;
    for (i, w) in energies.windows(2).enumerate() {
        let inc = w[1] - w[0];
        max_increase = max_increase.max(inc);
        if inc > DECAY_TOLERANCE && first_violation.is_none() {
            first_violation = Some((i + 1, inc));
        }
    }
    DecayReport {
        non_increasing: first_violation.is_none(),
        first_violation,
        max_increase: if energies.len() < 2 { 0.0 } else { max_increase },
        steps_checked: energies.len().saturating_sub(1),
    }
}

/// Parameters of the Caginalp phase-field system
///
/// ```text
/// τ ∂tφ = ξ² Δ(δW/δφ),   W = ξ²|∇φ|²/2 + (φ² − 1)²/(8a) − 2θφ
/// ∂tθ + (l/2) ∂tφ = k Δθ
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaginalpParams {
    pub tau: f64,
    pub xi: f64,
    pub a: f64,
    pub l: f64,
    pub k: f64,
}

impl Default for CaginalpParams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            xi: 0.1,
            a: 0.5,
            l: 2.0,
            k: 1.0,
        }
    }
}

/// Integrates the Caginalp system with the same IMEX structure and records
/// `∫ e = ∫ ξ²|∇φ|²/2 + (φ² − 1)²/(8a)` at each output time.
pub fn caginalp_energy_history(
    grid: GridSpec,
    phi0: &Field,
    theta0: &Field,
    c: &CaginalpParams,
    dt: f64,
    steps: usize,
    every: usize,
) -> Result<Vec<(f64, f64)>> {
    let f = Fourier::new(grid);
    let energy = |phi: &Field| -> Result<f64> {
        let g2 = grid::norm_sq(&f.gradient(phi)?);
        Ok(phi
            .zip_map(&g2, |v, gg| c.xi * c.xi * gg / 2.0 + (v * v - 1.0).powi(2) / (8.0 * c.a))
            .integral())
    };
    let xi2 = c.xi * c.xi;
    let mut phi = phi0.clone();
    let mut theta = theta0.clone();
    let mut out = vec![(0.0, energy(&phi)?)];
    for n in 1..=steps {
        // δW/δφ = −ξ²Δφ + φ(φ² − 1)/(2a) − 2θ; the −ξ²Δφ part is implicit.
        let bulk = phi.zip_map(&theta, |v, t| v * (v * v - 1.0) / (2.0 * c.a) - 2.0 * t);
        let bulk_hat = f.project(f.transform(&bulk)?);
        let mut ph = f.transform(&phi)?;
        for ((z, &k2), &b) in ph.coeffs_mut().iter_mut().zip(f.k_squared()).zip(bulk_hat.coeffs()) {
            *z = (*z * c.tau - b * (dt * xi2 * k2)) / (c.tau + dt * xi2 * xi2 * k2 * k2);
        }
        let phi_new = f.inverse(&ph)?;
        phi_new.check_finite("phi")?;
        let dphi = phi_new.sub(&phi).scale(1.0 / dt);
        let src = f.transform(&dphi.scale(-c.l / 2.0))?;
        let mut th = f.transform(&theta)?;
        for ((z, &k2), &s) in th.coeffs_mut().iter_mut().zip(f.k_squared()).zip(src.coeffs()) {
            *z = (*z + s * dt) / (1.0 + dt * c.k * k2);
        }
        theta = f.inverse(&th)?;
        phi = phi_new;
        if n % every == 0 || n == steps {
            out.push((n as f64 * dt, energy(&phi)?));
        }
    }
    Ok(out)
}

/// Text report of the Caginalp energy history.
pub fn caginalp_demo_report(history: &[(f64, f64)]) -> String {
    let mut out = String::from(
        "# Caginalp system: e = W + theta s = xi^2 |grad phi|^2 / 2 + (phi^2 - 1)^2 / (8a)\n# t E\n",
    );
    for (t, e) in history {
        let _ = writeln!(out, "{t:.6e} {e:.12e}");
    }
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        let change = (last.1 - first.1) / first.1.abs().max(1e-30);
        let _ = writeln!(out, "# relative change of total energy: {change:.6e} (not conserved)");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_a2::{simulate, Coupling, SimConfig};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;
    use std::f64::consts::PI;

    fn params() -> ModelParams {
        ModelParams {
            eps: 0.2,
            theta_bar: 3.0,
            alpha: 0.5,
            ..ModelParams::default()
        }
    }

    #[test]
    fn stationary_pure_phase_audits_clean() {
        let g = GridSpec::new(2, 16, 2.0 * PI).unwrap();
        let f = Fourier::new(g);
        let p = params();
        let s = ThermoState::new(Field::constant(g, 1.0), Field::constant(g, p.theta_bar)).unwrap().at_rest();
        let a = Auditor::new(&f, &p, &s).unwrap();
        let row = a.audit(1, 0.1, &s, &s, 0.1).unwrap();
        assert!(row.cd_residual_l2 <= 1e-12);
        assert_eq!(row.e_drift_rel, 0.0);
        assert!(row.min_entropy_production.abs() <= 1e-12);
        assert!((row.mass - s.phi.mean() * g.volume()).abs() < 1e-14 * g.volume());
    }

    #[test]
    fn mass_matches_mean_times_volume() {
        let g = GridSpec::new(2, 32, 3.0).unwrap();
        let f = Fourier::new(g);
        let p = params();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let phi = Field::new(g, (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let s = ThermoState::new(phi, Field::constant(g, 2.0)).unwrap().at_rest();
        let row = Auditor::new(&f, &p, &s).unwrap().audit_initial(&s).unwrap();
        assert!((row.mass - s.phi.mean() * g.volume()).abs() <= 1e-14 * g.volume().max(1.0));
    }

    #[test]
    fn pure_heat_residual_shrinks_with_dt() {
        let g = GridSpec::new(1, 32, 2.0 * PI).unwrap();
        let p = params();
        let mut last = f64::INFINITY;
        for dt in [4e-3, 2e-3, 1e-3] {
            let init = ThermoState::new(Field::zeros(g), Field::from_fn(g, |x| p.theta_bar + 0.2 * x[0].cos())).unwrap();
            let mut cfg = SimConfig::new(g, p, dt, 0.04);
            cfg.coupling = Coupling::FrozenPhi;
            cfg.output_every = 1_000_000;
            let traj = simulate(&cfg, init).unwrap();
            let r = traj.diagnostics.last().unwrap().cd_residual_l2;
            assert!(r < last, "{r} !< {last}");
            last = r;
        }
    }

    #[test]
    fn csv_rows_are_stable() {
        let row = DiagnosticsRow {
            step: 3,
            t: 0.25,
            mass: -1.5,
            e_tot: 2.0,
            e_drift_rel: 0.0,
            min_theta: 1.0,
            min_entropy_production: 0.0,
            cd_residual_l2: 1e-7,
            reg_delta: None,
        };
        assert_eq!(row.to_csv(), "3,2.5e-1,-1.5e0,2e0,0e0,1e0,0e0,1e-7");
        let csv = rows_to_csv(&[row]);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(DiagnosticsRow::csv_header(true), format!("{CSV_HEADER},reg_delta"));
    }

    #[test]
    fn decay_report_names_first_violation() {
        let r = decay_report(&[3.0, 2.0, 2.0, 2.5, 1.0]);
        assert!(!r.non_increasing);
        assert_eq!(r.first_violation, Some((3, 0.5)));
        assert!(decay_report(&[1.0, 1.0 + 1e-11, 0.5]).non_increasing);
        assert!(decay_report(&[1.0]).non_increasing);
    }

    #[test]
    fn isothermal_stationary_trajectory() {
        let g = GridSpec::new(2, 16, 2.0 * PI).unwrap();
        let p = ModelParams { alpha: 0.0, ..params() };
        let init = ThermoState::new(Field::constant(g, 1.0), Field::constant(g, p.theta_bar)).unwrap();
        let mut cfg = SimConfig::new(g, p, 1e-3, 0.1);
        cfg.coupling = Coupling::FrozenTheta;
        let traj = simulate(&cfg, init).unwrap();
        assert_eq!(traj.gl_energy.len(), 101);
        assert!(isothermal_decay_check(&traj, &p).unwrap().non_increasing);
    }

    #[test]
    fn adversarial_step_is_reported() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let p = ModelParams { alpha: 0.0, eps: 0.05, theta_bar: 1.0, ..params() };
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        let phi = Field::new(g, (0..g.len()).map(|_| rng.random_range(-0.9..0.9)).collect()).unwrap();
        let init = ThermoState::new(phi, Field::constant(g, p.theta_bar)).unwrap();
        let mut cfg = SimConfig::new(g, p, 0.5, 5.0);
        cfg.coupling = Coupling::FrozenTheta;
        let traj = simulate(&cfg, init).unwrap();
        let report = if traj.completed() {
            isothermal_decay_check(&traj, &p).unwrap()
        } else {
            decay_report(&traj.gl_energy)
        };
        if let Some((step, inc)) = report.first_violation {
            assert!(step >= 1 && inc > DECAY_TOLERANCE);
        }
    }

    #[test]
    fn caginalp_energy_is_not_conserved() {
        let g = GridSpec::new(2, 32, 2.0 * PI).unwrap();
        let phi0 = Field::from_fn(g, |x| 0.5 * x[0].sin() * x[1].cos());
        let theta0 = Field::from_fn(g, |x| 0.1 * x[1].sin());
        let hist = caginalp_energy_history(g, &phi0, &theta0, &CaginalpParams::default(), 1e-3, 500, 100).unwrap();
        let (e0, e1) = (hist[0].1, hist.last().unwrap().1);
        assert!((e1 - e0).abs() > 1e-3 * e0.abs());
        assert!(caginalp_demo_report(&hist).contains("not conserved"));
    }
}
