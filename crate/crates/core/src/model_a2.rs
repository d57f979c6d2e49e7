//! IMEX pseudospectral integrator for the A2 system
//!
//! ```text
//! ∂tφ − αΔ∂tφ + εθ̄Δ²φ = f̃1(φ, θ)
//! k_B ∂tθ − κΔθ        = f̃2(φ, θ)
//! ```
//!
//! The constant-coefficient operators are implicit per Fourier mode; the
//! forcings are explicit. φ is advanced first and the fresh `∂tφ` feeds `f̃2`.

use crate::diagnostics::{Auditor, DiagnosticsRow};
use crate::error::{Error, Result};
use crate::grid::{self, Field, Fourier, GridSpec, SpectralField};
use crate::model_a1;
use crate::thermo::{self, Model, ModelParams, ThermoState};

/// Which equations are advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coupling {
    /// Both φ and θ evolve.
    #[default]
    Full,
    /// θ is held at its initial value (isothermal Cahn–Hilliard).
    FrozenTheta,
    /// φ is held fixed and θ obeys pure conduction `k_B ∂tθ = κΔθ`.
    FrozenPhi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub grid: GridSpec,
    pub params: ModelParams,
    pub dt: f64,
    pub t_end: f64,
    pub output_every: usize,
    pub dealias: bool,
    pub coupling: Coupling,
}

/// Largest accepted time step.
pub const DT_CAP: f64 = 0.5;

impl SimConfig {
    pub fn new(grid: GridSpec, params: ModelParams, dt: f64, t_end: f64) -> Self {
        Self {
            grid,
            params,
            dt,
            t_end,
            output_every: 1,
            dealias: true,
            coupling: Coupling::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.dt > DT_CAP {
            return Err(Error::Config(format!("dt must not exceed {DT_CAP}, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.dt) {
            return Err(Error::Config(format!(
                "t_end must be at least dt = {}, got {}",
                self.dt, self.t_end
            )));
        }
        if self.output_every == 0 {
            return Err(Error::Config("output_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Snapshots and audit rows of one run.
#[derive(Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    pub states: Vec<ThermoState>,
    pub diagnostics: Vec<DiagnosticsRow>,
    /// Ginzburg–Landau energy after every step; filled for isothermal runs only.
    pub gl_energy: Vec<f64>,
    /// Why the run stopped early, together with the last accepted state.
    pub failure: Option<(Error, ThermoState)>,
}

impl Trajectory {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn last(&self) -> &ThermoState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// `f̂1 = −|k|² P[μ] + εθ̄|k|⁴ φ̂`, i.e. `Δμ + εθ̄Δ²φ` with `μ` in divergence form.
pub(crate) fn rhs_f1_hat(
    f: &Fourier,
    phi_hat: &SpectralField,
    s: &ThermoState,
    p: &ModelParams,
) -> Result<SpectralField> {
    let mu = f.project(thermo::chemical_potential_grid_hat(f, phi_hat, &s.phi, &s.theta, p)?);
    let et = p.eps * p.theta_bar;
    let mut out = mu;
    for ((z, &k2), &ph) in out.coeffs_mut().iter_mut().zip(f.k_squared()).zip(phi_hat.coeffs()) {
        *z = *z * (-k2) + ph * (et * k2 * k2);
    }
    Ok(out)
}

/// Explicit φ forcing `f̃1` (the stiff `εθ̄Δ²φ` part excluded).
pub fn rhs_f1(f: &Fourier, s: &ThermoState, p: &ModelParams) -> Result<Field> {
    thermo::check_temperature(&s.theta)?;
    let phi_hat = f.transform(&s.phi)?;
    f.inverse(&rhs_f1_hat(f, &phi_hat, s, p)?)
}

/// Pieces shared by the A1 and A2 temperature forcings.
pub(crate) struct ThetaForcing {
    /// `α(∂tφ)² + εθ∇∂tφ·∇φ − θ(∂_φB ∂tφ + ∂_θB ∂tθ)`.
    pub(crate) exchange: Field,
    pub(crate) grad_mu: Vec<Field>,
    pub(crate) grad_dphi: Vec<Field>,
    pub(crate) grad_phi: Vec<Field>,
}

pub(crate) fn theta_forcing_parts(
    f: &Fourier,
    s: &ThermoState,
    dphi_dt: &Field,
    p: &ModelParams,
) -> Result<ThetaForcing> {
    thermo::check_temperature(&s.theta)?;
    let dtheta = s.dtheta_dt()?;
    let phi_hat = f.transform(&s.phi)?;
    let grad_phi = f.gradient_hat(&phi_hat)?;
    let grad_dphi = f.gradient(dphi_dt)?;
    let mu_hat = f.project(thermo::chemical_potential_grid_hat(f, &phi_hat, &s.phi, &s.theta, p)?);
    let grad_mu = f.gradient_hat(&mu_hat)?;
    let cross = grid::dot(&grad_dphi, &grad_phi);
    let g = *s.phi.grid();
    let vals = (0..g.len())
        .map(|i| {
            let (ph, th, dp, dth) = (s.phi.values()[i], s.theta.values()[i], dphi_dt.values()[i], dtheta.values()[i]);
            let b = thermo::entropy_bracket(ph, th, p);
            p.alpha * dp * dp + p.eps * th * cross.values()[i] - th * (b.db_dphi * dp + b.db_dtheta * dth)
        })
        .collect();
    Ok(ThetaForcing {
        exchange: Field::from_vec_unchecked(g, vals),
        grad_mu,
        grad_dphi,
        grad_phi,
    })
}

pub(crate) fn rhs_f2_grid(f: &Fourier, s: &ThermoState, dphi_dt: &Field, p: &ModelParams) -> Result<Field> {
    let parts = theta_forcing_parts(f, s, dphi_dt, p)?;
    let flux: Vec<Field> = parts
        .grad_mu
        .iter()
        .zip(&parts.grad_dphi)
        .map(|(m, d)| m.zip_map(d, |a, b| a + p.alpha * b))
        .collect();
    Ok(parts.exchange.add(&grid::norm_sq(&flux)))
}

/// Explicit θ forcing `f̃2` with the time derivative of the entropy bracket
/// expanded by the chain rule; needs `s.dtheta_dt`.
pub fn rhs_f2(f: &Fourier, s: &ThermoState, dphi_dt: &Field, p: &ModelParams) -> Result<Field> {
    let raw = rhs_f2_grid(f, s, dphi_dt, p)?;
    f.inverse(&f.project(f.transform(&raw)?))
}

/// Implicit φ solve: `[(1+α|k|²) + Δt εθ̄|k|⁴] φ̂' = (1+α|k|²) φ̂ + Δt ĝ`.
pub(crate) fn phi_implicit(f: &Fourier, phi_hat: &SpectralField, g_hat: &SpectralField, p: &ModelParams, dt: f64) -> SpectralField {
    let et = p.eps * p.theta_bar;
    let mut out = phi_hat.clone();
    for ((z, &k2), &g) in out.coeffs_mut().iter_mut().zip(f.k_squared()).zip(g_hat.coeffs()) {
        if k2 == 0.0 {
            continue;
        }
        let m = 1.0 + p.alpha * k2;
        *z = (*z * m + g * dt) / (m + dt * et * k2 * k2);
    }
    out
}

/// Implicit θ solve: `[k_B + Δt κ|k|²] θ̂' = k_B θ̂ + Δt ĥ`.
pub(crate) fn theta_implicit(f: &Fourier, theta_hat: &SpectralField, h_hat: &SpectralField, p: &ModelParams, dt: f64) -> SpectralField {
    let mut out = theta_hat.clone();
    for ((z, &k2), &h) in out.coeffs_mut().iter_mut().zip(f.k_squared()).zip(h_hat.coeffs()) {
        *z = (*z * p.k_b + h * dt) / (p.k_b + dt * p.kappa * k2);
    }
    out
}

pub(crate) fn finish_theta(f: &Fourier, theta: &Field, forcing: &Field, p: &ModelParams, dt: f64) -> Result<(Field, Field)> {
    let h_hat = f.project(f.transform(forcing)?);
    let theta_new = f.inverse(&theta_implicit(f, &f.transform(theta)?, &h_hat, p, dt))?;
    theta_new.check_finite("theta")?;
    thermo::check_temperature(&theta_new)?;
    let rate = theta_new.sub(theta).scale(1.0 / dt);
    Ok((theta_new, rate))
}

fn rates_or_zero(s: &ThermoState) -> (Field, Field) {
    let g = *s.phi.grid();
    (
        s.dphi_dt.clone().unwrap_or_else(|| Field::zeros(g)),
        s.dtheta_dt.clone().unwrap_or_else(|| Field::zeros(g)),
    )
}

/// One A2 step with every equation active.
pub fn imex_step(f: &Fourier, s: &ThermoState, p: &ModelParams, dt: f64) -> Result<ThermoState> {
    imex_step_with(f, s, p, dt, Coupling::Full)
}

pub fn imex_step_with(f: &Fourier, s: &ThermoState, p: &ModelParams, dt: f64, coupling: Coupling) -> Result<ThermoState> {
    thermo::check_temperature(&s.theta)?;
    let (_, lag) = rates_or_zero(s);
    let g = *s.phi.grid();

    let (phi_new, dphi) = if coupling == Coupling::FrozenPhi {
        (s.phi.clone(), Field::zeros(g))
    } else {
        let phi_hat = f.transform(&s.phi)?;
        let f1 = rhs_f1_hat(f, &phi_hat, s, p)?;
        let phi_new = f.inverse(&phi_implicit(f, &phi_hat, &f1, p, dt))?;
        phi_new.check_finite("phi")?;
        let dphi = phi_new.sub(&s.phi).scale(1.0 / dt);
        (phi_new, dphi)
    };

    let (theta_new, dtheta) = match coupling {
        Coupling::FrozenTheta => (s.theta.clone(), Field::zeros(g)),
        Coupling::FrozenPhi => finish_theta(f, &s.theta, &Field::zeros(g), p, dt)?,
        Coupling::Full => {
            let mid = ThermoState {
                phi: phi_new.clone(),
                theta: s.theta.clone(),
                dphi_dt: None,
                dtheta_dt: Some(lag),
            };
            let forcing = rhs_f2_grid(f, &mid, &dphi, p)?;
            finish_theta(f, &s.theta, &forcing, p, dt)?
        }
    };

    Ok(ThermoState {
        phi: phi_new,
        theta: theta_new,
        dphi_dt: Some(dphi),
        dtheta_dt: Some(dtheta),
    })
}

/// Advances one step of whichever model `p` selects.
pub fn step(f: &Fourier, s: &ThermoState, p: &ModelParams, dt: f64, coupling: Coupling) -> Result<ThermoState> {
    match p.model {
        Model::A2 => imex_step_with(f, s, p, dt, coupling),
        Model::A1 => model_a1::a1_step_with(f, s, p, dt, p.a1_reg, coupling),
    }
}

fn positivity(e: Error, step: usize, t: f64) -> Error {
    match e {
        Error::NonPositiveTemperature { location, value, .. } => Error::Positivity {
            step,
            t,
            location,
            value,
        },
        other => other,
    }
}

/// Time-marches `init` to `cfg.t_end`, keeping every `output_every`-th state.
///
/// Numerical failures end the run early; the trajectory then carries the
/// error and the last accepted state.
pub fn simulate(cfg: &SimConfig, init: ThermoState) -> Result<Trajectory> {
    cfg.validate()?;
    if *init.phi.grid() != cfg.grid || *init.theta.grid() != cfg.grid {
        return Err(Error::GridMismatch(format!(
            "initial data on {}, configured grid {}",
            init.phi.grid(),
            cfg.grid
        )));
    }
    thermo::check_temperature(&init.theta)?;
    let f = Fourier::new(cfg.grid).with_dealias(cfg.dealias);
    let p = &cfg.params;
    let (dphi, dtheta) = rates_or_zero(&init);
    let mut state = init.with_rates(dphi, dtheta);
    let auditor = Auditor::new(&f, p, &state)?;
    let isothermal = cfg.coupling == Coupling::FrozenTheta;

    let mut traj = Trajectory {
        times: vec![0.0],
        steps: vec![0],
        states: vec![state.clone()],
        diagnostics: vec![auditor.audit_initial(&state)?],
        gl_energy: Vec::new(),
        failure: None,
    };
    if isothermal {
        traj.gl_energy.push(thermo::ginzburg_landau_energy(&f, &state.phi, p)?);
    }

    for n in 1..=cfg.steps() {
        let t = n as f64 * cfg.dt;
        let advanced = step(&f, &state, p, cfg.dt, cfg.coupling).and_then(|next| {
            let gl = if isothermal {
                Some(thermo::ginzburg_landau_energy(&f, &next.phi, p)?)
            } else {
                None
            };
            let row = if n % cfg.output_every == 0 || n == cfg.steps() {
                Some(auditor.audit(n, t, &state, &next, cfg.dt)?)
            } else {
                None
            };
            Ok((next, gl, row))
        });
        let (next, gl, row) = match advanced {
            Ok(v) => v,
            Err(e) if e.is_numerical() => {
                traj.failure = Some((positivity(e, n, t), state));
                return Ok(traj);
            }
            Err(e) => return Err(e),
        };
        traj.gl_energy.extend(gl);
        if let Some(row) = row {
            traj.times.push(t);
            traj.steps.push(n);
            traj.states.push(next.clone());
            traj.diagnostics.push(row);
        }
        state = next;
    }
    Ok(traj)
}
