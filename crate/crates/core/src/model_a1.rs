//! Experimental A1 variant: temperature transported by the phase velocity.
//!
//! ```text
//! ∂tφ − αΔ∂tφ        = Δμ + div(s∇θ/φ)
//! θ(∂ts + div(u s))  = θ div(κ∇θ/θ) + θΔ*
//! u = −(∇μ + α∇∂tφ + s∇θ/φ)/φ
//! ```
//!
//! Every `1/φ` is replaced by `φ/(φ² + δ²)`. With `δ = 0` the exact reciprocal
//! is used and a zero of φ on the grid is an error.

use crate::error::{Error, Result};
use crate::grid::{self, Field, Fourier};
use crate::model_a2::{self, Coupling};
use crate::thermo::{self, ModelParams, ThermoState};

/// Smallest accepted `∂s/∂θ` before the temperature update is declared singular.
pub const HEAT_CAPACITY_FLOOR: f64 = 1e-10;

fn check_reg(reg: f64) -> Result<()> {
    if !(reg.is_finite() && reg >= 0.0) {
        return Err(Error::InvalidArgument(format!("regularization must be >= 0, got {reg}")));
    }
    Ok(())
}

/// `s∇θ/φ` component-wise, with the regularized reciprocal.
fn entropy_drift(f: &Fourier, s: &ThermoState, p: &ModelParams, reg: f64) -> Result<Vec<Field>> {
    check_reg(reg)?;
    let inv = thermo::reciprocal(&s.phi, reg)?;
    let coeff = thermo::entropy_density(f, s, p)?.mul(&inv);
    Ok(f.gradient(&s.theta)?.iter().map(|g| g.mul(&coeff)).collect())
}

/// `div(s∇θ/φ)`, dealiased when the transform context asks for it.
pub fn a1_coupling_flux(f: &Fourier, s: &ThermoState, p: &ModelParams, reg: f64) -> Result<Field> {
    let drift = entropy_drift(f, s, p, reg)?;
    f.inverse(&f.project(f.divergence_hat(&drift)?))
}

/// `P = −∇μ − α∇∂tφ − s∇θ/φ`, the flux with `∂tφ = −div P`.
fn flux(f: &Fourier, s: &ThermoState, mu: &Field, p: &ModelParams, reg: f64) -> Result<Vec<Field>> {
    let dphi = s.dphi_dt()?;
    let drift = entropy_drift(f, s, p, reg)?;
    let grad_mu = f.gradient(mu)?;
    let grad_dphi = f.gradient(dphi)?;
    Ok(grad_mu
        .iter()
        .zip(&grad_dphi)
        .zip(&drift)
        .map(|((m, d), e)| {
            let vals = m
                .values()
                .iter()
                .zip(d.values())
                .zip(e.values())
                .map(|((a, b), c)| -(a + p.alpha * b + c))
                .collect();
            Field::from_vec_unchecked(*m.grid(), vals)
        })
        .collect())
}

/// Phase velocity `u = P/φ` (regularized reciprocal); needs `s.dphi_dt`.
pub fn a1_velocity(f: &Fourier, s: &ThermoState, mu: &Field, p: &ModelParams, reg: f64) -> Result<Vec<Field>> {
    let inv = thermo::reciprocal(&s.phi, reg)?;
    Ok(flux(f, s, mu, p, reg)?.iter().map(|c| c.mul(&inv)).collect())
}

/// One A1 step with every equation active.
pub fn a1_step(f: &Fourier, s: &ThermoState, p: &ModelParams, dt: f64, reg: f64) -> Result<ThermoState> {
    a1_step_with(f, s, p, dt, reg, Coupling::Full)
}

pub fn a1_step_with(
    f: &Fourier,
    s: &ThermoState,
    p: &ModelParams,
    dt: f64,
    reg: f64,
    coupling: Coupling,
) -> Result<ThermoState> {
    check_reg(reg)?;
    thermo::check_temperature(&s.theta)?;
    let g = *s.phi.grid();
    let lag = s.dtheta_dt.clone().unwrap_or_else(|| Field::zeros(g));

    let (phi_new, dphi) = if coupling == Coupling::FrozenPhi {
        (s.phi.clone(), Field::zeros(g))
    } else {
        let phi_hat = f.transform(&s.phi)?;
        let drift = entropy_drift(f, s, p, reg)?;
        let forcing = model_a2::rhs_f1_hat(f, &phi_hat, s, p)?.add(&f.project(f.divergence_hat(&drift)?));
        let phi_new = f.inverse(&model_a2::phi_implicit(f, &phi_hat, &forcing, p, dt))?;
        phi_new.check_finite("phi")?;
        let dphi = phi_new.sub(&s.phi).scale(1.0 / dt);
        (phi_new, dphi)
    };

    let (theta_new, dtheta) = match coupling {
        Coupling::FrozenTheta => (s.theta.clone(), Field::zeros(g)),
        Coupling::FrozenPhi => model_a2::finish_theta(f, &s.theta, &Field::zeros(g), p, dt)?,
        Coupling::Full => {
            let mid = ThermoState {
                phi: phi_new.clone(),
                theta: s.theta.clone(),
                dphi_dt: Some(dphi.clone()),
                dtheta_dt: Some(lag),
            };
            check_heat_capacity(&mid, p)?;
            let parts = model_a2::theta_forcing_parts(f, &mid, &dphi, p)?;
            let mu = f.inverse(&f.project(thermo::chemical_potential_grid_hat(
                f,
                &f.transform(&mid.phi)?,
                &mid.phi,
                &mid.theta,
                p,
            )?))?;
            let big_p = flux(f, &mid, &mu, p, reg)?;
            let inv = thermo::reciprocal(&mid.phi, reg)?;
            let ent = thermo::entropy_from_parts(&mid.phi, &mid.theta, &grid::norm_sq(&parts.grad_phi), p);
            let transport: Vec<Field> = big_p.iter().map(|c| c.mul(&inv).mul(&ent)).collect();
            let div_us = f.divergence(&transport)?;
            let forcing = parts
                .exchange
                .add(&grid::norm_sq(&big_p))
                .sub(&mid.theta.mul(&div_us));
            model_a2::finish_theta(f, &s.theta, &forcing, p, dt)?
        }
    };

    Ok(ThermoState {
        phi: phi_new,
        theta: theta_new,
        dphi_dt: Some(dphi),
        dtheta_dt: Some(dtheta),
    })
}

/// Aborts when `∂s/∂θ = ∂_θB + k_B/θ` drops to [`HEAT_CAPACITY_FLOOR`] anywhere.
fn check_heat_capacity(s: &ThermoState, p: &ModelParams) -> Result<()> {
    for (i, (&ph, &th)) in s.phi.values().iter().zip(s.theta.values()).enumerate() {
        let c = thermo::entropy_bracket(ph, th, p).db_dtheta + p.k_b / th;
        if c <= HEAT_CAPACITY_FLOOR {
            return Err(Error::HeatCapacityLoss {
                location: s.phi.grid().describe(i),
                value: c,
            });
        }
    }
    Ok(())
}
