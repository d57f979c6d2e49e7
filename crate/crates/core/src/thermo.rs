//! Constitutive relations of the temperature-dependent Cahn–Hilliard free energy
//!
//! ```text
//! ψ(φ, ∇φ, θ) = (εθ/2)|∇φ|² + W(φ, θ)/(εθ) − k_B θ ln θ
//! W(φ, θ)     = (φ² − 1)²/4 + c(θ) φ²,      c(θ) = (θ − θ̄)³/3
//! ```
//!
//! together with the entropy `s = −∂ψ/∂θ`, the internal energy `e = ψ + θ s`,
//! the chemical potential `μ = δψ/δφ` (divergence form) and the entropy
//! production of both temperature-transport assumptions.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Field, Fourier, SpectralField};

/// Which temperature-transport assumption closes the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Temperature transported by the phase-field velocity.
    A1,
    /// Temperature fixed to the background.
    A2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub eps: f64,
    pub theta_bar: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub k_b: f64,
    pub model: Model,
    /// Regularization `δ` of the A1 reciprocal `1/φ ≈ φ/(φ² + δ²)`.
    pub a1_reg: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            eps: 0.03,
            theta_bar: 10.0,
            alpha: 0.0,
            kappa: 1.0,
            k_b: 1.0,
            model: Model::A2,
            a1_reg: 1e-2,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps", self.eps),
            ("theta_bar", self.theta_bar),
            ("kappa", self.kappa),
            ("k_b", self.k_b),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("a1_reg", self.a1_reg)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Temperature-dependent interface coefficient `ε̃(θ) = εθ`.
    pub fn eps_theta(&self, theta: f64) -> f64 {
        self.eps * theta
    }

    /// `c(θ) = (θ − θ̄)³/3`.
    pub fn c(&self, theta: f64) -> f64 {
        (theta - self.theta_bar).powi(3) / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BulkPotential {
    pub w: f64,
    pub dw_dphi: f64,
    pub dw_dtheta: f64,
}

pub fn bulk_potential(phi: f64, theta: f64, p: &ModelParams) -> Result<BulkPotential> {
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("bulk potential needs theta > 0, got {theta}")));
    }
    Ok(bulk(phi, theta, p))
}

#[inline]
fn bulk(phi: f64, theta: f64, p: &ModelParams) -> BulkPotential {
    let d = theta - p.theta_bar;
    let c = d * d * d / 3.0;
    let phi2 = phi * phi;
    BulkPotential {
        w: (phi2 - 1.0) * (phi2 - 1.0) / 4.0 + c * phi2,
        dw_dphi: (phi2 - 1.0) * phi + 2.0 * c * phi,
        dw_dtheta: d * d * phi2,
    }
}

/// The `(φ, θ)` part of the entropy, `B = W/(εθ²) − ∂_θW/(εθ)`, with its partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyBracket {
    pub b: f64,
    pub db_dphi: f64,
    pub db_dtheta: f64,
}

#[inline]
pub fn entropy_bracket(phi: f64, theta: f64, p: &ModelParams) -> EntropyBracket {
    let BulkPotential {
        w,
        dw_dphi,
        dw_dtheta,
    } = bulk(phi, theta, p);
    let e = p.eps;
    let d = theta - p.theta_bar;
    EntropyBracket {
        b: w / (e * theta * theta) - dw_dtheta / (e * theta),
        db_dphi: dw_dphi / (e * theta * theta) - 2.0 * d * d * phi / (e * theta),
        db_dtheta: 2.0 * dw_dtheta / (e * theta * theta)
            - 2.0 * w / (e * theta * theta * theta)
            - 2.0 * d * phi * phi / (e * theta),
    }
}

/// Phase field and temperature at one instant, plus the latest discrete rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoState {
    pub phi: Field,
    pub theta: Field,
    pub dphi_dt: Option<Field>,
    pub dtheta_dt: Option<Field>,
}

impl ThermoState {
    pub fn new(phi: Field, theta: Field) -> Result<Self> {
        if phi.grid() != theta.grid() {
            return Err(Error::GridMismatch(format!(
                "phi on {}, theta on {}",
                phi.grid(),
                theta.grid()
            )));
        }
        check_temperature(&theta)?;
        phi.check_finite("phi")?;
        Ok(Self {
            phi,
            theta,
            dphi_dt: None,
            dtheta_dt: None,
        })
    }

    /// Same state with zero time-derivative caches.
    pub fn at_rest(mut self) -> Self {
        let g = *self.phi.grid();
        self.dphi_dt = Some(Field::zeros(g));
        self.dtheta_dt = Some(Field::zeros(g));
        self
    }

    pub fn with_rates(mut self, dphi_dt: Field, dtheta_dt: Field) -> Self {
        self.dphi_dt = Some(dphi_dt);
        self.dtheta_dt = Some(dtheta_dt);
        self
    }

    pub fn dphi_dt(&self) -> Result<&Field> {
        self.dphi_dt.as_ref().ok_or(Error::MissingCache("dphi_dt"))
    }

    pub fn dtheta_dt(&self) -> Result<&Field> {
        self.dtheta_dt.as_ref().ok_or(Error::MissingCache("dtheta_dt"))
    }
}

/// Hard floor check: every sample of `theta` finite and strictly positive.
pub fn check_temperature(theta: &Field) -> Result<()> {
    theta.check_finite("theta")?;
    let (i, v) = theta.min();
    if v <= 0.0 {
        return Err(Error::NonPositiveTemperature {
            what: "theta".into(),
            location: theta.grid().describe(i),
            value: v,
        });
    }
    Ok(())
}

fn zip3(a: &Field, b: &Field, c: &Field, f: impl Fn(f64, f64, f64) -> f64) -> Field {
    let vals = a
        .values()
        .iter()
        .zip(b.values())
        .zip(c.values())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Field::from_vec_unchecked(*a.grid(), vals)
}

pub fn free_energy_density(f: &Fourier, s: &ThermoState, p: &ModelParams) -> Result<Field> {
    check_temperature(&s.theta)?;
    let grad2 = grid::norm_sq(&f.gradient(&s.phi)?);
    Ok(zip3(&s.phi, &s.theta, &grad2, |phi, th, g2| {
        let et = p.eps * th;
        et / 2.0 * g2 + bulk(phi, th, p).w / et - p.k_b * th * th.ln()
    }))
}

pub fn entropy_density(f: &Fourier, s: &ThermoState, p: &ModelParams) -> Result<Field> {
    check_temperature(&s.theta)?;
    let grad2 = grid::norm_sq(&f.gradient(&s.phi)?);
    Ok(entropy_from_parts(&s.phi, &s.theta, &grad2, p))
}

pub(crate) fn entropy_from_parts(phi: &Field, theta: &Field, grad2: &Field, p: &ModelParams) -> Field {
    zip3(phi, theta, grad2, |phi, th, g2| {
        -p.eps / 2.0 * g2 + entropy_bracket(phi, th, p).b + p.k_b * (1.0 + th.ln())
    })
}

pub fn internal_energy_density(f: &Fourier, s: &ThermoState, p: &ModelParams) -> Result<Field> {
    let psi = free_energy_density(f, s, p)?;
    let ent = entropy_density(f, s, p)?;
    Ok(zip3(&psi, &s.theta, &ent, |psi, th, ent| psi + th * ent))
}

/// `E^tot = ∫ e dx`.
pub fn total_energy(f: &Fourier, s: &ThermoState, p: &ModelParams) -> Result<f64> {
    Ok(internal_energy_density(f, s, p)?.integral())
}

/// Ginzburg–Landau energy `∫ (εθ̄/2)|∇φ|² + W(φ, θ̄)/(εθ̄)` of the isothermal model.
pub fn ginzburg_landau_energy(f: &Fourier, phi: &Field, p: &ModelParams) -> Result<f64> {
    let et = p.eps * p.theta_bar;
    let grad2 = grid::norm_sq(&f.gradient(phi)?);
    Ok(phi
        .zip_map(&grad2, |ph, g2| et / 2.0 * g2 + bulk(ph, p.theta_bar, p).w / et)
        .integral())
}

/// `μ = −div(εθ∇φ) + ∂_φW/(εθ)` assembled on the grid, without dealiasing.
pub(crate) fn chemical_potential_grid_hat(
    f: &Fourier,
    phi_hat: &SpectralField,
    phi: &Field,
    theta: &Field,
    p: &ModelParams,
) -> Result<SpectralField> {
    let grad = f.gradient_hat(phi_hat)?;
    let flux: Vec<Field> = grad
        .iter()
        .map(|g| g.zip_map(theta, |gi, th| p.eps * th * gi))
        .collect();
    let div = f.divergence_hat(&flux)?;
    let bulk_term = phi.zip_map(theta, |ph, th| bulk(ph, th, p).dw_dphi / (p.eps * th));
    Ok(f.transform(&bulk_term)?.add(&div.scale(-1.0)))
}

/// Chemical potential in Fourier space, projected by the two-thirds rule when enabled.
pub fn chemical_potential_hat(f: &Fourier, s: &ThermoState, p: &ModelParams) -> Result<SpectralField> {
    check_temperature(&s.theta)?;
    let phi_hat = f.transform(&s.phi)?;
    Ok(f.project(chemical_potential_grid_hat(f, &phi_hat, &s.phi, &s.theta, p)?))
}

pub fn chemical_potential(f: &Fourier, s: &ThermoState, p: &ModelParams) -> Result<Field> {
    f.inverse(&chemical_potential_hat(f, s, p)?)
}

/// Regularized reciprocal of the phase field used by the A1 coupling.
///
/// With `reg > 0` returns `φ/(φ² + reg²)`; with `reg == 0` returns `1/φ` and
/// fails on any exact zero of `φ`.
pub fn reciprocal(phi: &Field, reg: f64) -> Result<Field> {
    if reg > 0.0 {
        let r2 = reg * reg;
        return Ok(phi.map(|v| v / (v * v + r2)));
    }
    if let Some(i) = phi.values().iter().position(|&v| v == 0.0) {
        return Err(Error::Singularity {
            location: phi.grid().describe(i),
        });
    }
    Ok(phi.map(|v| 1.0 / v))
}

/// Pointwise entropy production `θΔ*` for the model selected in `p`.
///
/// A2: `|∇μ + α∇∂tφ|² + α|∂tφ|² + κ|∇θ|²/θ`;
/// A1: `|∇μ + α∇∂tφ + s∇θ/φ|² + α|∂tφ|² + κ|∇θ|²/θ` with `1/φ` regularized by `a1_reg`.
pub fn entropy_production(f: &Fourier, s: &ThermoState, mu: &Field, p: &ModelParams) -> Result<Field> {
    check_temperature(&s.theta)?;
    let dphi = s.dphi_dt()?;
    let grad_mu = f.gradient(mu)?;
    let grad_dphi = f.gradient(dphi)?;
    let grad_theta = f.gradient(&s.theta)?;
    let mut flux: Vec<Field> = grad_mu
        .iter()
        .zip(&grad_dphi)
        .map(|(gm, gd)| gm.zip_map(gd, |a, b| a + p.alpha * b))
        .collect();
    if p.model == Model::A1 {
        let inv = reciprocal(&s.phi, p.a1_reg)?;
        let ent = entropy_density(f, s, p)?;
        let coeff = ent.mul(&inv);
        for (fl, gt) in flux.iter_mut().zip(&grad_theta) {
            *fl = zip3(fl, &coeff, gt, |a, c, g| a + c * g);
        }
    }
    let flux2 = grid::norm_sq(&flux);
    let gt2 = grid::norm_sq(&grad_theta);
    let heat = gt2.zip_map(&s.theta, |g2, th| p.kappa * g2 / th);
    Ok(zip3(&flux2, dphi, &heat, |f2, d, h| f2 + p.alpha * d * d + h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalReport {
    pub step: f64,
    /// `max |s + ∂θψ|` with `∂θψ` by centered differences.
    pub entropy_residual: f64,
    /// `max_v |⟨μ, v⟩ − dΨ[φ; v]|` over the test directions.
    pub chemical_potential_residual: f64,
    /// `max |∂t e − μ ∂tφ − div(∂_{∇φ}ψ ∂tφ) − θ ∂t s|` along one step.
    pub energy_rate_residual: f64,
}

impl VariationalReport {
    pub fn to_csv(&self) -> String {
        format!(
            "identity,residual,step\nentropy,{:e},{:e}\nchemical_potential,{:e},{:e}\nenergy_rate,{:e},{:e}\n",
            self.entropy_residual,
            self.step,
            self.chemical_potential_residual,
            self.step,
            self.energy_rate_residual,
            self.step
        )
    }
}

/// Number of random test directions in [`verify_variational_identities`].
pub const TEST_DIRECTIONS: usize = 5;

/// Smooth random field made of the lowest few Fourier modes.
pub(crate) fn smooth_direction(g: grid::GridSpec, rng: &mut Xoshiro256PlusPlus) -> Field {
    let dk = g.dk();
    let mut terms = Vec::new();
    for _ in 0..4 {
        let mut k = [0.0; 3];
        for kk in k.iter_mut().take(g.dim()) {
            *kk = rng.random_range(-2i32..=2) as f64 * dk;
        }
        terms.push((k, rng.random_range(-1.0..1.0), rng.random_range(0.0..std::f64::consts::TAU)));
    }
    Field::from_fn(g, |x| {
        terms
            .iter()
            .map(|(k, a, ph)| a * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + ph).cos())
            .sum()
    })
}

/// Checks `s = −∂ψ/∂θ`, `μ = δΨ/δφ` and the pointwise energy-rate identity by
/// centered finite differences with step `h_step`.
pub fn verify_variational_identities(
    f: &Fourier,
    s: &ThermoState,
    p: &ModelParams,
    h_step: f64,
) -> Result<VariationalReport> {
    if !(1e-7..=1e-3).contains(&h_step) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {h_step}"
        )));
    }
    let shifted = |dphi: Option<(&Field, f64)>, dtheta: Option<(&Field, f64)>| -> Result<ThermoState> {
        let phi = match dphi {
            Some((v, c)) => s.phi.zip_map(v, |a, b| a + c * b),
            None => s.phi.clone(),
        };
        let theta = match dtheta {
            Some((w, c)) => s.theta.zip_map(w, |a, b| a + c * b),
            None => s.theta.clone(),
        };
        ThermoState::new(phi, theta)
    };

    // s = −∂ψ/∂θ, pointwise.
    let ones = Field::constant(*s.phi.grid(), 1.0);
    let psi_p = free_energy_density(f, &shifted(None, Some((&ones, h_step)))?, p)?;
    let psi_m = free_energy_density(f, &shifted(None, Some((&ones, -h_step)))?, p)?;
    let ent = entropy_density(f, s, p)?;
    let entropy_residual = zip3(&ent, &psi_p, &psi_m, |e, a, b| e + (a - b) / (2.0 * h_step)).max_abs();

    // μ = δΨ/δφ along smooth directions.
    let mu = chemical_potential(f, s, p)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x5eed_0001);
    let mut chemical_potential_residual: f64 = 0.0;
    for _ in 0..TEST_DIRECTIONS {
        let v = smooth_direction(*s.phi.grid(), &mut rng);
        let big_p = free_energy_density(f, &shifted(Some((&v, h_step)), None)?, p)?.integral();
        let big_m = free_energy_density(f, &shifted(Some((&v, -h_step)), None)?, p)?.integral();
        let (_, pair) = grid::mean_and_inner(&mu, &v)?;
        chemical_potential_residual =
            chemical_potential_residual.max((pair - (big_p - big_m) / (2.0 * h_step)).abs());
    }

    // ∂t e = μ ∂tφ + div(εθ∇φ ∂tφ) + θ ∂t s along (v, w).
    let v = smooth_direction(*s.phi.grid(), &mut rng);
    let w = smooth_direction(*s.phi.grid(), &mut rng).scale(0.1);
    let plus = shifted(Some((&v, h_step)), Some((&w, h_step)))?;
    let minus = shifted(Some((&v, -h_step)), Some((&w, -h_step)))?;
    let de = internal_energy_density(f, &plus, p)?
        .sub(&internal_energy_density(f, &minus, p)?)
        .scale(1.0 / (2.0 * h_step));
    let ds = entropy_density(f, &plus, p)?
        .sub(&entropy_density(f, &minus, p)?)
        .scale(1.0 / (2.0 * h_step));
    let phi_hat = f.transform(&s.phi)?;
    let mu_grid = f.inverse(&chemical_potential_grid_hat(f, &phi_hat, &s.phi, &s.theta, p)?)?;
    let grad = f.gradient_hat(&phi_hat)?;
    let flux: Vec<Field> = grad
        .iter()
        .map(|g| zip3(g, &s.theta, &v, |gi, th, vi| p.eps * th * gi * vi))
        .collect();
    let div = f.divergence(&flux)?;
    let rhs = zip3(&mu_grid, &v, &div, |m, vi, dv| m * vi + dv).add(&s.theta.mul(&ds));
    let energy_rate_residual = de.sub(&rhs).max_abs();

    Ok(VariationalReport {
        step: h_step,
        entropy_residual,
        chemical_potential_residual,
        energy_rate_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use std::f64::consts::PI;

    fn params() -> ModelParams {
        ModelParams {
            eps: 0.7,
            theta_bar: 2.0,
            alpha: 0.3,
            kappa: 1.3,
            k_b: 0.8,
            model: Model::A2,
            a1_reg: 0.0,
        }
    }

    fn grid2() -> GridSpec {
        GridSpec::new(2, 32, 2.0 * PI).unwrap()
    }

    fn smooth_state(seed: u64, p: &ModelParams) -> ThermoState {
        let g = grid2();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let phi = smooth_direction(g, &mut rng).scale(0.5);
        let th = smooth_direction(g, &mut rng).scale(0.2).map(|v| p.theta_bar + v);
        ThermoState::new(phi, th).unwrap()
    }

    #[test]
    fn bulk_potential_values() {
        let p = params();
        let b = bulk_potential(1.0, p.theta_bar, &p).unwrap();
        assert_eq!((b.w, b.dw_dphi, b.dw_dtheta), (0.0, 0.0, 0.0));
        let b = bulk_potential(0.0, 3.7, &p).unwrap();
        assert_eq!((b.w, b.dw_dphi, b.dw_dtheta), (0.25, 0.0, 0.0));
        for tb in [0.5, 2.0, 40.0] {
            let q = ModelParams { theta_bar: tb, ..p };
            let b = bulk_potential(0.5, tb + 1.0, &q).unwrap();
            assert!((b.w - 0.2239583333333333).abs() < 1e-15);
            let h = 1e-6;
            let fd_phi = (bulk(0.5 + h, tb + 1.0, &q).w - bulk(0.5 - h, tb + 1.0, &q).w) / (2.0 * h);
            let fd_th = (bulk(0.5, tb + 1.0 + h, &q).w - bulk(0.5, tb + 1.0 - h, &q).w) / (2.0 * h);
            assert!((b.dw_dphi - fd_phi).abs() < 1e-9);
            assert!((b.dw_dtheta - fd_th).abs() < 1e-9);
        }
        assert!(bulk_potential(0.1, 0.0, &p).is_err());
        assert!(bulk_potential(0.1, -1.0, &p).is_err());
    }

    #[test]
    fn entropy_bracket_partials_match_differences() {
        let p = params();
        let h = 1e-6;
        for &(ph, th) in &[(0.3, 1.1), (-0.9, 2.5), (1.2, 4.0)] {
            let b = entropy_bracket(ph, th, &p);
            let dphi = (entropy_bracket(ph + h, th, &p).b - entropy_bracket(ph - h, th, &p).b) / (2.0 * h);
            let dth = (entropy_bracket(ph, th + h, &p).b - entropy_bracket(ph, th - h, &p).b) / (2.0 * h);
            assert!((b.db_dphi - dphi).abs() < 1e-8, "{} {}", b.db_dphi, dphi);
            assert!((b.db_dtheta - dth).abs() < 1e-8, "{} {}", b.db_dtheta, dth);
        }
    }

    #[test]
    fn uniform_state_values() {
        let g = grid2();
        let f = Fourier::new(g);
        let p = params();
        let s = ThermoState::new(Field::constant(g, 1.0), Field::constant(g, p.theta_bar)).unwrap();
        let psi = free_energy_density(&f, &s, &p).unwrap();
        let expect = -p.k_b * p.theta_bar * p.theta_bar.ln();
        assert!(psi.values().iter().all(|v| (v - expect).abs() < 1e-14));
        let ent = entropy_density(&f, &s, &p).unwrap();
        assert!(ent.values().iter().all(|v| (v - p.k_b * (1.0 + p.theta_bar.ln())).abs() < 1e-14));
        let e = internal_energy_density(&f, &s, &p).unwrap();
        assert!(e.values().iter().all(|v| (v - p.k_b * p.theta_bar).abs() < 1e-13));
        let mu = chemical_potential(&f, &s, &p).unwrap();
        assert!(mu.max_abs() < 1e-14);

        let q = ModelParams { eps: 1.0, k_b: 1.0, ..p };
        let s = ThermoState::new(Field::zeros(g), Field::constant(g, 1.0)).unwrap();
        assert!(free_energy_density(&f, &s, &q).unwrap().values().iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert!(entropy_density(&f, &s, &q).unwrap().values().iter().all(|v| (v - 1.25).abs() < 1e-15));
        assert!(internal_energy_density(&f, &s, &q).unwrap().values().iter().all(|v| (v - 1.5).abs() < 1e-15));
        assert!(chemical_potential(&f, &s, &q).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn total_energy_of_pure_phase() {
        let g = GridSpec::new(2, 16, 1.0).unwrap();
        let f = Fourier::new(g);
        let p = params();
        let s = ThermoState::new(Field::constant(g, 1.0), Field::constant(g, p.theta_bar)).unwrap();
        let e1 = total_energy(&f, &s, &p).unwrap();
        assert!((e1 - p.k_b * p.theta_bar).abs() < 1e-13);
        let q = ModelParams { k_b: 2.0 * p.k_b, ..p };
        assert!((total_energy(&f, &s, &q).unwrap() - 2.0 * e1).abs() < 1e-13);
    }

    #[test]
    fn non_positive_temperature_reports_location() {
        let g = GridSpec::new(2, 8, 1.0).unwrap();
        let f = Fourier::new(g);
        let mut th = vec![1.0; 64];
        th[8 * 3 + 5] = -0.5;
        let theta = Field::new(g, th).unwrap();
        let err = ThermoState::new(Field::zeros(g), theta.clone()).unwrap_err();
        assert!(err.to_string().contains("(3, 5)"), "{err}");
        let s = ThermoState {
            phi: Field::zeros(g),
            theta,
            dphi_dt: None,
            dtheta_dt: None,
        };
        assert!(free_energy_density(&f, &s, &params()).is_err());
        assert!(entropy_density(&f, &s, &params()).is_err());
    }

    #[test]
    fn chemical_potential_single_mode() {
        let g = GridSpec::new(1, 64, 3.0).unwrap();
        let f = Fourier::new(g);
        let p = params();
        let k = 2.0 * PI / 3.0;
        let phi = Field::from_fn(g, |x| (k * x[0]).sin());
        let s = ThermoState::new(phi.clone(), Field::constant(g, p.theta_bar)).unwrap();
        let mu = chemical_potential(&f, &s, &p).unwrap();
        let et = p.eps * p.theta_bar;
        let expect = phi.map(|v| et * k * k * v + (v * v - 1.0) * v / et);
        assert!(mu.sub(&expect).max_abs() < 1e-10);
    }

    #[test]
    fn isothermal_reduction_of_mu() {
        let p = params();
        let g = grid2();
        let f = Fourier::new(g).with_dealias(false);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let phi = smooth_direction(g, &mut rng);
        let s = ThermoState::new(phi.clone(), Field::constant(g, p.theta_bar)).unwrap();
        let mu = chemical_potential(&f, &s, &p).unwrap();
        let et = p.eps * p.theta_bar;
        let lap = f.d(&phi, grid::Derivative::Laplacian).unwrap();
        let classic = phi.zip_map(&lap, |v, l| -et * l + (v * v - 1.0) * v / et);
        assert!(mu.sub(&classic).max_abs() < 1e-12);
    }

    #[test]
    fn entropy_production_cases() {
        let g = GridSpec::new(1, 64, 2.0 * PI).unwrap();
        let f = Fourier::new(g);
        let p = params();
        // static state
        let s = ThermoState::new(Field::constant(g, 0.3), Field::constant(g, 1.5))
            .unwrap()
            .at_rest();
        let mu = Field::constant(g, 0.7);
        assert!(entropy_production(&f, &s, &mu, &p).unwrap().max_abs() < 1e-14);
        // pure conduction
        let theta = Field::from_fn(g, |x| 1.0 + 0.1 * x[0].sin());
        let s = ThermoState::new(Field::constant(g, 0.3), theta).unwrap().at_rest();
        let prod = entropy_production(&f, &s, &mu, &p).unwrap();
        let expect = Field::from_fn(g, |x| p.kappa * (0.1 * x[0].cos()).powi(2) / (1.0 + 0.1 * x[0].sin()));
        assert!(prod.sub(&expect).max_abs() < 1e-10);
        // missing cache
        let bare = ThermoState::new(Field::zeros(g), Field::constant(g, 1.0)).unwrap();
        assert!(matches!(entropy_production(&f, &bare, &mu, &p), Err(Error::MissingCache(_))));
        // A1 singular without regularization
        let a1 = ModelParams { model: Model::A1, a1_reg: 0.0, ..p };
        let s = ThermoState::new(Field::from_fn(g, |x| x[0].sin()), Field::constant(g, 1.0))
            .unwrap()
            .at_rest();
        assert!(matches!(entropy_production(&f, &s, &mu, &a1), Err(Error::Singularity { .. })));
        let a1r = ModelParams { a1_reg: 1e-2, ..a1 };
        assert!(entropy_production(&f, &s, &mu, &a1r).is_ok());
    }

    #[test]
    fn entropy_production_nonnegative_random_states() {
        let p = params();
        let f = Fourier::new(grid2());
        for seed in 0..10 {
            for model in [Model::A1, Model::A2] {
                let q = ModelParams { model, a1_reg: 1e-2, ..p };
                let s = smooth_state(seed, &q);
                let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed + 100);
                let rate = smooth_direction(*s.phi.grid(), &mut rng);
                let s = s.clone().with_rates(rate.clone(), rate);
                let mu = chemical_potential(&f, &s, &q).unwrap();
                let prod = entropy_production(&f, &s, &mu, &q).unwrap();
                assert!(prod.min().1 >= -1e-12);
            }
        }
    }

    #[test]
    fn internal_energy_is_psi_plus_theta_s() {
        let p = params();
        let f = Fourier::new(grid2());
        let s = smooth_state(9, &p);
        let e = internal_energy_density(&f, &s, &p).unwrap();
        let psi = free_energy_density(&f, &s, &p).unwrap();
        let ent = entropy_density(&f, &s, &p).unwrap();
        let r = e.sub(&psi).sub(&s.theta.mul(&ent));
        assert!(r.max_abs() < 1e-14);
        let tot = total_energy(&f, &s, &p).unwrap();
        assert!((tot - psi.integral() - s.theta.mul(&ent).integral()).abs() < 1e-12 * tot.abs().max(1.0));
    }

    #[test]
    fn variational_identities_hold() {
        let p = params();
        let f = Fourier::new(grid2());
        let s = smooth_state(21, &p);
        let r = verify_variational_identities(&f, &s, &p, 1e-5).unwrap();
        assert!(r.entropy_residual <= 1e-6, "{r:?}");
        assert!(r.chemical_potential_residual <= 1e-6, "{r:?}");
        assert!(r.energy_rate_residual <= 1e-6, "{r:?}");
        assert!(r.to_csv().starts_with("identity,residual,step\n"));
        assert!(verify_variational_identities(&f, &s, &p, 1e-2).is_err());
    }

    #[test]
    fn constant_phi_gateaux_reduces_to_bulk() {
        let p = params();
        let g = grid2();
        let f = Fourier::new(g);
        let s = ThermoState::new(Field::constant(g, 0.4), Field::constant(g, 1.7)).unwrap();
        let r = verify_variational_identities(&f, &s, &p, 1e-5).unwrap();
        assert!(r.chemical_potential_residual <= 1e-8, "{r:?}");
    }

    #[test]
    fn centered_difference_is_second_order() {
        let p = params();
        let f = Fourier::new(grid2());
        let s = smooth_state(5, &p);
        let a = verify_variational_identities(&f, &s, &p, 1e-3).unwrap();
        let b = verify_variational_identities(&f, &s, &p, 5e-4).unwrap();
        let ratio = a.entropy_residual / b.entropy_residual;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }
}
