//! Discrete Littlewood–Paley decomposition on the periodic lattice.
//!
//! Blocks are radial multipliers in the physical wavenumber `ξ = |k|`:
//! `Δ_{−1}` uses `χ(ξ)`, and `Δ_q` for `q ≥ 0` uses `φ_q(ξ) = χ(ξ/2^{q+1}) − χ(ξ/2^q)`.
//! Norms are `B^s_{2,1}`: an ℓ¹ sum over blocks of `2^{qs}‖Δ_q f‖_{L²}`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{Field, Fourier, GridSpec, SpectralField};
use crate::thermo::ModelParams;

/// Inner radius of the transition annulus of `χ`.
pub const CHI_INNER: f64 = 3.0 / 4.0;
/// Outer radius: `χ` vanishes for `ξ ≥ 4/3`.
pub const CHI_OUTER: f64 = 4.0 / 3.0;

/// Safety factor applied to empirically observed constants.
pub const CALIBRATION_MARGIN: f64 = 1.1;

fn bump(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// C^∞ step: 0 for `t ≤ 0`, 1 for `t ≥ 1`.
pub fn smoothstep(t: f64) -> f64 {
    let a = bump(t);
    let b = bump(1.0 - t);
    a / (a + b)
}

/// Low-frequency cutoff `χ(ξ)`: 1 on `ξ ≤ 3/4`, 0 on `ξ ≥ 4/3`.
pub fn chi(xi: f64) -> f64 {
    smoothstep((CHI_OUTER - xi) / (CHI_OUTER - CHI_INNER))
}

/// `φ_q(ξ)` for `q ≥ 0`, and `χ(ξ)` for `q = −1`.
pub fn block_symbol(q: i32, xi: f64) -> f64 {
    if q < 0 {
        chi(xi)
    } else {
        let lo = 2f64.powi(q);
        chi(xi / (2.0 * lo)) - chi(xi / lo)
    }
}

/// Sampled dyadic symbols for one grid.
#[derive(Debug, Clone)]
pub struct DyadicPartition {
    grid: GridSpec,
    q_max: i32,
    xi: Vec<f64>,
    /// `symbols[q + 1]` sampled in flat lattice order.
    symbols: Vec<Vec<f64>>,
    fourier: Fourier,
}

pub fn build_partition(grid: GridSpec) -> DyadicPartition {
    let fourier = Fourier::new(grid).with_dealias(false);
    let xi: Vec<f64> = fourier.k_squared().iter().map(|k2| k2.sqrt()).collect();
    let xi_max = xi.iter().cloned().fold(0.0, f64::max);
    let mut q_max = 0;
    while 2f64.powi(q_max + 1) * CHI_INNER < xi_max {
        q_max += 1;
    }
    let symbols = (-1..=q_max)
        .map(|q| xi.iter().map(|&x| block_symbol(q, x)).collect())
        .collect();
    DyadicPartition {
        grid,
        q_max,
        xi,
        symbols,
        fourier,
    }
}

impl DyadicPartition {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn q_min(&self) -> i32 {
        -1
    }

    pub fn q_max(&self) -> i32 {
        self.q_max
    }

    pub fn blocks(&self) -> std::ops::RangeInclusive<i32> {
        -1..=self.q_max
    }

    /// Lattice samples of the block-`q` multiplier.
    pub fn symbol(&self, q: i32) -> &[f64] {
        &self.symbols[(q + 1) as usize]
    }

    /// `|k|` per lattice point.
    pub fn frequencies(&self) -> &[f64] {
        &self.xi
    }

    pub fn fourier(&self) -> &Fourier {
        &self.fourier
    }

    fn check(&self, f: &Field) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(Error::GridMismatch(format!(
                "field on {}, partition built for {}",
                f.grid(),
                self.grid
            )));
        }
        Ok(())
    }

    pub fn transform(&self, f: &Field) -> Result<SpectralField> {
        self.check(f)?;
        self.fourier.transform(f)
    }

    /// `Δ_q f` in Fourier space.
    pub fn block(&self, fh: &SpectralField, q: i32) -> SpectralField {
        let mut out = fh.clone();
        for (z, &m) in out.coeffs_mut().iter_mut().zip(self.symbol(q)) {
            *z *= m;
        }
        out
    }

    /// `‖Δ_q f‖_{L²}` via Parseval, optionally weighted by `|k|^power`.
    fn weighted_block_norm(&self, fh: &SpectralField, q: i32, power: i32) -> f64 {
        let n = self.grid.len() as f64;
        let sum: f64 = fh
            .coeffs()
            .iter()
            .zip(self.symbol(q))
            .zip(&self.xi)
            .map(|((z, &m), &x)| {
                let w = if power == 0 { 1.0 } else { x.powi(power) };
                (m * w) * (m * w) * z.norm_sqr()
            })
            .sum();
        (self.grid.volume() * sum).sqrt() / n
    }

    pub fn block_norm(&self, fh: &SpectralField, q: i32) -> f64 {
        self.weighted_block_norm(fh, q, 0)
    }

    /// `‖∇Δ_q f‖_{L²}`.
    pub fn block_gradient_norm(&self, fh: &SpectralField, q: i32) -> f64 {
        self.weighted_block_norm(fh, q, 1)
    }

    /// `‖Δ_q f‖_{L²}` for every block, from `q = −1` upward.
    pub fn block_norms(&self, f: &Field) -> Result<Vec<f64>> {
        let fh = self.transform(f)?;
        Ok(self.blocks().map(|q| self.block_norm(&fh, q)).collect())
    }
}

/// Per-block contributions and total `B^s_{2,1}` norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BesovReport {
    pub s: f64,
    pub per_block: Vec<(i32, f64)>,
    pub norm: f64,
}

impl BesovReport {
    fn from_blocks(s: f64, blocks: impl Iterator<Item = (i32, f64)>) -> Self {
        let per_block: Vec<(i32, f64)> = blocks.map(|(q, a)| (q, 2f64.powf(q as f64 * s) * a)).collect();
        let norm = per_block.iter().map(|(_, v)| v).sum();
        Self { s, per_block, norm }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,weighted_block_norm\n");
        for (q, v) in &self.per_block {
            let _ = writeln!(out, "{q},{v:e}");
        }
        let _ = writeln!(out, "total,{:e}", self.norm);
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("B^{}_{{2,1}} norm = {:.6e}\n", self.s, self.norm);
        for (q, v) in &self.per_block {
            let _ = writeln!(out, "  q = {q:>3}: {v:.6e}");
        }
        out
    }
}

pub fn besov_norm(f: &Field, s: f64, part: &DyadicPartition) -> Result<BesovReport> {
    let norms = part.block_norms(f)?;
    Ok(BesovReport::from_blocks(s, part.blocks().zip(norms)))
}

/// Exponent of the time norm in a Chemin–Lerner space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeNorm {
    L1,
    L2,
    LInf,
}

/// Discrete `L^ρ` norm of uniformly spaced samples: left endpoint rule for
/// `ρ = 1, 2` over the `N − 1` intervals, maximum over all samples for `ρ = ∞`.
pub fn time_norm(samples: &[f64], dt: f64, rho: TimeNorm) -> f64 {
    let left = &samples[..samples.len().saturating_sub(1)];
    match rho {
        TimeNorm::L1 => dt * left.iter().map(|v| v.abs()).sum::<f64>(),
        TimeNorm::L2 => (dt * left.iter().map(|v| v * v).sum::<f64>()).sqrt(),
        TimeNorm::LInf => samples.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// `‖f‖_{L̃^ρ(0,T; B^s)}`: per block the time norm of `‖Δ_q f(t)‖`, then ℓ¹ over blocks.
pub fn chemin_lerner_norm(
    series: &[Field],
    dt: f64,
    s: f64,
    rho: TimeNorm,
    part: &DyadicPartition,
) -> Result<f64> {
    Ok(chemin_lerner_report(series, dt, s, rho, part)?.norm)
}

pub fn chemin_lerner_report(
    series: &[Field],
    dt: f64,
    s: f64,
    rho: TimeNorm,
    part: &DyadicPartition,
) -> Result<BesovReport> {
    if series.len() < 2 {
        return Err(Error::TimeGrid(format!(
            "Chemin-Lerner norm needs at least 2 snapshots, got {}",
            series.len()
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::TimeGrid(format!("time step must be positive, got {dt}")));
    }
    let per_time: Vec<Vec<f64>> = series.iter().map(|f| part.block_norms(f)).collect::<Result<_>>()?;
    let blocks = part.blocks().enumerate().map(|(j, q)| {
        let samples: Vec<f64> = per_time.iter().map(|b| b[j]).collect();
        (q, time_norm(&samples, dt, rho))
    });
    Ok(BesovReport::from_blocks(s, blocks))
}

/// Both inequalities of the smallness condition of the local well-posedness theorem, on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallnessReport {
    pub dim: usize,
    pub eps0: f64,
    pub lhs1: f64,
    pub rhs1: f64,
    pub lhs2: f64,
    pub rhs2: f64,
    pub satisfied: [bool; 2],
    /// `rhs_i / lhs_i` (infinite when the left side vanishes).
    pub margins: [f64; 2],
    pub eps_theta_bar: f64,
    /// Admissible `χ` interval taking the unspecified constant `C̃ = 1`.
    pub chi_range: Option<(f64, f64)>,
}

impl SmallnessReport {
    pub fn all_satisfied(&self) -> bool {
        self.satisfied[0] && self.satisfied[1]
    }

    pub fn to_csv(&self) -> String {
        let (lo, hi) = self.chi_range.unwrap_or((f64::NAN, f64::NAN));
        format!(
            "inequality,lhs,rhs,margin,satisfied\n1,{:e},{:e},{:e},{}\n2,{:e},{:e},{:e},{}\n\
             # eps0={:e} eps_theta_bar={:e} chi_min_heuristic={:e} chi_max_heuristic={:e}\n",
            self.lhs1,
            self.rhs1,
            self.margins[0],
            self.satisfied[0],
            self.lhs2,
            self.rhs2,
            self.margins[1],
            self.satisfied[1],
            self.eps0,
            self.eps_theta_bar,
            lo,
            hi
        )
    }

    pub fn summary(&self) -> String {
        let mark = |b: bool| if b { "satisfied" } else { "VIOLATED" };
        let mut out = format!("smallness check (d = {}, eps0 = {})\n", self.dim, self.eps0);
        let _ = writeln!(
            out,
            "  [1] {:.6e} < {:.6e}  margin {:.3}x  {}",
            self.lhs1,
            self.rhs1,
            self.margins[0],
            mark(self.satisfied[0])
        );
        let _ = writeln!(
            out,
            "  [2] {:.6e} < {:.6e}  margin {:.3}x  {}",
            self.lhs2,
            self.rhs2,
            self.margins[1],
            mark(self.satisfied[1])
        );
        let _ = writeln!(out, "  eps * theta_bar = {:.6e}", self.eps_theta_bar);
        match self.chi_range {
            Some((lo, hi)) => {
                let _ = writeln!(out, "  chi range (heuristic, C~ = 1): ({lo:.6e}, {hi:.6e})");
            }
            None => out.push_str("  chi range (heuristic, C~ = 1): empty\n"),
        }
        out.push_str("  torus norms stand in for whole-space norms; margins are heuristic\n");
        out
    }
}

fn ratio(rhs: f64, lhs: f64) -> f64 {
    if lhs == 0.0 {
        f64::INFINITY
    } else {
        rhs / lhs
    }
}

pub fn check_smallness(
    phi0: &Field,
    theta0: &Field,
    p: &ModelParams,
    eps0: f64,
    part: &DyadicPartition,
) -> Result<SmallnessReport> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(Error::InvalidArgument(format!("eps0 must lie in (0, 1), got {eps0}")));
    }
    let d = part.grid().dim();
    let s = d as f64 / 2.0;
    let fh = part.transform(phi0)?;
    let lap = part.fourier().derivative(&fh, crate::grid::Derivative::Laplacian)?;
    let lap_norm = besov_norm(&part.fourier().inverse(&lap)?, s, part)?.norm;
    let phi_norm = besov_norm(phi0, s, part)?.norm;
    let dtheta = theta0.map(|v| v - p.theta_bar);
    let lhs2 = besov_norm(&dtheta, s, part)?.norm;

    let m = 1f64.min(p.alpha).min(p.kappa).min(p.k_b);
    let e = p.eps;
    let lhs1 = e * lap_norm + (1.0 / p.theta_bar) * 1f64.max(1.0 / e) * (1.0 + phi_norm).powi(4);
    let rhs1 = eps0 * m;
    let rhs2 = (e.powi(2).min(1.0 / (1.0 + e)) * eps0 * m / (p.theta_bar * (1.0 + p.alpha))).powi(2);

    let chi_lo = 4.0 * lhs2 / m;
    let chi_hi = 4.0 * rhs2 / m;
    Ok(SmallnessReport {
        dim: d,
        eps0,
        lhs1,
        rhs1,
        lhs2,
        rhs2,
        satisfied: [lhs1 < rhs1, lhs2 < rhs2],
        margins: [ratio(rhs1, lhs1), ratio(rhs2, lhs2)],
        eps_theta_bar: e * p.theta_bar,
        chi_range: (m > 0.0 && chi_lo < chi_hi).then_some((chi_lo, chi_hi)),
    })
}

/// A smooth scalar function with closed-form derivative bounds.
pub trait SmoothFunction {
    fn name(&self) -> String;
    fn eval(&self, x: f64) -> f64;
    /// `sup_{|x| ≤ r} |h^{(order)}(x)|`.
    fn derivative_sup(&self, order: u32, r: f64) -> Result<f64>;
}

/// Functions used by the temperature nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Composition {
    Identity,
    /// `x/(θ̄ + x)`.
    Saturation { theta_bar: f64 },
    /// `x(x + 2θ̄)/(θ̄ + x)²`.
    SaturationSquare { theta_bar: f64 },
    Sine,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

impl SmoothFunction for Composition {
    fn name(&self) -> String {
        match self {
            Composition::Identity => "identity".into(),
            Composition::Saturation { theta_bar } => format!("x/({theta_bar}+x)"),
            Composition::SaturationSquare { theta_bar } => format!("x(x+2*{theta_bar})/({theta_bar}+x)^2"),
            Composition::Sine => "sin".into(),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match *self {
            Composition::Identity => x,
            Composition::Saturation { theta_bar } => x / (theta_bar + x),
            Composition::SaturationSquare { theta_bar } => x * (x + 2.0 * theta_bar) / (theta_bar + x).powi(2),
            Composition::Sine => x.sin(),
        }
    }

    fn derivative_sup(&self, order: u32, r: f64) -> Result<f64> {
        let near_pole = |tb: f64| -> Result<f64> {
            if r >= tb {
                return Err(Error::Domain(format!(
                    "{} has a pole inside |x| <= {r}",
                    self.name()
                )));
            }
            Ok(tb - r)
        };
        Ok(match *self {
            Composition::Identity => f64::from(u8::from(order == 1)),
            // 1 − θ̄/(θ̄+x)
            Composition::Saturation { theta_bar } => {
                theta_bar * factorial(order) / near_pole(theta_bar)?.powi(order as i32 + 1)
            }
            // 1 − θ̄²/(θ̄+x)²
            Composition::SaturationSquare { theta_bar } => {
                theta_bar * theta_bar * factorial(order + 1) / near_pole(theta_bar)?.powi(order as i32 + 2)
            }
            Composition::Sine => {
                if order % 2 == 1 {
                    1.0
                } else {
                    r.min(std::f64::consts::FRAC_PI_2).sin()
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionReport {
    pub function: String,
    pub s: f64,
    /// `‖h∘u‖_{B^s}`.
    pub lhs: f64,
    /// `max_l ‖u‖_∞^l sup_{|x|≤‖u‖_∞} |h^{(l+1)}| · ‖u‖_{B^s}`, the bound without `C_s`.
    pub bound: f64,
    /// `lhs / bound`, 0 when both vanish.
    pub ratio: f64,
}

pub fn verify_composition_bound(
    u: &Field,
    h: &dyn SmoothFunction,
    s: f64,
    part: &DyadicPartition,
) -> Result<CompositionReport> {
    let h0 = h.eval(0.0);
    if h0 != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{} does not vanish at 0 (h(0) = {h0})",
            h.name()
        )));
    }
    let sup_u = u.max_abs();
    let lhs = besov_norm(&u.map(|x| h.eval(x)), s, part)?.norm;
    let mut factor: f64 = 0.0;
    for l in 0..=(s.floor() as u32 + 1) {
        factor = factor.max(sup_u.powi(l as i32) * h.derivative_sup(l + 1, sup_u)?);
    }
    let bound = factor * besov_norm(u, s, part)?.norm;
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / bound };
    Ok(CompositionReport {
        function: h.name(),
        s,
        lhs,
        bound,
        ratio,
    })
}

/// Empirical constant from calibration ratios: the maximum times [`CALIBRATION_MARGIN`].
pub fn calibrate(ratios: impl IntoIterator<Item = f64>) -> f64 {
    CALIBRATION_MARGIN * ratios.into_iter().fold(0.0, f64::max)
}

/// Per block `q ≥ 0` with nonzero content: `‖∇Δ_q f‖/(2^q‖Δ_q f‖)` and `2^q‖Δ_q f‖/‖∇Δ_q f‖`.
pub fn bernstein_ratios(f: &Field, part: &DyadicPartition) -> Result<Vec<(i32, f64, f64)>> {
    let fh = part.transform(f)?;
    let mut out = Vec::new();
    for q in 0..=part.q_max() {
        let a = part.block_norm(&fh, q);
        let g = part.block_gradient_norm(&fh, q);
        if a > 1e-14 * fh.l2_norm().max(1e-300) && g > 0.0 {
            let scale = 2f64.powi(q);
            out.push((q, g / (scale * a), scale * a / g));
        }
    }
    Ok(out)
}
