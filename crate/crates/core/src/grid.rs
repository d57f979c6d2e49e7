//! Periodic grids, real/spectral field storage and exact Fourier operators.
//!
//! Fields live on the torus `[0, L)^d` sampled at `n` points per axis, stored
//! row-major with the last axis fastest. The forward transform is
//! unnormalized and the inverse carries the `1/n^d` factor, so a constant field
//! `c` has the single nonzero coefficient `c * n^d` at the zero mode.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Transforms on grids with at least this many points split lines across threads.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    box_len: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, box_len: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n must be a power of two >= 8, got {n}"
            )));
        }
        if !(box_len.is_finite() && box_len > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "box_len must be finite and > 0, got {box_len}"
            )));
        }
        Ok(Self { dim, n, box_len })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn box_len(&self) -> f64 {
        self.box_len
    }

    /// Total number of grid points, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `h = L/n`.
    pub fn spacing(&self) -> f64 {
        self.box_len / self.n as f64
    }

    /// Quadrature weight of one grid point, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.box_len.powi(self.dim as i32)
    }

    /// Lattice spacing in frequency space, `2π/L`.
    pub fn dk(&self) -> f64 {
        2.0 * PI / self.box_len
    }

    /// Signed mode number of array index `i` along one axis, in `-n/2..n/2`.
    pub fn mode_number(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Multi-index of a flat row-major index.
    pub fn unravel(&self, flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut rem = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rem % self.n;
            rem /= self.n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().take(self.dim).fold(0, |acc, &i| acc * self.n + i)
    }

    /// Human-readable location of a flat index, e.g. `(3, 17)`.
    pub fn describe(&self, flat: usize) -> String {
        let idx = self.unravel(flat);
        let parts: Vec<String> = idx[..self.dim].iter().map(|i| i.to_string()).collect();
        format!("({})", parts.join(", "))
    }

    /// Physical coordinates of a flat index.
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let idx = self.unravel(flat);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = idx[axis] as f64 * h;
        }
        x
    }

    fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D n={} L={}", self.dim, self.n, self.box_len)
    }
}

/// Real samples of a scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    /// Wraps samples, rejecting wrong lengths and non-finite values.
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                what: "field samples",
                expected: grid.len(),
                got: values.len(),
            });
        }
        let field = Self { grid, values };
        field.check_finite("field")?;
        Ok(field)
    }

    pub(crate) fn from_vec_unchecked(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x)` at every grid point; `x` has `dim` meaningful entries.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some((i, &v)) = self.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: what.to_string(),
                location: self.grid.describe(i),
                value: v,
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        Field::from_vec_unchecked(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// `∫ f dx` by the exact periodic rectangle rule.
    pub fn integral(&self) -> f64 {
        self.sum() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Componentwise sum of squares of a vector field.
pub fn norm_sq(v: &[Field]) -> Field {
    let mut out = Field::zeros(*v[0].grid());
    for c in v {
        for (o, x) in out.values.iter_mut().zip(&c.values) {
            *o += x * x;
        }
    }
    out
}

/// Pointwise dot product of two vector fields.
pub fn dot(a: &[Field], b: &[Field]) -> Field {
    let mut out = Field::zeros(*a[0].grid());
    for (ca, cb) in a.iter().zip(b) {
        for ((o, x), y) in out.values.iter_mut().zip(&ca.values).zip(&cb.values) {
            *o += x * y;
        }
    }
    out
}

/// `(mean f, ⟨f, g⟩)` with `⟨f, g⟩ = h^d Σ f g`.
pub fn mean_and_inner(f: &Field, g: &Field) -> Result<(f64, f64)> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch(format!("{} vs {}", f.grid, g.grid)));
    }
    let inner = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>()
        * f.grid.cell_volume();
    Ok((f.mean(), inner))
}

/// Fourier coefficients, indexed like [`Field`] samples (index `i` ↔ mode `mode_number(i)`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                what: "spectral coefficients",
                expected: grid.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn scale(mut self, c: f64) -> Self {
        self.coeffs.iter_mut().for_each(|z| *z *= c);
        self
    }

    pub fn add(mut self, other: &SpectralField) -> Self {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        self
    }

    /// `‖f‖_{L²}` of the corresponding real field, via Parseval.
    pub fn l2_norm(&self) -> f64 {
        let n = self.grid.len() as f64;
        (self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume() / n)
            .sqrt()
    }

    /// Largest `|c(-k) - conj(c(k))|` over the lattice.
    pub fn hermitian_defect(&self) -> f64 {
        let g = &self.grid;
        let n = g.n();
        (0..g.len())
            .map(|i| {
                let idx = g.unravel(i);
                let mut neg = [0usize; 3];
                for a in 0..g.dim() {
                    neg[a] = (n - idx[a]) % n;
                }
                (self.coeffs[g.ravel(&neg)] - self.coeffs[i].conj()).norm()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    /// `∂/∂x_i`, multiplier `i k_i` (Nyquist mode dropped).
    Grad(usize),
    /// `Δ`, multiplier `-|k|²`.
    Laplacian,
    /// `Δ²`, multiplier `|k|⁴`.
    Bilaplacian,
}

/// FFT plans and wavenumber tables for one grid.
///
/// Cheap to clone; all state is immutable after construction.
#[derive(Clone)]
pub struct Fourier {
    grid: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Wavenumber per array index along one axis.
    k_axis: Arc<Vec<f64>>,
    nyquist: usize,
    k2: Arc<Vec<f64>>,
    keep: Arc<Vec<bool>>,
    dealias: bool,
}

impl fmt::Debug for Fourier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fourier")
            .field("grid", &self.grid)
            .field("dealias", &self.dealias)
            .finish()
    }
}

impl Fourier {
    /// Plans transforms for `grid`; two-thirds dealiasing of products is on.
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let dk = grid.dk();
        let k_axis: Vec<f64> = (0..n).map(|i| grid.mode_number(i) as f64 * dk).collect();
        let mut k2 = vec![0.0; grid.len()];
        let mut keep = vec![true; grid.len()];
        for (flat, (k2v, kp)) in k2.iter_mut().zip(keep.iter_mut()).enumerate() {
            let idx = grid.unravel(flat);
            for &i in &idx[..grid.dim()] {
                *k2v += k_axis[i] * k_axis[i];
                if 3 * grid.mode_number(i).unsigned_abs() as usize > n {
                    *kp = false;
                }
            }
        }
        Self {
            grid,
            forward,
            inverse,
            k_axis: Arc::new(k_axis),
            nyquist: n / 2,
            k2: Arc::new(k2),
            keep: Arc::new(keep),
            dealias: true,
        }
    }

    pub fn with_dealias(mut self, on: bool) -> Self {
        self.dealias = on;
        self
    }

    pub fn dealias_enabled(&self) -> bool {
        self.dealias
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `|k|²` per lattice point, in flat order.
    pub fn k_squared(&self) -> &[f64] {
        &self.k2
    }

    /// Wavenumber of array index `i` along any axis.
    pub fn wavenumber(&self, i: usize) -> f64 {
        self.k_axis[i]
    }

    /// True when the lattice point survives the two-thirds rule.
    pub fn retained(&self, flat: usize) -> bool {
        self.keep[flat]
    }

    fn check_grid(&self, g: &GridSpec) -> Result<()> {
        if *g != self.grid {
            return Err(Error::GridMismatch(format!(
                "field on {g}, transform planned for {}",
                self.grid
            )));
        }
        Ok(())
    }

    pub fn transform(&self, f: &Field) -> Result<SpectralField> {
        self.check_grid(f.grid())?;
        f.check_finite("transform input")?;
        let mut data: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_nd(&mut data, &self.forward);
        Ok(SpectralField {
            grid: self.grid,
            coeffs: data,
        })
    }

    /// Inverse transform; the imaginary residue is discarded.
    pub fn inverse(&self, g: &SpectralField) -> Result<Field> {
        self.check_grid(g.grid())?;
        let mut data = g.coeffs.clone();
        self.fft_nd(&mut data, &self.inverse);
        let scale = 1.0 / self.grid.len() as f64;
        Ok(Field::from_vec_unchecked(
            self.grid,
            data.into_iter().map(|z| z.re * scale).collect(),
        ))
    }

    pub fn derivative(&self, f: &SpectralField, op: Derivative) -> Result<SpectralField> {
        self.check_grid(f.grid())?;
        let mut out = f.clone();
        match op {
            Derivative::Grad(axis) => {
                if axis >= self.grid.dim() {
                    return Err(Error::InvalidArgument(format!(
                        "gradient component {axis} on a {}D grid",
                        self.grid.dim()
                    )));
                }
                let stride = self.grid.stride(axis);
                let n = self.grid.n();
                for (flat, z) in out.coeffs.iter_mut().enumerate() {
                    let i = (flat / stride) % n;
                    if i == self.nyquist {
                        *z = Complex64::new(0.0, 0.0);
                    } else {
                        *z *= Complex64::new(0.0, self.k_axis[i]);
                    }
                }
            }
            Derivative::Laplacian => {
                for (z, &k2) in out.coeffs.iter_mut().zip(self.k2.iter()) {
                    *z *= -k2;
                }
            }
            Derivative::Bilaplacian => {
                for (z, &k2) in out.coeffs.iter_mut().zip(self.k2.iter()) {
                    *z *= k2 * k2;
                }
            }
        }
        Ok(out)
    }

    /// Zeroes every mode with some `|k_i| > (2/3) k_max`.
    pub fn dealias(&self, f: &SpectralField) -> SpectralField {
        let mut out = f.clone();
        for (z, &keep) in out.coeffs.iter_mut().zip(self.keep.iter()) {
            if !keep {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    /// Applies [`Fourier::dealias`] only when dealiasing is enabled.
    pub fn project(&self, f: SpectralField) -> SpectralField {
        if self.dealias {
            self.dealias(&f)
        } else {
            f
        }
    }

    /// Multiplies every coefficient by `m(|k|²)`.
    pub fn apply_radial(&self, f: &SpectralField, m: impl Fn(f64) -> f64) -> SpectralField {
        let mut out = f.clone();
        for (z, &k2) in out.coeffs.iter_mut().zip(self.k2.iter()) {
            *z *= m(k2);
        }
        out
    }

    // Convenience compositions used throughout the models.

    /// Real-space derivative of a real field.
    pub fn d(&self, f: &Field, op: Derivative) -> Result<Field> {
        let fh = self.transform(f)?;
        self.inverse(&self.derivative(&fh, op)?)
    }

    pub fn gradient(&self, f: &Field) -> Result<Vec<Field>> {
        let fh = self.transform(f)?;
        self.gradient_hat(&fh)
    }

    pub fn gradient_hat(&self, fh: &SpectralField) -> Result<Vec<Field>> {
        (0..self.grid.dim())
            .map(|a| self.inverse(&self.derivative(fh, Derivative::Grad(a))?))
            .collect()
    }

    /// Spectral divergence of a vector field, returned in Fourier space.
    pub fn divergence_hat(&self, v: &[Field]) -> Result<SpectralField> {
        let mut acc = SpectralField::zeros(self.grid);
        for (a, c) in v.iter().enumerate() {
            let ch = self.transform(c)?;
            acc = acc.add(&self.derivative(&ch, Derivative::Grad(a))?);
        }
        Ok(acc)
    }

    pub fn divergence(&self, v: &[Field]) -> Result<Field> {
        self.inverse(&self.divergence_hat(v)?)
    }

    fn fft_nd(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n();
        let total = data.len();
        let parallel = total >= PAR_THRESHOLD;
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        for axis in 0..self.grid.dim() {
            let stride = self.grid.stride(axis);
            if stride == 1 {
                run_lines(plan, data, n, parallel);
                continue;
            }
            let block = n * stride;
            for (src, dst) in data.chunks(block).zip(buf.chunks_mut(block)) {
                for i in 0..n {
                    for j in 0..stride {
                        dst[j * n + i] = src[i * stride + j];
                    }
                }
            }
            run_lines(plan, &mut buf, n, parallel);
            for (dst, src) in data.chunks_mut(block).zip(buf.chunks(block)) {
                for i in 0..n {
                    for j in 0..stride {
                        dst[i * stride + j] = src[j * n + i];
                    }
                }
            }
        }
    }
}

fn run_lines(plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64], n: usize, parallel: bool) {
    let scratch_len = plan.get_inplace_scratch_len();
    if parallel {
        let lines = data.len() / n;
        let per_task = lines.div_ceil(rayon::current_num_threads().max(1)).max(1);
        data.par_chunks_mut(per_task * n).for_each(|chunk| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
            plan.process_with_scratch(chunk, &mut scratch);
        });
    } else {
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        plan.process_with_scratch(data, &mut scratch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn grid(dim: usize, n: usize) -> GridSpec {
        GridSpec::new(dim, n, 2.0 * PI).unwrap()
    }

    fn random_field(g: GridSpec, rng: &mut Xoshiro256PlusPlus) -> Field {
        let v = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::new(g, v).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(2, 4, 1.0).is_err());
        assert!(GridSpec::new(2, 48, 1.0).is_err());
        assert!(GridSpec::new(4, 8, 1.0).is_err());
        assert!(GridSpec::new(1, 8, 0.0).is_err());
        assert!(GridSpec::new(1, 8, f64::NAN).is_err());
        let g = GridSpec::new(3, 8, 2.0).unwrap();
        assert_eq!(g.len(), 512);
        assert_eq!(g.spacing(), 0.25);
        assert_eq!(g.unravel(g.ravel(&[1, 2, 3])), [1, 2, 3]);
        assert_eq!(g.mode_number(4), -4);
        assert_eq!(g.mode_number(3), 3);
    }

    #[test]
    fn constant_has_only_zero_mode() {
        let g = grid(2, 16);
        let f = Fourier::new(g);
        let c = f.transform(&Field::constant(g, 3.0)).unwrap();
        assert!((c.coeffs()[0].re - 3.0 * 256.0).abs() < 1e-10);
        assert!(c.coeffs()[1..].iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn single_harmonic_has_two_modes() {
        let g = GridSpec::new(1, 64, 3.0).unwrap();
        let f = Fourier::new(g);
        let s = Field::from_fn(g, |x| (2.0 * PI * x[0] / 3.0).sin());
        let sh = f.transform(&s).unwrap();
        let nonzero: Vec<usize> = (0..64).filter(|&i| sh.coeffs()[i].norm() > 1e-9).collect();
        assert_eq!(nonzero, vec![1, 63]);
        assert!((f.wavenumber(1) - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!((f.wavenumber(63) + 2.0 * PI / 3.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_input_rejected() {
        let g = grid(1, 8);
        let mut v = vec![0.0; 8];
        v[5] = f64::NAN;
        assert!(Field::new(g, v.clone()).is_err());
        let bad = Field::from_vec_unchecked(g, v);
        let err = Fourier::new(g).transform(&bad).unwrap_err();
        assert!(err.to_string().contains("(5)"), "{err}");
    }

    #[test]
    fn roundtrip_and_parseval_random() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        for (dim, n) in [(1, 64), (2, 32), (3, 8)] {
            let g = grid(dim, n);
            let f = Fourier::new(g);
            for _ in 0..20 {
                let u = random_field(g, &mut rng);
                let uh = f.transform(&u).unwrap();
                let back = f.inverse(&uh).unwrap();
                let err = back.sub(&u).l2_norm() / u.l2_norm();
                assert!(err < 1e-12, "roundtrip {err}");
                let pars = (uh.l2_norm() - u.l2_norm()).abs() / u.l2_norm();
                assert!(pars < 1e-12, "parseval {pars}");
                assert!(uh.hermitian_defect() < 1e-10 * uh.l2_norm().max(1.0) * n as f64);
            }
        }
    }

    #[test]
    fn eigenfunction_derivatives() {
        // Pointwise Δ² picks up round-off amplified by k_max⁴, so the pointwise
        // check runs on a coarse grid and the eigenvalue check on a fine one.
        for n in [16usize, 64] {
            let g = GridSpec::new(1, n, 5.0).unwrap();
            let f = Fourier::new(g);
            let k = 2.0 * PI / 5.0;
            let s = Field::from_fn(g, |x| (k * x[0]).sin());
            let lap = f.d(&s, Derivative::Laplacian).unwrap();
            let bil = f.d(&s, Derivative::Bilaplacian).unwrap();
            let gx = f.d(&s, Derivative::Grad(0)).unwrap();
            for i in 0..n {
                let x = g.coords(i)[0];
                assert!((lap.values()[i] + k * k * (k * x).sin()).abs() < 1e-12 * k * k);
                assert!((gx.values()[i] - k * (k * x).cos()).abs() < 1e-12 * k);
                if n == 16 {
                    assert!((bil.values()[i] - k.powi(4) * (k * x).sin()).abs() < 1e-12 * k.powi(4));
                }
            }
            let rayleigh = mean_and_inner(&bil, &s).unwrap().1 / mean_and_inner(&s, &s).unwrap().1;
            assert!((rayleigh - k.powi(4)).abs() < 1e-12 * k.powi(4));
            let sh = f.transform(&s).unwrap();
            let bh = f.derivative(&sh, Derivative::Bilaplacian).unwrap();
            assert!((bh.coeffs()[1] / sh.coeffs()[1] - k.powi(4)).norm() < 1e-12 * k.powi(4));
        }
        let g = GridSpec::new(1, 64, 5.0).unwrap();
        let f = Fourier::new(g);
        let c = f.d(&Field::constant(g, 2.5), Derivative::Grad(0)).unwrap();
        assert!(c.max_abs() < 1e-15);
        let s = f.transform(&Field::constant(g, 1.0)).unwrap();
        assert!(f.derivative(&s, Derivative::Grad(1)).is_err());
    }

    #[test]
    fn derivatives_commute_and_keep_symmetry() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let g = grid(2, 16);
        let f = Fourier::new(g);
        let u = random_field(g, &mut rng);
        let uh = f.transform(&u).unwrap();
        let ll = f
            .derivative(&f.derivative(&uh, Derivative::Laplacian).unwrap(), Derivative::Laplacian)
            .unwrap();
        let bb = f.derivative(&uh, Derivative::Bilaplacian).unwrap();
        let scale = bb.l2_norm();
        let diff = ll.add(&bb.clone().scale(-1.0)).l2_norm();
        assert!(diff <= 1e-12 * scale);
        for op in [Derivative::Grad(0), Derivative::Grad(1), Derivative::Laplacian] {
            let d = f.derivative(&uh, op).unwrap();
            assert!(d.hermitian_defect() <= 1e-12 * d.l2_norm().max(1.0) * 256.0);
        }
        // zero mode annihilated
        let lap = f.d(&u, Derivative::Laplacian).unwrap();
        let zh = f.transform(&lap).unwrap();
        assert!(zh.coeffs()[0].norm() < 1e-10);
    }

    #[test]
    fn dealias_behaviour() {
        let g = GridSpec::new(1, 32, 2.0 * PI).unwrap();
        let f = Fourier::new(g);
        let low = Field::from_fn(g, |x| (3.0 * x[0]).cos() + (10.0 * x[0]).sin());
        let lh = f.transform(&low).unwrap();
        assert!(f.dealias(&lh).add(&lh.clone().scale(-1.0)).l2_norm() < 1e-12 * lh.l2_norm());
        let top = Field::from_fn(g, |x| (16.0 * x[0]).cos());
        assert!(f.dealias(&f.transform(&top).unwrap()).l2_norm() < 1e-14);
        assert!(f.retained(10) && !f.retained(11));

        for n in [16usize, 32, 64] {
            let g = GridSpec::new(1, n, 2.0).unwrap();
            let f = Fourier::new(g);
            let s = Field::from_fn(g, |x| (PI * x[0]).sin());
            let prod = s.mul(&s);
            let d = f.inverse(&f.dealias(&f.transform(&prod).unwrap())).unwrap();
            let exact = Field::from_fn(g, |x| (1.0 - (2.0 * PI * x[0]).cos()) / 2.0);
            assert!(d.sub(&exact).max_abs() < 1e-12);
        }
    }

    #[test]
    fn mean_and_inner_products() {
        let g = GridSpec::new(1, 64, 3.0).unwrap();
        let (m, _) = mean_and_inner(&Field::constant(g, 3.0), &Field::constant(g, 1.0)).unwrap();
        assert!((m - 3.0).abs() < 1e-15);
        let w = 2.0 * PI / 3.0;
        let s = Field::from_fn(g, |x| (w * x[0]).sin());
        let c = Field::from_fn(g, |x| (w * x[0]).cos());
        assert!(mean_and_inner(&s, &c).unwrap().1.abs() < 1e-12);
        assert!((mean_and_inner(&s, &s).unwrap().1 - 1.5).abs() < 1e-12);
        let other = GridSpec::new(1, 32, 3.0).unwrap();
        assert!(mean_and_inner(&s, &Field::zeros(other)).is_err());
    }

    #[test]
    fn parallel_path_matches_serial_layout() {
        let g = GridSpec::new(3, 32, 1.0).unwrap();
        let f = Fourier::new(g);
        let u = Field::from_fn(g, |x| {
            (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos() + (2.0 * PI * x[2]).cos()
        });
        let back = f.inverse(&f.transform(&u).unwrap()).unwrap();
        assert!(back.sub(&u).max_abs() < 1e-12);
    }
}
