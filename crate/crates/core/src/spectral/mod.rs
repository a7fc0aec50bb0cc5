//! Laplacian eigenbasis on the periodic square torus.
//!
//! Every grid label `(j, k)` with `j ∈ (-nx/2, nx/2]`, `k ∈ (-ny/2, ny/2]`
//! carries one real, L²-orthonormal eigenfunction of `-Δ`:
//!
//! * self-conjugate labels (`j ∈ {0, nx/2}` and `k ∈ {0, ny/2}`) carry
//!   `cos(p·x) / L`,
//! * a "positive" label `p` carries `√2 cos(p·x) / L`,
//! * its conjugate label `-p` (wrapped into the grid range) carries
//!   `√2 sin(p·x) / L`,
//!
//! with `p·x = 2π (j x + k y) / L`. The eigenvalue is
//! `λ = (2π/L)² (j² + k²)`. Labels are sorted by `(j² + k², j, k)` so the
//! ordering (and every noise stream keyed on it) is deterministic.
//!
//! A [`Basis`] retains the first `K` sorted modes. Fields are coefficient
//! vectors against that basis; pointwise products are evaluated on a grid
//! padded by 3/2 relative to the retained band and projected back onto the
//! retained modes.

mod fft;
pub mod snapshot;

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
pub use fft::Fft2;

/// Periodic grid on `[0, side)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub side: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, side: f64) -> Result<Self> {
        if nx < 4 || ny < 4 || nx % 2 != 0 || ny % 2 != 0 {
            return Err(Error::Config(format!(
                "grid dimensions must be even and at least 4, got {nx}x{ny}"
            )));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::Config(format!("grid side length must be positive, got {side}")));
        }
        Ok(Self { nx, ny, side })
    }

    /// Square grid of side 2π.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n, 2.0 * PI)
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `2π / side`, the unit wavenumber.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.side
    }

    /// Quadrature node `(x, y)` of flat index `idx` (x fastest).
    pub fn node(&self, idx: usize) -> (f64, f64) {
        let ix = idx % self.nx;
        let iy = idx / self.nx;
        (
            self.side * ix as f64 / self.nx as f64,
            self.side * iy as f64 / self.ny as f64,
        )
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    /// Area weight of one quadrature node.
    pub fn cell_area(&self) -> f64 {
        self.area() / self.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    SelfConjugate,
    Cos,
    Sin,
}

/// One real eigenfunction of `-Δ` on the torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub j: i32,
    pub k: i32,
    pub lambda: f64,
    pub kind: ModeKind,
    /// Wavevector of the cosine/sine partner, in grid units.
    pub partner: (i32, i32),
    /// Wavevector used by first derivatives, in physical units. Components
    /// along a native Nyquist direction are zero.
    pub wave: [f64; 2],
}

impl Mode {
    pub fn norm_factor(&self, grid: &Grid) -> f64 {
        match self.kind {
            ModeKind::SelfConjugate => 1.0 / grid.side,
            _ => SQRT_2 / grid.side,
        }
    }

    /// Evaluate the eigenfunction at a point.
    pub fn eval(&self, grid: &Grid, x: f64, y: f64) -> f64 {
        let w = grid.wavenumber();
        let arg = w * (self.partner.0 as f64 * x + self.partner.1 as f64 * y);
        let a = self.norm_factor(grid);
        match self.kind {
            ModeKind::SelfConjugate | ModeKind::Cos => a * arg.cos(),
            ModeKind::Sin => a * arg.sin(),
        }
    }

    /// Returns true when the label sits on a native Nyquist line.
    pub fn is_nyquist(&self, grid: &Grid) -> bool {
        self.partner.0.unsigned_abs() as usize == grid.nx / 2
            || self.partner.1.unsigned_abs() as usize == grid.ny / 2
    }

    /// Largest absolute integer wavenumber of the mode.
    pub fn max_wavenumber(&self) -> u32 {
        self.partner.0.unsigned_abs().max(self.partner.1.unsigned_abs())
    }
}

/// Sorted Laplacian spectrum of a grid.
#[derive(Debug, Clone)]
pub struct EigenData {
    pub grid: Grid,
    pub modes: Vec<Mode>,
}

impl EigenData {
    pub fn lambdas(&self) -> impl Iterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.lambda)
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Position of label `(j, k)` in sorted order.
    pub fn index_of(&self, j: i32, k: i32) -> Option<usize> {
        self.modes.iter().position(|m| m.j == j && m.k == k)
    }
}

fn wrap(v: i32, n: usize) -> i32 {
    let n = n as i32;
    let h = n / 2;
    let mut r = v.rem_euclid(n);
    if r > h {
        r -= n;
    }
    r
}

/// Enumerate and sort every grid label.
pub fn build_eigenbasis(grid: &Grid) -> EigenData {
    let hx = (grid.nx / 2) as i32;
    let hy = (grid.ny / 2) as i32;
    let w = grid.wavenumber();
    let mut labels: Vec<(i64, i32, i32)> = Vec::with_capacity(grid.len());
    for j in (1 - hx)..=hx {
        for k in (1 - hy)..=hy {
            labels.push(((j as i64).pow(2) + (k as i64).pow(2), j, k));
        }
    }
    labels.sort_unstable();

    let modes = labels
        .into_iter()
        .map(|(r2, j, k)| {
            let cj = wrap(-j, grid.nx);
            let ck = wrap(-k, grid.ny);
            let self_conj = cj == j && ck == k;
            let positive = (j > 0 && j < hx) || ((j == 0 || j == hx) && k > 0 && k < hy);
            let (kind, partner) = if self_conj {
                (ModeKind::SelfConjugate, (j, k))
            } else if positive {
                (ModeKind::Cos, (j, k))
            } else {
                (ModeKind::Sin, (cj, ck))
            };
            let wx = if partner.0.abs() == hx { 0.0 } else { w * partner.0 as f64 };
            let wy = if partner.1.abs() == hy { 0.0 } else { w * partner.1 as f64 };
            Mode {
                j,
                k,
                lambda: w * w * r2 as f64,
                kind,
                partner,
                wave: [wx, wy],
            }
        })
        .collect();
    EigenData { grid: *grid, modes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Deriv {
    None,
    X,
    Y,
}

/// Retained eigenbasis of size `K` with native and padded transforms.
#[derive(Debug)]
pub struct Basis {
    grid: Grid,
    eigen: Arc<EigenData>,
    k: usize,
    native: Fft2,
    native_pos: Vec<(usize, usize)>,
    padded: Fft2,
    padded_pos: Vec<(usize, usize)>,
    padded_cols: Vec<usize>,
    dealias_ok: bool,
    band: u32,
}

fn grid_index(j: i32, k: i32, nx: usize, ny: usize) -> usize {
    let ix = j.rem_euclid(nx as i32) as usize;
    let iy = k.rem_euclid(ny as i32) as usize;
    iy * nx + ix
}

/// Product grid for a retained band `|j| ≤ b`: 3/2 of the smallest grid
/// resolving the band, `2(b + 1)`, rounded up to an even `2^a 3^c`. Every
/// bilinear product is then alias-free on the retained modes.
fn padded_size(b: u32) -> usize {
    let want = (3 * (b as usize + 1)).max(4);
    (want..)
        .find(|&m| {
            let mut r = m;
            while r % 2 == 0 {
                r /= 2;
            }
            while r % 3 == 0 {
                r /= 3;
            }
            r == 1 && m % 2 == 0
        })
        .expect("unbounded search")
}

impl Basis {
    pub fn new(grid: Grid, k: usize) -> Result<Arc<Self>> {
        let eigen = Arc::new(build_eigenbasis(&grid));
        Self::with_eigen(eigen, k)
    }

    pub fn with_eigen(eigen: Arc<EigenData>, k: usize) -> Result<Arc<Self>> {
        let grid = eigen.grid;
        if k == 0 || k > grid.len() {
            return Err(Error::Config(format!(
                "mode count K = {k} must lie in [1, nx*ny = {}]",
                grid.len()
            )));
        }
        let modes = &eigen.modes[..k];
        let bx = modes.iter().map(|m| m.partner.0.unsigned_abs()).max().unwrap_or(0);
        let by = modes.iter().map(|m| m.partner.1.unsigned_abs()).max().unwrap_or(0);
        let (mx, my) = (padded_size(bx), padded_size(by));
        let native_pos = modes
            .iter()
            .map(|m| {
                let (pj, pk) = m.partner;
                (grid_index(pj, pk, grid.nx, grid.ny), grid_index(-pj, -pk, grid.nx, grid.ny))
            })
            .collect();
        let padded_pos = modes
            .iter()
            .map(|m| {
                let (pj, pk) = m.partner;
                (grid_index(pj, pk, mx, my), grid_index(-pj, -pk, mx, my))
            })
            .collect();
        let mut padded_cols: Vec<usize> = modes
            .iter()
            .flat_map(|m| {
                let pj = m.partner.0;
                [pj.rem_euclid(mx as i32) as usize, (-pj).rem_euclid(mx as i32) as usize]
            })
            .collect();
        padded_cols.sort_unstable();
        padded_cols.dedup();
        let dealias_ok = modes.iter().all(|m| !m.is_nyquist(&grid));
        let band = modes.iter().map(Mode::max_wavenumber).max().unwrap_or(0);
        Ok(Arc::new(Self {
            grid,
            eigen,
            k,
            native: Fft2::new(grid.nx, grid.ny),
            native_pos,
            padded: Fft2::new(mx, my),
            padded_pos,
            padded_cols,
            dealias_ok,
            band,
        }))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn eigen(&self) -> &Arc<EigenData> {
        &self.eigen
    }

    /// Number of retained modes.
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn modes(&self) -> &[Mode] {
        &self.eigen.modes[..self.k]
    }

    pub fn lambda_max(&self) -> f64 {
        self.modes().last().map_or(0.0, |m| m.lambda)
    }

    /// Largest integer wavenumber among the retained modes.
    pub fn band(&self) -> u32 {
        self.band
    }

    pub fn padded_dims(&self) -> (usize, usize) {
        (self.padded.nx(), self.padded.ny())
    }

    /// True when no retained mode sits on a native Nyquist line, which is
    /// required for products on the padded grid.
    pub fn supports_products(&self) -> bool {
        self.dealias_ok
    }

    pub fn require_products(&self) -> Result<()> {
        if self.dealias_ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "K = {} retains Nyquist modes of the {}x{} grid; products need a smaller K",
                self.k, self.grid.nx, self.grid.ny
            )))
        }
    }

    fn accumulate(
        &self,
        out: &mut [Complex64],
        coeffs: &[f64],
        pos: &[(usize, usize)],
        deriv: Deriv,
        scale: Complex64,
    ) {
        let l = self.grid.side;
        let w = self.grid.wavenumber();
        let pair = 1.0 / (SQRT_2 * l);
        for ((m, &(ip, im)), &a) in self.modes().iter().zip(pos).zip(coeffs) {
            if a == 0.0 {
                continue;
            }
            // complex amplitude at +p; the amplitude at -p is its conjugate
            let amp = match m.kind {
                ModeKind::SelfConjugate => Complex64::new(a / l, 0.0),
                ModeKind::Cos => Complex64::new(a * pair, 0.0),
                ModeKind::Sin => Complex64::new(0.0, -a * pair),
            };
            let (plus, minus) = match deriv {
                Deriv::None => (amp, amp.conj()),
                Deriv::X | Deriv::Y => {
                    let kw = if deriv == Deriv::X {
                        w * m.partner.0 as f64
                    } else {
                        w * m.partner.1 as f64
                    };
                    let ik = Complex64::new(0.0, kw);
                    (ik * amp, -ik * amp.conj())
                }
            };
            if ip == im {
                out[ip] += scale * plus.re;
            } else {
                out[ip] += scale * plus;
                out[im] += scale * minus;
            }
        }
    }

    fn extract(&self, values: impl Iterator<Item = Complex64>) -> Vec<f64> {
        let l = self.grid.side;
        self.modes()
            .iter()
            .zip(values)
            .map(|(m, v)| match m.kind {
                ModeKind::SelfConjugate => l * v.re,
                ModeKind::Cos => SQRT_2 * l * v.re,
                ModeKind::Sin => -SQRT_2 * l * v.im,
            })
            .collect()
    }

    /// Evaluate coefficients on the native grid.
    pub fn synthesize_native(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.k);
        let mut buf = vec![Complex64::default(); self.grid.len()];
        self.accumulate(&mut buf, coeffs, &self.native_pos, Deriv::None, Complex64::new(1.0, 0.0));
        self.native.inverse(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    /// Project native-grid values onto the retained modes.
    pub fn analyze_native(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.grid.len() {
            return Err(Error::SizeMismatch { expected: self.grid.len(), got: values.len() });
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.native.forward(&mut buf);
        let norm = 1.0 / self.grid.len() as f64;
        Ok(self.extract(self.native_pos.iter().map(|&(ip, _)| buf[ip] * norm)))
    }

    /// Evaluate two (possibly differentiated) fields on the padded grid in
    /// one complex transform.
    pub(crate) fn padded_pair(
        &self,
        a: (&[f64], Deriv),
        b: (&[f64], Deriv),
    ) -> (Vec<f64>, Vec<f64>) {
        debug_assert!(self.dealias_ok);
        let mut buf = vec![Complex64::default(); self.padded.len()];
        self.accumulate(&mut buf, a.0, &self.padded_pos, a.1, Complex64::new(1.0, 0.0));
        self.accumulate(&mut buf, b.0, &self.padded_pos, b.1, Complex64::new(0.0, 1.0));
        self.padded.inverse_pruned(&mut buf, &self.padded_cols);
        buf.into_iter().map(|z| (z.re, z.im)).unzip()
    }

    pub(crate) fn padded_single(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert!(self.dealias_ok);
        let mut buf = vec![Complex64::default(); self.padded.len()];
        self.accumulate(&mut buf, coeffs, &self.padded_pos, Deriv::None, Complex64::new(1.0, 0.0));
        self.padded.inverse_pruned(&mut buf, &self.padded_cols);
        buf.into_iter().map(|z| z.re).collect()
    }

    pub(crate) fn project_single(&self, values: &[f64]) -> Vec<f64> {
        let zero = vec![0.0; values.len()];
        self.project_pair(values, &zero).0
    }

    /// Fourier amplitudes at each retained `+p` of two real padded-grid
    /// fields.
    pub(crate) fn padded_analyze_pair(&self, a: &[f64], b: &[f64]) -> Vec<(Complex64, Complex64)> {
        debug_assert!(self.dealias_ok);
        let mut buf: Vec<Complex64> =
            a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.padded.forward_pruned(&mut buf, &self.padded_cols);
        let norm = 1.0 / self.padded.len() as f64;
        self.padded_pos
            .iter()
            .map(|&(ip, im)| {
                let zp = buf[ip] * norm;
                let zm = buf[im].conj() * norm;
                ((zp + zm) * 0.5, (zp - zm) * Complex64::new(0.0, -0.5))
            })
            .collect()
    }

    /// Projection of two padded-grid products onto the retained modes.
    pub(crate) fn project_pair(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let amps = self.padded_analyze_pair(a, b);
        (self.extract(amps.iter().map(|p| p.0)), self.extract(amps.iter().map(|p| p.1)))
    }

    /// Projection of `div (fx, fy)` onto the retained modes.
    pub(crate) fn project_divergence(&self, fx: &[f64], fy: &[f64]) -> Vec<f64> {
        let amps = self.padded_analyze_pair(fx, fy);
        let w = self.grid.wavenumber();
        self.extract(self.modes().iter().zip(amps).map(|(m, (ax, ay))| {
            let (pj, pk) = m.partner;
            Complex64::new(0.0, w * pj as f64) * ax + Complex64::new(0.0, w * pk as f64) * ay
        }))
    }
}

/// Scalar field: coefficients against the retained eigenbasis.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub coeffs: Vec<f64>,
    basis: Arc<Basis>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn zeros(basis: &Arc<Basis>) -> Self {
        Self { coeffs: vec![0.0; basis.len()], basis: basis.clone() }
    }

    pub fn from_coeffs(basis: &Arc<Basis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::SizeMismatch { expected: basis.len(), got: coeffs.len() });
        }
        Ok(Self { coeffs, basis: basis.clone() })
    }

    /// Unit coefficient on sorted mode `index`.
    pub fn mode(basis: &Arc<Basis>, index: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[index] = 1.0;
        f
    }

    /// Spatially constant field with value `value`.
    pub fn constant(basis: &Arc<Basis>, value: f64) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[0] = value * basis.grid().side;
        f
    }

    /// Forward transform of native-grid values.
    pub fn from_physical(basis: &Arc<Basis>, values: &[f64]) -> Result<Self> {
        Ok(Self { coeffs: basis.analyze_native(values)?, basis: basis.clone() })
    }

    /// Project a function of position onto the retained modes.
    pub fn from_fn(basis: &Arc<Basis>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values: Vec<f64> = basis.grid().nodes().map(|(x, y)| f(x, y)).collect();
        Self::from_physical(basis, &values).expect("node count matches grid")
    }

    pub fn to_physical(&self) -> Vec<f64> {
        self.basis.synthesize_native(&self.coeffs)
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Spatial mean value.
    pub fn mean(&self) -> f64 {
        self.coeffs[0] / self.basis.grid().side
    }

    /// `∫ f dx`.
    pub fn integral(&self) -> f64 {
        self.coeffs[0] * self.basis.grid().side
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `(Σ (1+λ_k)^s c_k²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        if s == 0.0 {
            return self.l2_norm();
        }
        self.basis
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(m, c)| (1.0 + m.lambda).powf(s) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// Quadrature `L^p` norm on the native grid; `p = ∞` gives the nodal max.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidArgument(format!("L^p norm needs p >= 1, got {p}")));
        }
        let values = self.to_physical();
        if p.is_infinite() {
            return Ok(values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())));
        }
        let h = self.basis.grid().cell_area();
        let sum: f64 = values.iter().map(|v| v.abs().powf(p)).sum();
        Ok((h * sum).powf(1.0 / p))
    }

    /// Multiply every coefficient by `e^{-δ λ_k}`.
    pub fn heat_smooth(&self, delta: f64) -> Self {
        self.map_modes(|m, c| c * (-delta * m.lambda).exp())
    }

    /// Apply `(-Δ)^a`. The zero mode is kept for `a = 0` and removed
    /// otherwise.
    pub fn neg_laplacian_power(&self, a: f64) -> Self {
        self.map_modes(|m, c| {
            if m.lambda > 0.0 {
                c * m.lambda.powf(a)
            } else if a == 0.0 {
                c
            } else {
                0.0
            }
        })
    }

    pub fn map_modes(&self, f: impl Fn(&Mode, f64) -> f64) -> Self {
        let coeffs =
            self.basis.modes().iter().zip(&self.coeffs).map(|(m, &c)| f(m, c)).collect();
        Self { coeffs, basis: self.basis.clone() }
    }

    /// L² inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| a * c).collect(), basis: self.basis.clone() }
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| x + a * y).collect();
        Self { coeffs, basis: self.basis.clone() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Gradient, truncated to the retained modes.
    pub fn gradient(&self) -> VectorField {
        // ∂(a cos θ) = -a w sin θ and ∂(b sin θ) = b w cos θ
        let basis = &self.basis;
        let eigen = basis.eigen();
        let mut gx = vec![0.0; basis.len()];
        let mut gy = vec![0.0; basis.len()];
        let index: std::collections::HashMap<(i32, i32), usize> =
            basis.modes().iter().enumerate().map(|(i, m)| ((m.j, m.k), i)).collect();
        for (m, &c) in basis.modes().iter().zip(&self.coeffs) {
            if c == 0.0 || m.kind == ModeKind::SelfConjugate {
                continue;
            }
            let (pj, pk) = m.partner;
            let (target, sign) = match m.kind {
                ModeKind::Cos => ((wrap(-pj, eigen.grid.nx), wrap(-pk, eigen.grid.ny)), -1.0),
                _ => ((pj, pk), 1.0),
            };
            if let Some(&t) = index.get(&target) {
                gx[t] += sign * c * m.wave[0];
                gy[t] += sign * c * m.wave[1];
            }
        }
        VectorField {
            x: Self { coeffs: gx, basis: basis.clone() },
            y: Self { coeffs: gy, basis: basis.clone() },
        }
    }

    /// Skew gradient `(-∂_y ψ, ∂_x ψ)`, divergence free by construction.
    pub fn skew_gradient(&self) -> VectorField {
        let g = self.gradient();
        VectorField { x: g.y.scale(-1.0), y: g.x }
    }
}

/// Two-component vector field on a shared basis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: SpectralField,
    pub y: SpectralField,
}

impl VectorField {
    pub fn zeros(basis: &Arc<Basis>) -> Self {
        Self { x: SpectralField::zeros(basis), y: SpectralField::zeros(basis) }
    }

    pub fn basis(&self) -> &Arc<Basis> {
        self.x.basis()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.x.dot(&self.x) + self.y.dot(&self.y)).sqrt()
    }

    /// `(Σ_k λ_k |u_k|²)^{1/2}`, the L² norm of the gradient.
    pub fn gradient_norm(&self) -> f64 {
        self.x
            .basis()
            .modes()
            .iter()
            .zip(self.x.coeffs.iter().zip(&self.y.coeffs))
            .map(|(m, (a, b))| m.lambda * (a * a + b * b))
            .sum::<f64>()
            .sqrt()
    }

    /// L² norm of the divergence, `(Σ_k (w_k · u_k)²)^{1/2}`.
    pub fn divergence_norm(&self) -> f64 {
        self.x
            .basis()
            .modes()
            .iter()
            .zip(self.x.coeffs.iter().zip(&self.y.coeffs))
            .map(|(m, (a, b))| {
                let d = m.wave[0] * a + m.wave[1] * b;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x.dot(&other.x) + self.y.dot(&other.y)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { x: self.x.scale(a), y: self.y.scale(a) }
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        Self { x: self.x.axpy(a, &other.x), y: self.y.axpy(a, &other.y) }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn map_modes(&self, f: impl Fn(&Mode, f64) -> f64 + Copy) -> Self {
        Self { x: self.x.map_modes(f), y: self.y.map_modes(f) }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Leray projection onto divergence-free fields. Modes with zero
    /// derivative wavevector (the mean) pass through unchanged.
    pub fn helmholtz_project(&self) -> Self {
        let basis = self.basis();
        let mut x = self.x.coeffs.clone();
        let mut y = self.y.coeffs.clone();
        for (i, m) in basis.modes().iter().enumerate() {
            let [wx, wy] = m.wave;
            let w2 = wx * wx + wy * wy;
            if w2 == 0.0 {
                continue;
            }
            let d = (wx * x[i] + wy * y[i]) / w2;
            x[i] -= d * wx;
            y[i] -= d * wy;
        }
        Self {
            x: SpectralField { coeffs: x, basis: basis.clone() },
            y: SpectralField { coeffs: y, basis: basis.clone() },
        }
    }

    /// Drop the spatial mean of both components.
    pub fn without_mean(&self) -> Self {
        let mut out = self.clone();
        out.x.coeffs[0] = 0.0;
        out.y.coeffs[0] = 0.0;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(n: usize, k: usize) -> Arc<Basis> {
        Basis::new(Grid::square(n).unwrap(), k).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(3, 4, 1.0).is_err());
        assert!(Grid::new(4, 2, 1.0).is_err());
        assert!(Grid::new(4, 4, 0.0).is_err());
        assert!(Basis::new(Grid::square(4).unwrap(), 17).is_err());
        assert!(Basis::new(Grid::square(4).unwrap(), 0).is_err());
    }

    #[test]
    fn four_by_four_spectrum() {
        let e = build_eigenbasis(&Grid::square(4).unwrap());
        let l: Vec<f64> = e.lambdas().take(10).collect();
        assert_eq!(l, vec![0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 4.0]);
        assert_eq!(e.len(), 16);
        assert_eq!(e.modes[e.index_of(1, 1).unwrap()].lambda, 2.0);
    }

    #[test]
    fn ties_are_lexicographic() {
        let e = build_eigenbasis(&Grid::square(8).unwrap());
        let shell: Vec<(i32, i32)> =
            e.modes.iter().filter(|m| m.lambda == 1.0).map(|m| (m.j, m.k)).collect();
        assert_eq!(shell, vec![(-1, 0), (0, -1), (0, 1), (1, 0)]);
    }

    #[test]
    fn constant_field_has_only_constant_coefficient() {
        let b = basis(8, 64);
        let f = SpectralField::from_physical(&b, &vec![1.0; 64]).unwrap();
        assert!((f.coeffs[0] - 2.0 * PI).abs() < 1e-12);
        assert!(f.coeffs[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn sampled_eigenfunction_gives_unit_coefficient() {
        let b = basis(8, 64);
        let idx = b.eigen().index_of(1, 0).unwrap();
        let m = b.modes()[idx];
        let f = SpectralField::from_fn(&b, |x, y| m.eval(b.grid(), x, y));
        for (i, c) in f.coeffs.iter().enumerate() {
            let expect = if i == idx { 1.0 } else { 0.0 };
            assert!((c - expect).abs() < 1e-12, "mode {i}: {c}");
        }
    }

    #[test]
    fn every_native_label_is_orthonormal_on_the_grid() {
        let g = Grid::new(6, 4, 2.0).unwrap();
        let b = Basis::new(g, g.len()).unwrap();
        for (i, m) in b.modes().iter().enumerate() {
            let f = SpectralField::from_fn(&b, |x, y| m.eval(&g, x, y));
            for (j, c) in f.coeffs.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((c - expect).abs() < 1e-12, "{:?} vs {j}: {c}", m);
            }
        }
    }

    #[test]
    fn neg_laplacian_power_zero_mode_rule() {
        let b = basis(8, 30);
        let c = SpectralField::constant(&b, 2.0);
        assert!(c.neg_laplacian_power(-1.0).l2_norm() == 0.0);
        assert_eq!(c.neg_laplacian_power(0.0), c);
        let idx = b.modes().iter().position(|m| m.lambda == 4.0).unwrap();
        let f = SpectralField::mode(&b, idx).neg_laplacian_power(1.0);
        assert!((f.coeffs[idx] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn heat_smooth_examples() {
        let b = basis(8, 30);
        let idx = b.modes().iter().position(|m| m.lambda == 2.0).unwrap();
        let f = SpectralField::mode(&b, idx);
        assert_eq!(f.heat_smooth(0.0), f);
        assert!((f.heat_smooth(0.5).coeffs[idx] - (-1.0f64).exp()).abs() < 1e-15);
        let c = SpectralField::constant(&b, 3.0);
        assert_eq!(c.heat_smooth(7.0), c);
    }

    #[test]
    fn sobolev_norm_of_unit_mode() {
        let b = basis(8, 30);
        let f = SpectralField::mode(&b, 1);
        assert!((f.sobolev_norm(-1.0) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lp_norm_examples() {
        let b = basis(16, 40);
        let c = SpectralField::constant(&b, -3.0);
        let area = b.grid().area();
        for p in [1.0, 2.0, 3.5] {
            let expect = 3.0 * area.powf(1.0 / p);
            assert!((c.lp_norm(p).unwrap() - expect).abs() < 1e-10 * expect);
        }
        let cosx = SpectralField::from_fn(&b, |x, _| x.cos());
        assert!((cosx.lp_norm(f64::INFINITY).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosx.lp_norm(0.5).is_err());
    }

    #[test]
    fn gradient_of_cosine() {
        let b = basis(16, 40);
        let f = SpectralField::from_fn(&b, |x, y| (2.0 * x + y).cos());
        let g = f.gradient();
        let gx = SpectralField::from_fn(&b, |x, y| -2.0 * (2.0 * x + y).sin());
        let gy = SpectralField::from_fn(&b, |x, y| -(2.0 * x + y).sin());
        assert!(g.x.sub(&gx).l2_norm() < 1e-12);
        assert!(g.y.sub(&gy).l2_norm() < 1e-12);
    }

    #[test]
    fn padded_products_are_exact_for_band_limited_fields() {
        let b = basis(16, 40);
        let f = SpectralField::from_fn(&b, |x, y| x.cos() + (x + y).sin());
        let g = SpectralField::from_fn(&b, |x, y| y.sin() - 0.5 * x.cos());
        let (pf, pg) = b.padded_pair((&f.coeffs, Deriv::None), (&g.coeffs, Deriv::None));
        let prod: Vec<f64> = pf.iter().zip(&pg).map(|(a, c)| a * c).collect();
        let zero = vec![0.0; prod.len()];
        let (fg, _) = b.project_pair(&prod, &zero);
        let direct = SpectralField::from_fn(&b, |x, y| {
            (x.cos() + (x + y).sin()) * (y.sin() - 0.5 * x.cos())
        });
        for (a, c) in fg.iter().zip(&direct.coeffs) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_derivatives_and_divergence() {
        let b = basis(16, 60);
        let f = SpectralField::from_fn(&b, |x, y| (x - 2.0 * y).sin());
        let (fx, fy) = b.padded_pair((&f.coeffs, Deriv::X), (&f.coeffs, Deriv::Y));
        let (mx, _) = b.padded_dims();
        let h = b.grid().side / mx as f64;
        for idx in [0usize, 17, fx.len() - 1] {
            let x = (idx % mx) as f64 * h;
            let y = (idx / mx) as f64 * h;
            assert!((fx[idx] - (x - 2.0 * y).cos()).abs() < 1e-12);
            assert!((fy[idx] + 2.0 * (x - 2.0 * y).cos()).abs() < 1e-12);
        }
        // div ∇f = Δf = -5 f
        let lap = b.project_divergence(&fx, &fy);
        for (a, c) in lap.iter().zip(&f.coeffs) {
            assert!((a + 5.0 * c).abs() < 1e-11);
        }
    }
}
