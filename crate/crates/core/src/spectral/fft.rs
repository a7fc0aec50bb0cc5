//! Two-dimensional complex FFTs on a rectangular periodic grid.
//!
//! Arrays are row-major with the x index fastest: `data[iy * nx + ix]`.
//! Transforms are unnormalized in both directions; callers divide by
//! `nx * ny` after a forward transform.
//!
//! Band-limited spectra only occupy a few x-wavenumber columns, so the
//! pruned variants skip the column transforms of columns known to be zero
//! (synthesis) or not needed (analysis).

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("nx", &self.nx).field("ny", &self.ny).finish()
    }
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            row_fwd: planner.plan_fft_forward(nx),
            row_inv: planner.plan_fft_inverse(nx),
            col_fwd: planner.plan_fft_forward(ny),
            col_inv: planner.plan_fft_inverse(ny),
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn columns(&self, data: &mut [Complex64], cols: &[usize], inverse: bool) {
        let plan = if inverse { &self.col_inv } else { &self.col_fwd };
        let mut col = vec![Complex64::default(); self.ny];
        for &ix in cols {
            for (iy, v) in col.iter_mut().enumerate() {
                *v = data[iy * self.nx + ix];
            }
            plan.process(&mut col);
            for (iy, v) in col.iter().enumerate() {
                data[iy * self.nx + ix] = *v;
            }
        }
    }

    fn rows(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.row_inv } else { &self.row_fwd };
        plan.process(data);
    }

    /// Full forward transform, in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len());
        self.rows(data, false);
        let all: Vec<usize> = (0..self.nx).collect();
        self.columns(data, &all, false);
    }

    /// Full inverse transform, in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len());
        let all: Vec<usize> = (0..self.nx).collect();
        self.columns(data, &all, true);
        self.rows(data, true);
    }

    /// Inverse transform of a spectrum whose nonzero entries lie in the
    /// listed x-wavenumber columns.
    pub fn inverse_pruned(&self, data: &mut [Complex64], cols: &[usize]) {
        assert_eq!(data.len(), self.len());
        self.columns(data, cols, true);
        self.rows(data, true);
    }

    /// Forward transform that is only valid in the listed columns.
    pub fn forward_pruned(&self, data: &mut [Complex64], cols: &[usize]) {
        assert_eq!(data.len(), self.len());
        self.rows(data, false);
        self.columns(data, cols, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip() {
        let fft = Fft2::new(6, 4);
        let orig: Vec<Complex64> = (0..24)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut data = orig.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a / 24.0 - b).norm() < 1e-13);
        }
    }

    #[test]
    fn pruned_matches_full_on_band_limited_data() {
        let fft = Fft2::new(8, 8);
        let mut spec = vec![Complex64::default(); 64];
        // columns 1 and 7 (kx = +1, -1)
        spec[2 * 8 + 1] = Complex64::new(1.0, 0.5);
        spec[6 * 8 + 7] = Complex64::new(1.0, -0.5);
        let mut full = spec.clone();
        fft.inverse(&mut full);
        let mut pruned = spec;
        fft.inverse_pruned(&mut pruned, &[1, 7]);
        for (a, b) in full.iter().zip(&pruned) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
