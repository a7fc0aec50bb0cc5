//! Wiener increments and the colored noise operators.
//!
//! Three independent cylindrical Wiener processes drive the system: `W1`
//! (cell density), `W2` (chemoattractant) and a two-component `W3`
//! (velocity). Increments are drawn from a counter-based stream keyed by
//! `(master_seed, path_id, step, process)`; within a key the draws are in
//! sorted mode order, so a path truncated at `K` is a prefix of the same
//! path at any larger `K`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{Basis, Deriv, EigenData, Mode, ModeKind, SpectralField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub k: usize,
    pub master_seed: u64,
}

impl NoiseConfig {
    /// Intensities for which every noise operator is Hilbert–Schmidt in two
    /// dimensions.
    pub fn admissible(&self) -> bool {
        self.gamma1 > 2.0 && self.gamma2 > 2.0 && self.gamma3 > 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Process {
    W1 = 0,
    W2 = 1,
    W3x = 2,
    W3y = 3,
}

impl Process {
    pub const ALL: [Process; 4] = [Process::W1, Process::W2, Process::W3x, Process::W3y];
}

const PROCESSES: usize = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream for one `(master, path, step, process)` key.
pub fn stream_key(master_seed: u64, path_id: u64, step: u64, process: Process) -> u64 {
    let mut h = splitmix64(master_seed);
    h = splitmix64(h ^ path_id);
    h = splitmix64(h ^ step);
    splitmix64(h ^ process as u64)
}

/// Derived path id, used for fresh streams after a stopping time.
pub fn derive_path_id(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Pre-sampled increments of all four scalar processes.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub path_id: u64,
    pub dt: f64,
    steps: usize,
    k: usize,
    data: Vec<f64>,
}

impl NoisePath {
    pub fn sample(config: &NoiseConfig, steps: usize, dt: f64, path_id: u64) -> Result<Self> {
        if steps == 0 || !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise path needs steps >= 1 and dt > 0, got {steps} and {dt}"
            )));
        }
        let k = config.k;
        let sd = dt.sqrt();
        let mut data = vec![0.0; steps * PROCESSES * k];
        for (i, chunk) in data.chunks_mut(k.max(1)).enumerate() {
            let step = (i / PROCESSES) as u64;
            let process = Process::ALL[i % PROCESSES];
            let mut rng =
                ChaCha8Rng::seed_from_u64(stream_key(config.master_seed, path_id, step, process));
            for v in chunk.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = sd * z;
            }
        }
        Ok(Self { path_id, dt, steps, k, data })
    }

    /// A path with every increment zero (noise switched off).
    pub fn zeros(k: usize, steps: usize, dt: f64) -> Self {
        Self { path_id: 0, dt, steps, k, data: vec![0.0; steps * PROCESSES * k] }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn modes(&self) -> usize {
        self.k
    }

    pub fn increment(&self, step: usize, process: Process) -> &[f64] {
        let start = (step * PROCESSES + process as usize) * self.k;
        &self.data[start..start + self.k]
    }

    pub fn increment_mut(&mut self, step: usize, process: Process) -> &mut [f64] {
        let start = (step * PROCESSES + process as usize) * self.k;
        &mut self.data[start..start + self.k]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Sum consecutive blocks of `factor` increments: the same Brownian
    /// path observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let row = PROCESSES * self.k;
        let mut data = vec![0.0; steps * row];
        for (s, out) in data.chunks_mut(row.max(1)).enumerate() {
            for f in 0..factor {
                let src = &self.data[(s * factor + f) * row..(s * factor + f + 1) * row];
                for (o, v) in out.iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        Ok(Self { path_id: self.path_id, dt: self.dt * factor as f64, steps, k: self.k, data })
    }

    /// Window `[start, start + len)` of the path, as a new path.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.steps {
            return Err(Error::NoiseMismatch(format!(
                "window {start}..{} beyond {} steps",
                start + len,
                self.steps
            )));
        }
        let row = PROCESSES * self.k;
        Ok(Self {
            path_id: self.path_id,
            dt: self.dt,
            steps: len,
            k: self.k,
            data: self.data[start * row..(start + len) * row].to_vec(),
        })
    }
}

/// Coefficients `λ_k^{-γ/2} dβ_k` of `(-Δ)^{-γ/2}` applied to the
/// increments; the constant mode carries no weight.
pub fn colored(basis: &Basis, gamma: f64, increments: &[f64]) -> Vec<f64> {
    basis
        .modes()
        .iter()
        .zip(increments)
        .map(|(m, &d)| if m.lambda > 0.0 { m.lambda.powf(-0.5 * gamma) * d } else { 0.0 })
        .collect()
}

/// `g_γ(ψ) dW = Σ_{λ_k>0} λ_k^{-γ/2} (ψ φ_k) dβ_k`, projected onto the
/// retained modes.
pub fn apply_g(psi: &SpectralField, gamma: f64, increments: &[f64]) -> Result<SpectralField> {
    let basis = psi.basis();
    if increments.len() != basis.len() {
        return Err(Error::SizeMismatch { expected: basis.len(), got: increments.len() });
    }
    basis.require_products()?;
    let h = colored(basis, gamma, increments);
    let (p, hv) = basis.padded_pair((&psi.coeffs, Deriv::None), (&h, Deriv::None));
    let prod: Vec<f64> = p.iter().zip(&hv).map(|(a, b)| a * b).collect();
    let zero = vec![0.0; prod.len()];
    let (coeffs, _) = basis.project_pair(&prod, &zero);
    SpectralField::from_coeffs(basis, coeffs)
}

/// `σ_γ dW3`: colored noise in each velocity component, then the Leray
/// projection. `scale` multiplies the whole operator.
pub fn apply_sigma(
    basis: &Arc<Basis>,
    gamma3: f64,
    dx: &[f64],
    dy: &[f64],
    scale: f64,
) -> Result<VectorField> {
    for d in [dx, dy] {
        if d.len() != basis.len() {
            return Err(Error::SizeMismatch { expected: basis.len(), got: d.len() });
        }
    }
    let mut x = colored(basis, gamma3, dx);
    let mut y = colored(basis, gamma3, dy);
    if scale != 1.0 {
        x.iter_mut().chain(y.iter_mut()).for_each(|v| *v *= scale);
    }
    let v = VectorField {
        x: SpectralField::from_coeffs(basis, x)?,
        y: SpectralField::from_coeffs(basis, y)?,
    };
    Ok(v.helmholtz_project())
}

type Wave = (i32, i32);

/// Continuum Fourier amplitudes of `a φ_m`, `φ = Σ F_w e^{i w·x 2π/L}`.
fn mode_amplitudes(m: &Mode, a: f64, l: f64, out: &mut Vec<(Wave, Complex64)>) {
    let (pj, pk) = m.partner;
    let amp = match m.kind {
        ModeKind::SelfConjugate if (pj, pk) == (0, 0) => {
            out.push(((0, 0), Complex64::new(a / l, 0.0)));
            return;
        }
        ModeKind::SelfConjugate => Complex64::new(a / (2.0 * l), 0.0),
        ModeKind::Cos => Complex64::new(a / (SQRT_2 * l), 0.0),
        ModeKind::Sin => Complex64::new(0.0, -a / (SQRT_2 * l)),
    };
    out.push(((pj, pk), amp));
    out.push(((-pj, -pk), amp.conj()));
}

fn amplitudes(field: &SpectralField) -> Vec<(Wave, Complex64)> {
    let l = field.basis().grid().side;
    let mut out = Vec::with_capacity(2 * field.len());
    for (m, &a) in field.basis().modes().iter().zip(&field.coeffs) {
        if a != 0.0 {
            mode_amplitudes(m, a, l, &mut out);
        }
    }
    out
}

/// The Itô correction `D = Σ_{λ_k>0} λ_k^{-γ} (P φ_k)²` of the iterated
/// multiplicative noise, as a dense `K × K` matrix on the retained modes
/// (`P` is the projection onto those modes). `E[P(H P(H f))] = D f dt`
/// for `H = Σ λ_k^{-γ/2} φ_k dβ_k`.
#[derive(Debug, Clone)]
pub struct ItoCorrection {
    k: usize,
    matrix: Vec<f64>,
}

impl ItoCorrection {
    pub fn new(basis: &Basis, gamma: f64) -> Self {
        let l = basis.grid().side;
        let modes = basis.modes();
        let k = modes.len();
        // wave -> retained modes carrying it, with conj amplitude scaled by L²
        let mut by_wave: HashMap<Wave, Vec<(usize, Complex64)>> = HashMap::new();
        let mut amps = Vec::new();
        for (r, m) in modes.iter().enumerate() {
            amps.clear();
            mode_amplitudes(m, 1.0, l, &mut amps);
            for &(w, a) in &amps {
                by_wave.entry(w).or_default().push((r, a.conj() * (l * l)));
            }
        }
        let unit: Vec<Vec<(Wave, Complex64)>> = modes
            .iter()
            .map(|m| {
                let mut v = Vec::new();
                mode_amplitudes(m, 1.0, l, &mut v);
                v
            })
            .collect();

        // P(φ_k f) for f given as sparse retained coefficients
        let multiply = |kk: usize, f: &[(usize, f64)], out: &mut BTreeMap<usize, f64>| {
            let mut prod: BTreeMap<Wave, Complex64> = BTreeMap::new();
            for &(r, c) in f {
                for &(w1, a1) in &unit[r] {
                    for &(w2, a2) in &unit[kk] {
                        *prod.entry((w1.0 + w2.0, w1.1 + w2.1)).or_default() += a1 * a2 * c;
                    }
                }
            }
            out.clear();
            for (w, v) in prod {
                if let Some(targets) = by_wave.get(&w) {
                    for &(r, ca) in targets {
                        *out.entry(r).or_default() += (v * ca).re;
                    }
                }
            }
        };

        let mut matrix = vec![0.0; k * k];
        let mut once = BTreeMap::new();
        let mut twice = BTreeMap::new();
        for (kk, m) in modes.iter().enumerate() {
            if m.lambda <= 0.0 {
                continue;
            }
            let weight = m.lambda.powf(-gamma);
            for j in 0..k {
                multiply(kk, &[(j, 1.0)], &mut once);
                let mut v1: Vec<(usize, f64)> = once.iter().map(|(&r, &c)| (r, c)).collect();
                v1.sort_unstable_by_key(|e| e.0);
                multiply(kk, &v1, &mut twice);
                for (&r, &c) in &twice {
                    matrix[r * k + j] += weight * c;
                }
            }
        }
        Self { k, matrix }
    }

    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.k);
        self.matrix
            .chunks(self.k)
            .map(|row| row.iter().zip(coeffs).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.k + col]
    }
}

/// Hilbert–Schmidt norm of `g_γ(ψ)` into `H^s`, truncated to the first
/// `k` sorted modes of `eigen`:
/// `(Σ_{k, λ_k>0} λ_k^{-γ} |ψ φ_k|²_{H^s})^{1/2}`.
///
/// Products `ψ φ_k` are evaluated exactly in Fourier space, so `k` may
/// exceed the truncation of `ψ`.
pub fn hs_norm_g(psi: &SpectralField, gamma: f64, s: f64, eigen: &EigenData, k: usize) -> f64 {
    hs_partial_sums(psi, gamma, s, eigen, &[k])[0].sqrt()
}

/// Squared HS partial sums at each requested truncation (ascending order
/// not required).
pub fn hs_partial_sums(
    psi: &SpectralField,
    gamma: f64,
    s: f64,
    eigen: &EigenData,
    ks: &[usize],
) -> Vec<f64> {
    let kmax = ks.iter().copied().max().unwrap_or(0).min(eigen.len());
    let l = eigen.grid.side;
    let w = eigen.grid.wavenumber();
    let psi_amp = amplitudes(psi);
    let mut terms = vec![0.0; kmax];
    let mut acc: BTreeMap<(i32, i32), Complex64> = BTreeMap::new();
    for (idx, m) in eigen.modes[..kmax].iter().enumerate() {
        if m.lambda <= 0.0 {
            continue;
        }
        let (pj, pk) = m.partner;
        // φ_k = c₊ e^{ip·x} + c₋ e^{-ip·x}
        let (cp, cm) = match m.kind {
            ModeKind::SelfConjugate => {
                let c = Complex64::new(1.0 / (2.0 * l), 0.0);
                (c, c)
            }
            ModeKind::Cos => {
                let c = Complex64::new(1.0 / (SQRT_2 * l), 0.0);
                (c, c)
            }
            ModeKind::Sin => {
                let c = Complex64::new(0.0, -1.0 / (SQRT_2 * l));
                (c, c.conj())
            }
        };
        acc.clear();
        for &((qj, qk), a) in &psi_amp {
            *acc.entry((qj + pj, qk + pk)).or_default() += cp * a;
            *acc.entry((qj - pj, qk - pk)).or_default() += cm * a;
        }
        let norm2: f64 = acc
            .iter()
            .map(|(&(j, k), f)| {
                let lam = w * w * ((j * j + k * k) as f64);
                let weight = if s == 0.0 { 1.0 } else { (1.0 + lam).powf(s) };
                weight * f.norm_sqr()
            })
            .sum::<f64>()
            * l
            * l;
        terms[idx] = m.lambda.powf(-gamma) * norm2;
    }
    let mut prefix = Vec::with_capacity(kmax + 1);
    prefix.push(0.0);
    for t in &terms {
        prefix.push(prefix.last().unwrap() + t);
    }
    ks.iter().map(|&k| prefix[k.min(kmax)]).collect()
}

/// Truncated series with a rigorous bound on the omitted tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// Upper bound on `Σ_{λ>Λ} λ^{-γ}` over the lattice spectrum with unit
/// wavenumber `w`, from the disk count `N(λ) ≤ π(√λ/w + 1/√2)²`.
pub fn lattice_tail_bound(gamma: f64, lambda_cut: f64, w: f64) -> f64 {
    if gamma <= 1.0 {
        return f64::INFINITY;
    }
    if lambda_cut <= 0.0 {
        return f64::INFINITY;
    }
    let a = lambda_cut;
    gamma
        * PI
        * (a.powf(1.0 - gamma) / (w * w * (gamma - 1.0))
            + SQRT_2 / w * a.powf(0.5 - gamma) / (gamma - 0.5)
            + 0.5 * a.powf(-gamma) / gamma)
}

/// `θ = ½ Σ_{k<K, λ_k>0} λ_k^{-γ₁}` with its tail bound.
pub fn ito_theta(gamma1: f64, eigen: &EigenData, k: usize) -> SeriesValue {
    let k = k.min(eigen.len());
    let value = 0.5
        * eigen.modes[..k]
            .iter()
            .filter(|m| m.lambda > 0.0)
            .map(|m| m.lambda.powf(-gamma1))
            .sum::<f64>();
    let cut = if k == 0 { 0.0 } else { eigen.modes[k - 1].lambda };
    let tail_bound = 0.5 * lattice_tail_bound(gamma1, cut, eigen.grid.wavenumber());
    SeriesValue { value, tail_bound }
}

/// `α = ζ - γ₂²/2`; warns when the damping is no longer coercive.
pub fn ito_alpha(zeta: f64, gamma2: f64) -> f64 {
    let alpha = zeta - 0.5 * gamma2 * gamma2;
    if alpha <= 0.0 {
        log::warn!("alpha = {alpha} <= 0: damping of the chemoattractant equation is lost");
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Grid;

    fn config() -> NoiseConfig {
        NoiseConfig { gamma1: 2.5, gamma2: 2.5, gamma3: 1.5, k: 40, master_seed: 7 }
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_stable() {
        let a = NoisePath::sample(&config(), 5, 1e-3, 3).unwrap();
        let b = NoisePath::sample(&config(), 5, 1e-3, 3).unwrap();
        assert_eq!(a, b);
        let wide = NoisePath::sample(&NoiseConfig { k: 60, ..config() }, 5, 1e-3, 3).unwrap();
        assert_eq!(wide.increment(4, Process::W2)[..40], *a.increment(4, Process::W2));
        let other = NoisePath::sample(&config(), 5, 1e-3, 4).unwrap();
        assert_ne!(a, other);
        assert!(NoisePath::sample(&config(), 0, 1e-3, 0).is_err());
    }

    #[test]
    fn coarsen_sums_blocks() {
        let p = NoisePath::sample(&config(), 8, 1e-3, 0).unwrap();
        let c = p.coarsen(4).unwrap();
        assert_eq!(c.steps(), 2);
        let direct: f64 = (4..8).map(|s| p.increment(s, Process::W3y)[7]).sum();
        assert!((c.increment(1, Process::W3y)[7] - direct).abs() < 1e-15);
        assert!(p.coarsen(3).is_err());
    }

    #[test]
    fn theta_examples() {
        let e = crate::spectral::build_eigenbasis(&Grid::square(64).unwrap());
        assert_eq!(ito_theta(2.5, &e, 0).value, 0.0);
        assert!((ito_theta(20.0, &e, 200).value - 2.0).abs() < 1e-4);
        let t = ito_theta(2.5, &e, 200);
        assert!(t.tail_bound > 0.0 && t.tail_bound < t.value);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(ito_alpha(5.0, 2.0), 3.0);
        assert_eq!(ito_alpha(2.0, 2.0), 0.0);
        assert_eq!(ito_alpha(5.0, 2.5), 1.875);
    }

    #[test]
    fn apply_g_of_constant_is_a_scaled_mode() {
        let b = Basis::new(Grid::square(16).unwrap(), 40).unwrap();
        let idx = b.modes().iter().position(|m| m.lambda == 4.0).unwrap();
        let mut inc = vec![0.0; 40];
        inc[idx] = 0.3;
        let out = apply_g(&SpectralField::constant(&b, 1.0), 2.0, &inc).unwrap();
        let expect = SpectralField::mode(&b, idx).scale(0.3 / 4.0);
        assert!(out.sub(&expect).l2_norm() < 1e-14);
        let zero = apply_g(&SpectralField::zeros(&b), 2.0, &inc).unwrap();
        assert!(zero.l2_norm() < 1e-15);
    }

    #[test]
    fn sigma_is_divergence_free() {
        let b = Basis::new(Grid::square(16).unwrap(), 40).unwrap();
        let p = NoisePath::sample(&NoiseConfig { k: 40, ..config() }, 1, 1e-2, 0).unwrap();
        let v = apply_sigma(&b, 1.5, p.increment(0, Process::W3x), p.increment(0, Process::W3y), 1.0)
            .unwrap();
        assert!(v.l2_norm() > 0.0);
        assert!(v.divergence_norm() <= 1e-12 * v.l2_norm());
    }

    #[test]
    fn hs_norm_of_constant_is_the_plain_series() {
        let g = Grid::square(32).unwrap();
        let b = Basis::new(g, 40).unwrap();
        let e = b.eigen();
        let one = SpectralField::constant(&b, 1.0);
        let direct: f64 = e.modes[..300]
            .iter()
            .filter(|m| m.lambda > 0.0)
            .map(|m| m.lambda.powf(-2.5))
            .sum();
        // |1·φ_k|_{L²} = 1
        let hs = hs_norm_g(&one, 2.5, 0.0, e, 300);
        assert!((hs * hs - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn tail_bound_dominates_the_actual_tail() {
        let e = crate::spectral::build_eigenbasis(&Grid::square(128).unwrap());
        let full: f64 = e.modes.iter().skip(1).map(|m| m.lambda.powf(-2.5)).sum();
        for k in [50, 200, 800] {
            let t = ito_theta(2.5, &e, k);
            assert!(2.0 * (full * 0.5 - t.value) <= 2.0 * t.tail_bound);
        }
    }
}
