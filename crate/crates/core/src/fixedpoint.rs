//! Pathwise Picard iteration `ξ ↦ n(V_κ(ξ))`, the time-space norm used as
//! its metric, and the shifted Haar projection in time.
//!
//! A scalar trajectory is a slice of `steps + 1` fields on the uniform grid
//! `t_i = i dt`. Time integrals are left-point sums over `i < steps`.

use crate::error::{Error, Result};
use crate::linearized::{solve_linearized, Stepper, SystemState, Trajectory};
use crate::noise::NoisePath;
use crate::spectral::SpectralField;

/// Guard for the relative residual of the zero trajectory.
pub const RESIDUAL_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct FixpointConfig {
    pub kappa: f64,
    /// Time exponent, at least `2q + 2`.
    pub m_star: u32,
    /// Space exponent of `H^{-s}`, `2 / (q + 1)`.
    pub s_star: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Haar projection level applied to every iterate; 0 disables it.
    pub level: u32,
}

impl FixpointConfig {
    /// Smallest admissible `m*` and the matching `s**` for porous exponent `q`.
    pub fn for_exponent(q: f64) -> Self {
        Self {
            kappa: 4.0,
            m_star: (2.0 * q + 2.0).ceil() as u32,
            s_star: 2.0 / (q + 1.0),
            tol: 1e-6,
            max_iter: 30,
            level: 0,
        }
    }

    pub fn validate(&self, q: f64) -> Result<()> {
        if (self.m_star as f64) < 2.0 * q + 2.0 {
            return Err(Error::Config(format!(
                "m_star = {} is below 2q + 2 = {}",
                self.m_star,
                2.0 * q + 2.0
            )));
        }
        let s = 2.0 / (q + 1.0);
        if (self.s_star - s).abs() > 1e-12 {
            return Err(Error::Config(format!("s_star must equal 2/(q+1) = {s}, got {}", self.s_star)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tol must be positive and max_iter at least 1".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// `(Σ_{i<steps} dt |ξ_i|_{H^{-s}}^m)^{1/m}` with `s = s**`, `m = m*`.
pub fn x_norm(xi: &[SpectralField], dt: f64, config: &FixpointConfig) -> f64 {
    let values: Vec<f64> = xi[..xi.len().saturating_sub(1)]
        .iter()
        .map(|f| f.sobolev_norm(-config.s_star))
        .collect();
    lm_norm(&values, dt, config.m_star as f64)
}

/// Discrete `L^m(0,T)` norm of nonnegative samples, rescaled by the
/// largest value so high powers do not underflow.
pub(crate) fn lm_norm(values: &[f64], dt: f64, m: f64) -> f64 {
    let top = values.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0.0;
    }
    let sum: f64 = values.iter().map(|v| dt * (v / top).powf(m)).sum();
    top * sum.powf(1.0 / m)
}

/// Monte-Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// `(E |ξ|_X^m)^{1/m}` from per-path norms; the error is carried through
/// the `1/m` power by the delta method.
pub fn ensemble_mnorm(norms: &[f64], m: u32) -> Result<Estimate> {
    if norms.is_empty() {
        return Err(Error::InvalidArgument("ensemble needs at least one path".into()));
    }
    let m = m as f64;
    let powers: Vec<f64> = norms.iter().map(|x| x.powf(m)).collect();
    let mean = mean_and_se(&powers);
    let value = mean.value.powf(1.0 / m);
    let std_error = if mean.value > 0.0 { value / (m * mean.value) * mean.std_error } else { 0.0 };
    Ok(Estimate { value, std_error })
}

/// Sample mean and `s / √N` (zero for a single sample).
pub fn mean_and_se(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Estimate { value: mean, std_error: 0.0 };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate { value: mean, std_error: (var / n).sqrt() }
}

/// Shifted Haar projection on `2^level` cells: `f(0)` on the first cell,
/// the trapezoidal average over cell `i - 1` on cell `i`. The endpoint
/// `t = T` takes the last cell's value.
pub fn haar_project(f: &[SpectralField], level: u32) -> Result<Vec<SpectralField>> {
    if f.len() < 2 {
        return Err(Error::InvalidArgument("trajectory needs at least one step".into()));
    }
    let steps = f.len() - 1;
    let cells = 1usize
        .checked_shl(level)
        .filter(|&c| c <= steps && steps % c == 0)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("{steps} steps cannot be split into 2^{level} cells"))
        })?;
    let width = steps / cells;
    let mut values = Vec::with_capacity(cells);
    values.push(f[0].clone());
    for cell in 1..cells {
        let start = (cell - 1) * width;
        let mut acc = f[start].scale(0.5).axpy(0.5, &f[start + width]);
        for g in &f[start + 1..start + width] {
            acc = acc.axpy(1.0, g);
        }
        values.push(acc.scale(1.0 / width as f64));
    }
    Ok((0..=steps).map(|i| values[(i / width).min(cells - 1)].clone()).collect())
}

pub fn sub_series(a: &[SpectralField], b: &[SpectralField]) -> Vec<SpectralField> {
    a.iter().zip(b).map(|(x, y)| x.sub(y)).collect()
}

/// `ξ(t) = field` for all `steps + 1` grid times.
pub fn constant_in_time(field: &SpectralField, steps: usize) -> Vec<SpectralField> {
    vec![field.clone(); steps + 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardRecord {
    pub iter: usize,
    /// `|ξ_{j+1} - ξ_j|_X / max(|ξ_j|_X, ε)`.
    pub residual: f64,
    pub x_norm: f64,
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub xi: Vec<SpectralField>,
    /// The last linearized solve; its density is `xi`.
    pub trajectory: Trajectory,
    pub history: Vec<PicardRecord>,
    pub converged: bool,
}

pub fn picard(
    xi0: Vec<SpectralField>,
    stepper: &Stepper,
    init: &SystemState,
    noise: &NoisePath,
    config: &FixpointConfig,
) -> Result<PicardOutcome> {
    let dt = stepper.params().dt;
    let mut xi = xi0;
    let mut history = Vec::new();
    let mut last = None;
    let mut converged = false;
    for iter in 1..=config.max_iter {
        let traj = solve_linearized(stepper, &xi, init, noise, config.kappa)?;
        let mut next = traj.n_series();
        if config.level > 0 {
            next = haar_project(&next, config.level)?;
        }
        let norm = x_norm(&next, dt, config);
        let diff = x_norm(&sub_series(&next, &xi), dt, config);
        let residual = diff / x_norm(&xi, dt, config).max(RESIDUAL_FLOOR);
        history.push(PicardRecord { iter, residual, x_norm: norm });
        xi = next;
        last = Some(traj);
        if residual < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::info!("picard stopped after {} iterations without convergence", config.max_iter);
    }
    Ok(PicardOutcome {
        xi,
        trajectory: last.expect("max_iter >= 1"),
        history,
        converged,
    })
}

/// `|n(V ξ1) - n(V ξ2)|_X / |ξ1 - ξ2|_X` on one noise path; `None` when
/// the inputs coincide.
pub fn lipschitz_probe(
    xi1: &[SpectralField],
    xi2: &[SpectralField],
    stepper: &Stepper,
    init: &SystemState,
    noise: &NoisePath,
    config: &FixpointConfig,
) -> Result<Option<f64>> {
    let dt = stepper.params().dt;
    let denom = x_norm(&sub_series(xi1, xi2), dt, config);
    if denom == 0.0 {
        return Ok(None);
    }
    let a = solve_linearized(stepper, xi1, init, noise, config.kappa)?.n_series();
    let b = solve_linearized(stepper, xi2, init, noise, config.kappa)?.n_series();
    Ok(Some(x_norm(&sub_series(&a, &b), dt, config) / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearized::{solve_coupled, ModelParams};
    use crate::spectral::{Basis, Grid};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn basis() -> Arc<Basis> {
        Basis::new(Grid::square(16).unwrap(), 40).unwrap()
    }

    fn linear_params(b: &Basis, steps: usize) -> ModelParams {
        let mut p = ModelParams::new(b);
        p.chi = 0.0;
        p.delta_n = 0.0;
        p.delta_c = 0.0;
        p.dt = 0.5 / steps as f64;
        p.steps = steps;
        p
    }

    #[test]
    fn x_norm_of_unit_mode() {
        let b = basis();
        let cfg = FixpointConfig::for_exponent(5.0);
        let idx = b.modes().iter().position(|m| m.lambda == 1.0).unwrap();
        let xi = constant_in_time(&SpectralField::mode(&b, idx), 64);
        let expect = 2f64.powf(-1.0 / 6.0);
        assert!((x_norm(&xi, 1.0 / 64.0, &cfg) - expect).abs() < 1e-14);
        let zero = constant_in_time(&SpectralField::zeros(&b), 64);
        assert_eq!(x_norm(&zero, 1.0 / 64.0, &cfg), 0.0);
    }

    #[test]
    fn config_defaults() {
        let cfg = FixpointConfig::for_exponent(5.0);
        assert_eq!(cfg.m_star, 12);
        assert!((cfg.s_star - 1.0 / 3.0).abs() < 1e-15);
        cfg.validate(5.0).unwrap();
        let bad = FixpointConfig { m_star: 11, ..cfg.clone() };
        assert!(bad.validate(5.0).is_err());
        let bad = FixpointConfig { s_star: 0.3, ..cfg };
        assert!(bad.validate(5.0).is_err());
    }

    #[test]
    fn ensemble_examples() {
        let m = 12;
        let one = ensemble_mnorm(&[1.7], m).unwrap();
        assert_eq!(one.value, 1.7);
        assert_eq!(one.std_error, 0.0);
        let same = ensemble_mnorm(&[0.4; 5], m).unwrap();
        assert!((same.value - 0.4).abs() < 1e-15);
        let two = ensemble_mnorm(&[1.0, 2.0], m).unwrap();
        let expect = ((1.0 + 2f64.powi(12)) / 2.0).powf(1.0 / 12.0);
        assert!((two.value - expect).abs() < 1e-14);
        assert!(ensemble_mnorm(&[], m).is_err());
    }

    #[test]
    fn haar_of_linear_ramp() {
        let b = basis();
        let one = SpectralField::constant(&b, 1.0);
        let f: Vec<_> = (0..=8).map(|i| one.scale(i as f64 / 8.0)).collect();
        let p = haar_project(&f, 1).unwrap();
        for (i, g) in p.iter().enumerate() {
            let expect = if i < 4 { 0.0 } else { 0.25 };
            assert!((g.mean() - expect).abs() < 1e-15, "{i}: {}", g.mean());
        }
        let c = constant_in_time(&one, 8);
        assert_eq!(haar_project(&c, 3).unwrap(), c);
        assert!(haar_project(&f, 4).is_err());
        assert!(haar_project(&f[..6], 1).is_err());
    }

    #[test]
    fn haar_error_decreases_with_level() {
        let b = basis();
        let cfg = FixpointConfig::for_exponent(5.0);
        let a = SpectralField::from_fn(&b, |x, y| x.cos() + 0.5 * y.sin());
        let g = SpectralField::from_fn(&b, |x, y| (x + y).sin());
        let f: Vec<_> = (0..=256)
            .map(|i| {
                let t = i as f64 / 256.0;
                a.scale((3.0 * t).cos()).axpy(t * t, &g)
            })
            .collect();
        let mut prev = f64::INFINITY;
        for level in 1..=6 {
            let p = haar_project(&f, level).unwrap();
            let e = x_norm(&sub_series(&p, &f), 1.0 / 256.0, &cfg);
            assert!(e < prev, "level {level}: {e} >= {prev}");
            prev = e;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn x_norm_homogeneous(scale in 0.01f64..100.0, phase in 0.0f64..6.0) {
            let b = basis();
            let cfg = FixpointConfig::for_exponent(5.0);
            let f = SpectralField::from_fn(&b, |x, y| (x + phase).cos() * (2.0 * y).sin() + 0.3);
            let xi: Vec<_> = (0..=32).map(|i| f.scale(1.0 + (i as f64 * 0.2).sin())).collect();
            let scaled: Vec<_> = xi.iter().map(|g| g.scale(scale)).collect();
            let r = x_norm(&scaled, 0.01, &cfg) / x_norm(&xi, 0.01, &cfg);
            prop_assert!((r - scale).abs() <= 1e-12 * scale);
        }

        #[test]
        fn haar_contracts_nondecreasing_norms(
            omega in 0.0f64..20.0,
            growth in 0.0f64..3.0,
            level in 1u32..4,
            j in 0usize..10,
        ) {
            // |f(t)| = (1 + growth t) |a| with a, b orthogonal and of equal norm
            let b = basis();
            let cfg = FixpointConfig::for_exponent(5.0);
            let a = SpectralField::mode(&b, 1 + 2 * j);
            let g = SpectralField::mode(&b, 2 + 2 * j);
            let w = (b.modes()[1 + 2 * j].lambda + 1.0) / (b.modes()[2 + 2 * j].lambda + 1.0);
            let g = g.scale(w.powf(-cfg.s_star / 2.0));
            let f: Vec<_> = (0..=64)
                .map(|i| {
                    let t = i as f64 / 64.0;
                    a.scale((omega * t).cos()).axpy((omega * t).sin(), &g).scale(1.0 + growth * t)
                })
                .collect();
            let p = haar_project(&f, level).unwrap();
            prop_assert!(x_norm(&p, 1.0 / 64.0, &cfg) <= x_norm(&f, 1.0 / 64.0, &cfg) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn picard_linear_regime_matches_coupled_run() {
        let b = basis();
        let p = linear_params(&b, 100);
        let st = Stepper::new(&b, &p).unwrap();
        let init = SystemState::default_initial(&b);
        let noise = NoisePath::zeros(b.len(), p.steps, p.dt);
        let cfg = FixpointConfig { tol: 1e-12, ..FixpointConfig::for_exponent(p.q) };
        let direct = solve_coupled(&st, &init, &noise, cfg.kappa, false).unwrap();

        let start = constant_in_time(&init.n, p.steps);
        let out = picard(start, &st, &init, &noise, &cfg).unwrap();
        assert!(out.converged);
        for w in out.history.windows(2).skip(1) {
            assert!(w[1].residual < w[0].residual, "{:?}", out.history);
        }
        for (a, s) in out.xi.iter().zip(&direct.states) {
            assert!(a.sub(&s.n).l2_norm() < 1e-6);
        }

        let other = constant_in_time(&SpectralField::zeros(&b), p.steps);
        let out2 = picard(other, &st, &init, &noise, &cfg).unwrap();
        let gap = x_norm(&sub_series(&out.xi, &out2.xi), p.dt, &cfg);
        assert!(gap < 10.0 * cfg.tol * x_norm(&out.xi, p.dt, &cfg));
    }

    #[test]
    fn picard_starting_at_fixed_point_stops_at_once() {
        let b = basis();
        let mut p = ModelParams::new(&b);
        p.dt = 2e-3;
        p.steps = 50;
        let st = Stepper::new(&b, &p).unwrap();
        let init = SystemState::default_initial(&b);
        let noise = NoisePath::zeros(b.len(), p.steps, p.dt);
        let cfg = FixpointConfig { tol: 1e-9, ..FixpointConfig::for_exponent(p.q) };
        let first = picard(constant_in_time(&init.n, p.steps), &st, &init, &noise, &cfg).unwrap();
        assert!(first.converged);
        let again = picard(first.xi.clone(), &st, &init, &noise, &cfg).unwrap();
        assert_eq!(again.history.len(), 1);
        assert!(again.history[0].residual < cfg.tol);
        let back = solve_linearized(&st, &first.xi, &init, &noise, cfg.kappa).unwrap().n_series();
        assert!(x_norm(&sub_series(&back, &first.xi), p.dt, &cfg) <= 2.0 * cfg.tol * x_norm(&first.xi, p.dt, &cfg));
    }

    #[test]
    fn lipschitz_probe_contracts_on_short_horizon() {
        let b = basis();
        let mut p = linear_params(&b, 50);
        p.dt = 0.002;
        let st = Stepper::new(&b, &p).unwrap();
        let init = SystemState::default_initial(&b);
        let noise = NoisePath::zeros(b.len(), p.steps, p.dt);
        let cfg = FixpointConfig::for_exponent(p.q);
        let xi1 = constant_in_time(&init.n, p.steps);
        let bump = SpectralField::from_fn(&b, |x, _| 1e-3 * x.sin());
        let xi2: Vec<_> = xi1.iter().map(|f| f.axpy(1.0, &bump)).collect();
        let r = lipschitz_probe(&xi1, &xi2, &st, &init, &noise, &cfg).unwrap().unwrap();
        assert!(r > 0.0 && r < 1.0, "{r}");
        assert_eq!(lipschitz_probe(&xi1, &xi1, &st, &init, &noise, &cfg).unwrap(), None);
    }
}
