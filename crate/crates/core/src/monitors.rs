//! Energy functionals, uniform-in-κ checks, the residual of the integral
//! identities, and the empirical interpolation constant.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixedpoint::{lm_norm, mean_and_se, Estimate};
use crate::linearized::{solve_coupled, Stepper, SystemState, Trajectory};
use crate::noise::{NoiseConfig, NoisePath};
use crate::spectral::SpectralField;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    /// `sup_t |u|²_{L²}`.
    pub sup_u2: f64,
    /// `∫ |∇u|² dt`.
    pub int_u_v: f64,
    pub sup_c2: f64,
    /// `∫ |c|²_{H¹} dt`.
    pub int_c_h1: f64,
    /// `sup_t |n|²_{H^{-1}}`.
    pub sup_n_hm1: f64,
    /// `∫ |n|^{q+1}_{L^{q+1}} dt`.
    pub int_nq: f64,
    pub mass_n: Vec<f64>,
}

impl EnergyReport {
    /// The six terms summed by [`lyapunov`].
    pub fn functionals(&self) -> [f64; 6] {
        [self.sup_u2, self.sup_c2, self.sup_n_hm1, self.int_nq, self.int_c_h1, self.int_u_v]
    }

    /// `∫n(T) - ∫n(0)`.
    pub fn mass_drift(&self) -> f64 {
        match (self.mass_n.first(), self.mass_n.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dt * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

fn sup(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, f64::max)
}

pub fn energy_report(traj: &Trajectory, q: f64) -> Result<EnergyReport> {
    let s = &traj.states;
    let grad_u: Vec<f64> = s.iter().map(|x| x.u.gradient_norm().powi(2)).collect();
    let c_h1: Vec<f64> = s.iter().map(|x| x.c.sobolev_norm(1.0).powi(2)).collect();
    let n_q = s
        .iter()
        .map(|x| x.n.lp_norm(q + 1.0).map(|v| v.powf(q + 1.0)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EnergyReport {
        sup_u2: sup(s.iter().map(|x| x.u.l2_norm().powi(2))),
        int_u_v: trapezoid(&grad_u, traj.dt),
        sup_c2: sup(s.iter().map(|x| x.c.l2_norm().powi(2))),
        int_c_h1: trapezoid(&c_h1, traj.dt),
        sup_n_hm1: sup(s.iter().map(|x| x.n.sobolev_norm(-1.0).powi(2))),
        int_nq: trapezoid(&n_q, traj.dt),
        mass_n: s.iter().map(|x| x.n.integral()).collect(),
    })
}

/// Ensemble mean of `Σ_i F_i^p` over the six functionals.
pub fn lyapunov(reports: &[EnergyReport], p: f64) -> Result<Estimate> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("moment order p = {p} must be >= 1")));
    }
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no energy reports".into()));
    }
    let values: Vec<f64> =
        reports.iter().map(|r| r.functionals().iter().map(|f| f.powf(p)).sum()).collect();
    Ok(mean_and_se(&values))
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaRow {
    pub kappa: f64,
    pub lyapunov: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaCheck {
    pub rows: Vec<KappaRow>,
    pub passed: bool,
    /// Threshold whose ensemble blew up, if any.
    pub blow_up: Option<f64>,
}

/// Coupled cut-off runs over the full horizon for every threshold, on
/// the same `n_paths` noise paths, compared through [`lyapunov`].
pub fn uniform_kappa_check(
    stepper: &Stepper,
    init: &SystemState,
    noise: &NoiseConfig,
    kappas: &[f64],
    n_paths: usize,
    p: f64,
) -> Result<KappaCheck> {
    if kappas.len() < 3 {
        return Err(Error::InvalidArgument("need at least three thresholds".into()));
    }
    let params = stepper.params();
    let mut rows = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let reports: Vec<Result<EnergyReport>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|path| {
                let w = NoisePath::sample(noise, params.steps, params.dt, path)?;
                let traj = solve_coupled(stepper, init, &w, kappa, false)?;
                energy_report(&traj, params.q)
            })
            .collect();
        let mut ok = Vec::with_capacity(n_paths);
        for r in reports {
            match r {
                Ok(rep) => ok.push(rep),
                Err(e) if e.is_blow_up() => {
                    log::warn!("kappa = {kappa}: {e}");
                    return Ok(KappaCheck { rows, passed: false, blow_up: Some(kappa) });
                }
                Err(e) => return Err(e),
            }
        }
        let est = lyapunov(&ok, p)?;
        rows.push(KappaRow { kappa, lyapunov: est.value, std_error: est.std_error });
    }
    let passed = kappa_verdict(&rows);
    Ok(KappaCheck { rows, passed, blow_up: None })
}

/// `max ≤ 1.25 min + 3 √(se_max² + se_min²)`.
pub fn kappa_verdict(rows: &[KappaRow]) -> bool {
    let hi = rows.iter().max_by(|a, b| a.lyapunov.total_cmp(&b.lyapunov));
    let lo = rows.iter().min_by(|a, b| a.lyapunov.total_cmp(&b.lyapunov));
    match (hi, lo) {
        (Some(hi), Some(lo)) => {
            let se = (hi.std_error.powi(2) + lo.std_error.powi(2)).sqrt();
            hi.lyapunov.is_finite() && hi.lyapunov <= 1.25 * lo.lyapunov + 3.0 * se
        }
        _ => false,
    }
}

/// Residual norms of the `n`, `c`, `u` identities at one grid time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefnResidual {
    pub step: usize,
    pub time: f64,
    /// `H^{-1}` norm.
    pub n: f64,
    pub c: f64,
    pub u: f64,
}

/// `X_j - X_0 - Σ_{i<j} ΔX_i` at 8 checkpoints, where `ΔX_i` are the
/// scheme's increments evaluated on the recorded states with `ξ = n` and
/// the cut-off rebuilt from the recorded velocities. `initial` replaces
/// `X_0` when given.
pub fn residual_defn(
    traj: &Trajectory,
    initial: Option<&SystemState>,
    noise: &NoisePath,
    stepper: &Stepper,
) -> Result<Vec<DefnResidual>> {
    let steps = traj.steps();
    if noise.modes() != stepper.basis().len() || noise.steps() < steps {
        return Err(Error::NoiseMismatch(format!(
            "trajectory has {steps} steps over {} modes, noise has {} steps over {} modes",
            stepper.basis().len(),
            noise.steps(),
            noise.modes()
        )));
    }
    if (noise.dt - traj.dt).abs() > 1e-15 * traj.dt {
        return Err(Error::NoiseMismatch(format!("dt {} vs {}", noise.dt, traj.dt)));
    }
    let x0 = initial.unwrap_or(&traj.states[0]);
    let mut checkpoints: Vec<usize> = (1..=8).map(|m| (m * steps).div_ceil(8)).collect();
    checkpoints.dedup();
    checkpoints.retain(|&j| j > 0);

    let mut sum = SystemState::zeros(stepper.basis());
    let mut h = 0.0_f64;
    let mut out = Vec::with_capacity(8);
    let mut next = checkpoints.iter().peekable();
    for i in 0..steps {
        let s = &traj.states[i];
        h = h.max(s.u.l2_norm());
        let cut = stepper.cut_factor(h, traj.kappa);
        let d = stepper.increments(s, &s.n, cut, noise, i)?;
        sum.n = sum.n.axpy(1.0, &d.n);
        sum.c = sum.c.axpy(1.0, &d.c);
        sum.u = sum.u.axpy(1.0, &d.u);
        if next.peek() == Some(&&(i + 1)) {
            next.next();
            let x = &traj.states[i + 1];
            out.push(DefnResidual {
                step: i + 1,
                time: traj.time(i + 1),
                n: x.n.sub(&x0.n).sub(&sum.n).sobolev_norm(-1.0),
                c: x.c.sub(&x0.c).sub(&sum.c).l2_norm(),
                u: x.u.sub(&x0.u).sub(&sum.u).l2_norm(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct InterpolationResult {
    /// Left side over right side per trajectory; `None` for a 0/0 sample.
    pub ratios: Vec<Option<f64>>,
    pub max_ratio: f64,
}

/// Ratio of `|ξ|²_{L^m(H^{-s}_2)}` to
/// `sup_t |ξ|²_{H^{-1}} + ∫ |ξ|^{q+1}_{L^{q+1}}` for each sampled
/// trajectory.
pub fn interpolation_check(
    samples: &[Vec<SpectralField>],
    dt: f64,
    m: f64,
    s: f64,
    q: f64,
) -> Result<InterpolationResult> {
    let r = 2.0;
    if !(m > q + 1.0) || !(s > 0.0 && s < 1.0) || 1.0 / r < 1.0 / m + s / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "exponents m = {m}, s = {s} violate m > q + 1, 0 < s < 1, 1/2 >= 1/m + s/2"
        )));
    }
    let mut ratios = Vec::with_capacity(samples.len());
    for xi in samples {
        let left_points = &xi[..xi.len().saturating_sub(1)];
        let hs: Vec<f64> = left_points.iter().map(|f| f.sobolev_norm(-s)).collect();
        let lhs = lm_norm(&hs, dt, m).powi(2);
        let sup_h = sup(xi.iter().map(|f| f.sobolev_norm(-1.0).powi(2)));
        let mut integral = 0.0;
        for f in left_points {
            integral += dt * f.lp_norm(q + 1.0)?.powf(q + 1.0);
        }
        let rhs = sup_h + integral;
        ratios.push((rhs > 0.0).then(|| lhs / rhs));
    }
    let max_ratio = ratios.iter().flatten().cloned().fold(0.0, f64::max);
    Ok(InterpolationResult { ratios, max_ratio })
}
