//! The verification suite behind `verify` mode and the acceptance target.
//!
//! Each criterion runs a set of named checks and passes when all of them
//! do. The whole suite is computed twice; the second pass must reproduce
//! the first byte for byte.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cli::config::Setup;
use crate::cutoff::theta;
use crate::error::{Error, Result};
use crate::fixedpoint::{
    constant_in_time, haar_project, lipschitz_probe, mean_and_se, picard, sub_series, x_norm,
    FixpointConfig,
};
use crate::glue::{escalate_and_glue, exceedance_nonincreasing, exceedance_prob};
use crate::linearized::{
    solve_coupled, solve_linearized, CutoffMode, ModelParams, Stepper, SystemState,
};
use crate::monitors::{interpolation_check, residual_defn, uniform_kappa_check};
use crate::noise::{hs_partial_sums, NoisePath, Process};
use crate::spectral::{build_eigenbasis, Basis, EigenData, Grid, SpectralField, VectorField};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl Criterion {
    fn new(id: u32, name: &str, checks: Vec<Check>) -> Self {
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        Self { id, name: name.into(), passed, checks }
    }

    /// One line: id, verdict, name and the failing checks.
    pub fn summary_line(&self) -> String {
        let failing: Vec<&str> =
            self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        if failing.is_empty() {
            format!("criterion {:>2} {verdict}  {}", self.id, self.name)
        } else {
            format!("criterion {:>2} {verdict}  {} (failed: {})", self.id, self.name, failing.join(", "))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub criteria: Vec<Criterion>,
}

fn check(name: &str, passed: bool, detail: Value) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Criteria whose computation failed numerically are reported as failed.
fn guarded(id: u32, name: &str, f: impl FnOnce() -> Result<Vec<Check>>) -> Result<Criterion> {
    match f() {
        Ok(checks) => Ok(Criterion::new(id, name, checks)),
        Err(e) if e.is_blow_up() => {
            Ok(Criterion::new(id, name, vec![check("numerics", false, json!(e.to_string()))]))
        }
        Err(e) => Err(e),
    }
}

type CriterionFn = fn(&Setup) -> Result<Vec<Check>>;

const CRITERIA: [(u32, &str, CriterionFn); 10] = [
    (1, "noise thresholds", noise_thresholds),
    (2, "eigenvalue asymptotics", eigenvalue_asymptotics),
    (3, "projection, cut-off and Haar algebra", algebra),
    (4, "scheme consistency", scheme_consistency),
    (5, "conservation", conservation),
    (6, "fixed point", fixed_point),
    (7, "uniform-in-kappa bound", uniform_bound),
    (8, "gluing", gluing),
    (9, "continuity probe", continuity_probe),
    (10, "interpolation constant", interpolation),
];

/// Run one criterion by id.
pub fn run_criterion(setup: &Setup, id: u32) -> Result<Criterion> {
    let (id, name, f) = CRITERIA
        .iter()
        .find(|(i, _, _)| *i == id)
        .ok_or_else(|| Error::InvalidArgument(format!("no criterion {id}")))?;
    guarded(*id, name, || f(setup))
}

/// All criteria, twice, with the rerun comparison folded into the gluing
/// criterion. `progress` sees each first-pass criterion as it completes.
pub fn run_suite(setup: &Setup, mut progress: impl FnMut(&Criterion)) -> Result<SuiteReport> {
    let mut first = Vec::with_capacity(CRITERIA.len());
    for (id, _, _) in CRITERIA {
        let c = run_criterion(setup, id)?;
        progress(&c);
        first.push(c);
    }
    let mut second = Vec::with_capacity(CRITERIA.len());
    for (id, _, _) in CRITERIA {
        second.push(run_criterion(setup, id)?);
    }
    let a = serde_json::to_string(&first)?;
    let b = serde_json::to_string(&second)?;
    let same = a == b;
    let mismatched: Vec<u32> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| serde_json::to_string(x).ok() != serde_json::to_string(y).ok())
        .map(|(x, _)| x.id)
        .collect();
    if let Some(c) = first.iter_mut().find(|c| c.id == 8) {
        c.checks.push(check(
            "rerun byte-identical",
            same,
            json!({ "bytes": a.len(), "mismatched_criteria": mismatched }),
        ));
        c.passed = c.checks.iter().all(|k| k.passed);
    }
    let passed = first.iter().all(|c| c.passed);
    Ok(SuiteReport { passed, criteria: first })
}

fn rng(setup: &Setup, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(setup.config.master_seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Gaussian coefficients on the first `modes` basis functions, weighted by
/// `(1 + λ)^{-decay}`.
fn random_field(basis: &Arc<Basis>, rng: &mut ChaCha8Rng, modes: usize, decay: f64) -> SpectralField {
    let coeffs = basis
        .modes()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let z: f64 = rng.sample(StandardNormal);
            if i < modes {
                z * (1.0 + m.lambda).powf(-decay)
            } else {
                0.0
            }
        })
        .collect();
    SpectralField::from_coeffs(basis, coeffs).expect("basis length")
}

fn stepper_with(setup: &Setup, edit: impl FnOnce(&mut ModelParams)) -> Result<Stepper> {
    let mut p = setup.params.clone();
    edit(&mut p);
    Stepper::new(&setup.basis, &p)
}

fn linear_regime(p: &mut ModelParams) {
    p.chi = 0.0;
    p.delta_n = 0.0;
    p.delta_c = 0.0;
}

fn quiet(setup: &Setup, steps: usize, dt: f64) -> NoisePath {
    NoisePath::zeros(setup.basis.len(), steps, dt)
}

fn noise_path(setup: &Setup, steps: usize, dt: f64, path: u64) -> Result<NoisePath> {
    NoisePath::sample(&setup.noise, steps, dt, path)
}

/// Spectrum with at least 800 modes for the series checks.
fn series_spectrum(setup: &Setup) -> Result<Arc<EigenData>> {
    let eigen = setup.basis.eigen();
    if eigen.len() >= 800 {
        return Ok(eigen.clone());
    }
    let grid = Grid::new(64, 64, setup.config.side)?;
    Ok(Arc::new(build_eigenbasis(&grid)))
}

// 1 ---------------------------------------------------------------------

fn noise_thresholds(setup: &Setup) -> Result<Vec<Check>> {
    let basis = &setup.basis;
    let eigen = series_spectrum(setup)?;
    let one = SpectralField::constant(basis, 1.0);
    let n0 = SystemState::default_initial(basis).n;
    let increment = |psi: &SpectralField, gamma: f64, s: f64| {
        let sums = hs_partial_sums(psi, gamma, s, &eigen, &[400, 800]);
        (sums[1] - sums[0]) / sums[0]
    };
    let g1 = increment(&n0, setup.params.gamma1, -1.0);
    let g2 = increment(&one, setup.params.gamma2, 0.0);
    let below = increment(&one, 1.5, 0.0);
    let mut checks = vec![
        check("gamma1 series converges", g1 < 0.01, json!({ "gamma": setup.params.gamma1, "s": -1.0, "relative_increment": g1 })),
        check("gamma2 series converges", g2 < 0.01, json!({ "gamma": setup.params.gamma2, "s": 0.0, "relative_increment": g2 })),
        check("gamma 1.5 series fails the test", below >= 0.01, json!({ "gamma": 1.5, "s": 0.0, "relative_increment": below })),
    ];

    let mut r = rng(setup, 1);
    let fields: Vec<SpectralField> = (0..100).map(|_| random_field(basis, &mut r, 60, 0.5)).collect();
    for (name, gamma, s) in [("H^-1 bound", setup.params.gamma1, -1.0), ("L2 bound", setup.params.gamma2, 0.0)] {
        let ratios: Vec<(f64, f64)> = fields
            .par_iter()
            .map(|psi| {
                let sums = hs_partial_sums(psi, gamma, s, &eigen, &[400, 800]);
                let norm = psi.sobolev_norm(s);
                (sums[0].sqrt() / norm, sums[1].sqrt() / norm)
            })
            .collect();
        let c400 = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
        let c800 = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
        checks.push(check(
            name,
            c800.is_finite() && c800 <= 1.05 * c400,
            json!({ "gamma": gamma, "s": s, "fields": 100, "max_ratio_k400": c400, "max_ratio_k800": c800 }),
        ));
    }
    Ok(checks)
}

// 2 ---------------------------------------------------------------------

fn eigenvalue_asymptotics(setup: &Setup) -> Result<Vec<Check>> {
    let eigen = series_spectrum(setup)?;
    let mut rows = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for k in [50usize, 200, 800] {
        let (mut a, mut b) = (f64::INFINITY, 0.0_f64);
        for (i, m) in eigen.modes[1..k].iter().enumerate() {
            let ratio = m.lambda / (i + 1) as f64;
            a = a.min(ratio);
            b = b.max(ratio);
        }
        rows.push(json!({ "k": k, "min": a, "max": b }));
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok(vec![check(
        "lambda_k / k in [c, C] with C/c < 10",
        lo > 0.0 && hi / lo < 10.0,
        json!({ "c": lo, "C": hi, "ratio": hi / lo, "per_k": rows }),
    )])
}

// 3 ---------------------------------------------------------------------

fn algebra(setup: &Setup) -> Result<Vec<Check>> {
    let basis = &setup.basis;
    let mut r = rng(setup, 3);
    let (mut idem, mut kill, mut div) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let v = VectorField {
            x: random_field(basis, &mut r, basis.len(), 0.0),
            y: random_field(basis, &mut r, basis.len(), 0.0),
        };
        let p = v.helmholtz_project();
        idem = idem.max(p.helmholtz_project().sub(&p).l2_norm());
        div = div.max(p.divergence_norm());
        let f = random_field(basis, &mut r, basis.len(), 0.0);
        kill = kill.max(f.gradient().helmholtz_project().l2_norm());
    }
    let mut checks = vec![
        check("projection idempotent", idem <= 1e-12, json!(idem)),
        check("gradients removed", kill <= 1e-12, json!(kill)),
        check("projection divergence-free", div <= 1e-12, json!(div)),
    ];

    let mut in_range = true;
    let mut plateaus = true;
    for kappa in [0.5, 1.0, 4.0] {
        for i in 0..=1000 {
            let h = 5.0 * kappa * i as f64 / 1000.0;
            let t = theta(h, kappa);
            in_range &= (0.0..=1.0).contains(&t);
            if h <= kappa {
                plateaus &= t == 1.0;
            }
            if h >= 2.0 * kappa {
                plateaus &= t == 0.0;
            }
        }
    }
    checks.push(check("cut-off within [0, 1]", in_range, json!(null)));
    checks.push(check("cut-off plateaus exact", plateaus, json!(null)));

    // contraction on families with nondecreasing norm, and on solver paths
    let fc = &setup.fixpoint;
    let mut worst = 0.0_f64;
    for j in 0..20.min((basis.len() - 1) / 2) {
        let a = SpectralField::mode(basis, 1 + 2 * j);
        let b = SpectralField::mode(basis, 2 + 2 * j);
        let w = (1.0 + basis.modes()[2 + 2 * j].lambda) / (1.0 + basis.modes()[1 + 2 * j].lambda);
        let b = b.scale(w.powf(fc.s_star / 2.0));
        let omega = r.random_range(0.0..20.0);
        let growth = r.random_range(0.0..3.0);
        let f: Vec<SpectralField> = (0..=64)
            .map(|i| {
                let t = i as f64 / 64.0;
                a.scale((omega * t).cos()).axpy((omega * t).sin(), &b).scale(1.0 + growth * t)
            })
            .collect();
        for level in 1..=3 {
            let p = haar_project(&f, level)?;
            worst = worst.max(x_norm(&p, 1.0 / 64.0, fc) / x_norm(&f, 1.0 / 64.0, fc));
        }
    }
    let st = Stepper::new(basis, &setup.params)?;
    let init = SystemState::default_initial(basis);
    let levels: Vec<u32> = (1..=3).filter(|l| setup.params.steps % (1 << l) == 0).collect();
    for path in 0..4 {
        let w = noise_path(setup, setup.params.steps, setup.params.dt, path)?;
        let n = solve_coupled(&st, &init, &w, setup.config.kappa, false)?.n_series();
        for &level in &levels {
            let p = haar_project(&n, level)?;
            worst = worst.max(x_norm(&p, setup.params.dt, fc) / x_norm(&n, setup.params.dt, fc));
        }
    }
    checks.push(check(
        "Haar projection contracts",
        worst <= 1.0 + 1e-12,
        json!({ "max_ratio": worst, "solver_levels": levels }),
    ));

    let a = random_field(basis, &mut r, 12, 0.5);
    let b = random_field(basis, &mut r, 12, 0.5);
    let f: Vec<SpectralField> = (0..=512)
        .map(|i| {
            let t = i as f64 / 512.0;
            a.scale((3.0 * t).cos()).axpy(t * t, &b)
        })
        .collect();
    let errs: Vec<f64> = (1..=6)
        .map(|l| haar_project(&f, l).map(|p| x_norm(&sub_series(&p, &f), 1.0 / 512.0, fc)))
        .collect::<Result<_>>()?;
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    checks.push(check("Haar error decreases with level", decreasing, json!(errs)));
    Ok(checks)
}

// 4 ---------------------------------------------------------------------

fn max_field_gap(a: &[SpectralField], b: impl Fn(usize) -> SpectralField) -> f64 {
    a.iter().enumerate().map(|(i, f)| f.sub(&b(i)).l2_norm()).fold(0.0, f64::max)
}

fn scheme_consistency(setup: &Setup) -> Result<Vec<Check>> {
    let basis = &setup.basis;
    let base = &setup.params;
    let dt = base.dt;
    let steps = base.steps;
    let st = stepper_with(setup, linear_regime)?;
    let p = st.params().clone();
    let w = basis.grid().wavenumber();
    let quiet = quiet(setup, steps, dt);

    // ξ = cos(x + 2y), λ = 5: velocity and chemoattractant in closed form
    let lam = 5.0 * w * w;
    let cosm = SpectralField::from_fn(basis, |x, y| (w * x + 2.0 * w * y).cos());
    let init = SystemState::default_initial(basis);
    let traj = solve_linearized(&st, &constant_in_time(&cosm, steps), &init, &quiet, 1e9)?;
    let (a, b) = ((-p.delta1 * lam).exp(), (-p.delta2 * lam).exp());
    let (fx, fy) = (a - (a + 2.0 * b) / 5.0, b - 2.0 * (a + 2.0 * b) / 5.0);
    let u_gap = traj
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = i as f64 * dt;
            let decay = (-p.r_u * 2.0 * w * w * t).exp();
            let gain = (1.0 - (-p.r_u * lam * t).exp()) / (p.r_u * lam);
            let ux = init.u.x.scale(decay).axpy(gain * fx, &cosm);
            let uy = init.u.y.scale(decay).axpy(gain * fy, &cosm);
            s.u.sub(&VectorField { x: ux, y: uy }).l2_norm()
        })
        .fold(0.0, f64::max);
    let (mu1, mu5) = (p.r_c * w * w + p.alpha, p.r_c * lam + p.alpha);
    let c_gap = traj
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = i as f64 * dt;
            let c = init.c.scale((-mu1 * t).exp()).axpy(p.beta * (1.0 - (-mu5 * t).exp()) / mu5, &cosm);
            s.c.sub(&c).l2_norm()
        })
        .fold(0.0, f64::max);

    // ξ constant: the density grows linearly, the chemoattractant relaxes
    let (xi0, n0) = (0.2, 0.3);
    let flat = SystemState {
        n: SpectralField::constant(basis, n0),
        ..SystemState::zeros(basis)
    };
    let traj = solve_linearized(&st, &constant_in_time(&SpectralField::constant(basis, xi0), steps), &flat, &quiet, 1e9)?;
    let n_gap = max_field_gap(&traj.n_series(), |i| SpectralField::constant(basis, n0 + p.theta * xi0 * i as f64 * dt));
    let c_flat_gap = traj
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = i as f64 * dt;
            let c = SpectralField::constant(basis, p.beta * xi0 * (1.0 - (-p.alpha * t).exp()) / p.alpha);
            s.c.sub(&c).l2_norm() + s.u.l2_norm()
        })
        .fold(0.0, f64::max);
    let linear = u_gap.max(c_gap).max(n_gap).max(c_flat_gap);
    let mut checks = vec![check(
        "linear regime matches closed forms",
        linear <= 1e-6,
        json!({ "u": u_gap, "c": c_gap, "n": n_gap, "c_constant": c_flat_gap }),
    )];

    // strong order: errors at dt and dt/2 against dt/8, same Brownian paths
    let paths = 8u64;
    let fine_steps = 8 * steps;
    let mut finals: Vec<Vec<SystemState>> = Vec::new();
    let init = SystemState::default_initial(basis);
    let results: Vec<Result<Vec<SystemState>>> = (0..paths)
        .into_par_iter()
        .map(|path| {
            let fine = noise_path(setup, fine_steps, dt / 8.0, 50_000 + path)?;
            let mut out = Vec::new();
            for factor in [1usize, 4, 8] {
                let st = stepper_with(setup, |q| {
                    q.dt = dt / 8.0 * factor as f64;
                    q.steps = fine_steps / factor;
                })?;
                let w = fine.coarsen(factor)?;
                out.push(solve_coupled(&st, &init, &w, setup.config.kappa, false)?.last().clone());
            }
            Ok(out)
        })
        .collect();
    for r in results {
        finals.push(r?);
    }
    let rms = |idx: usize, comp: fn(&SystemState, &SystemState) -> f64| {
        (finals.iter().map(|f| comp(&f[idx], &f[0]).powi(2)).sum::<f64>() / paths as f64).sqrt()
    };
    let comps: [(&str, fn(&SystemState, &SystemState) -> f64); 3] = [
        ("n", |a, b| a.n.sub(&b.n).l2_norm()),
        ("c", |a, b| a.c.sub(&b.c).l2_norm()),
        ("u", |a, b| a.u.sub(&b.u).l2_norm()),
    ];
    let mut ratios = serde_json::Map::new();
    let mut in_band = true;
    for (name, comp) in comps {
        let coarse = rms(2, comp);
        let half = rms(1, comp);
        let ratio = coarse / half;
        in_band &= (1.6..=2.4).contains(&ratio);
        ratios.insert(name.into(), json!({ "err_dt": coarse, "err_dt_half": half, "ratio": ratio }));
    }
    checks.push(check("strong order under dt halving", in_band, Value::Object(ratios)));

    // Ornstein-Uhlenbeck variance of the velocity with ξ = 0
    let n_ou = 400u64;
    let zero = SpectralField::zeros(basis);
    let st = Stepper::new(basis, base)?;
    let energies: Vec<Result<f64>> = (0..n_ou)
        .into_par_iter()
        .map(|path| {
            let w = noise_path(setup, steps, dt, 60_000 + path)?;
            let mut u = VectorField::zeros(basis);
            for i in 0..steps {
                u = st.step_u(&u, &zero, w.increment(i, Process::W3x), w.increment(i, Process::W3y))?;
            }
            Ok(u.l2_norm().powi(2))
        })
        .collect();
    let energies: Vec<f64> = energies.into_iter().collect::<Result<_>>()?;
    let est = mean_and_se(&energies);
    let t = base.horizon();
    let analytic: f64 = basis
        .modes()
        .iter()
        .filter(|m| m.lambda > 0.0)
        .map(|m| {
            let mu = base.r_u * m.lambda;
            base.sigma_scale.powi(2) * m.lambda.powf(-base.gamma3) * (1.0 - (-2.0 * mu * t).exp()) / (2.0 * mu)
        })
        .sum();
    checks.push(check(
        "velocity variance within 3 standard errors",
        (est.value - analytic).abs() <= 3.0 * est.std_error,
        json!({ "paths": n_ou, "mean": est.value, "std_error": est.std_error, "analytic": analytic }),
    ));
    Ok(checks)
}

// 5 ---------------------------------------------------------------------

fn conservation(setup: &Setup) -> Result<Vec<Check>> {
    let basis = &setup.basis;
    let init = SystemState::default_initial(basis);
    let steps = setup.params.steps.max(1000);
    let st = stepper_with(setup, |p| {
        p.theta = 0.0;
        p.steps = steps;
    })?;
    let traj = solve_coupled(&st, &init, &quiet(setup, steps, setup.params.dt), setup.config.kappa, false)?;
    let m0 = init.n.integral();
    let drift = traj.states.iter().map(|s| (s.n.integral() - m0).abs()).fold(0.0, f64::max);

    let (dt, horizon): (f64, f64) = (1e-4, 0.2);
    let growth_steps = (horizon / dt).round() as usize;
    let st = stepper_with(setup, |p| {
        p.dt = dt;
        p.steps = growth_steps;
    })?;
    let theta = st.params().theta;
    let traj = solve_coupled(&st, &init, &quiet(setup, growth_steps, dt), setup.config.kappa, false)?;
    let exact = (theta * horizon).exp();
    let rel = (traj.last().n.integral() / m0 / exact - 1.0).abs();
    Ok(vec![
        check("mass conserved without growth", drift <= 1e-12, json!({ "steps": steps, "max_drift": drift })),
        check(
            "mass grows like exp(theta t)",
            rel <= 1e-4,
            json!({ "theta": theta, "dt": dt, "horizon": horizon, "relative_error": rel }),
        ),
    ])
}

// 6 ---------------------------------------------------------------------

fn fixed_point(setup: &Setup) -> Result<Vec<Check>> {
    let basis = &setup.basis;
    let p = &setup.params;
    let init = SystemState::default_initial(basis);
    let start = constant_in_time(&init.n, p.steps);
    let lin = stepper_with(setup, linear_regime)?;
    let tight = FixpointConfig { tol: 1e-12, max_iter: 60, ..setup.fixpoint.clone() };

    let quiet = quiet(setup, p.steps, p.dt);
    let out = picard(start.clone(), &lin, &init, &quiet, &tight)?;
    let direct = solve_coupled(&lin, &init, &quiet, tight.kappa, false)?;
    let gap = max_field_gap(&out.xi, |i| direct.states[i].n.clone());
    let ratios: Vec<f64> = out.history.windows(2).map(|w| w[1].residual / w[0].residual).collect();
    let geometric = ratios.iter().skip(1).all(|&r| r < 1.0);
    let other = picard(constant_in_time(&SpectralField::zeros(basis), p.steps), &lin, &init, &quiet, &tight)?;
    let spread = x_norm(&sub_series(&out.xi, &other.xi), p.dt, &tight) / x_norm(&out.xi, p.dt, &tight);
    let mut checks = vec![
        check(
            "linear regime converges geometrically",
            out.converged && geometric,
            json!({ "iterations": out.history.len(), "residuals": out.history.iter().map(|h| h.residual).collect::<Vec<_>>(), "ratios": ratios }),
        ),
        check("linear limit equals direct solve", gap <= 1e-6, json!(gap)),
        check("linear limit independent of start", other.converged && spread <= 10.0 * tight.tol, json!(spread)),
    ];

    let identity: Vec<Result<(bool, f64)>> = (0..4u64)
        .into_par_iter()
        .map(|path| {
            let w = noise_path(setup, p.steps, p.dt, 70_000 + path)?;
            let out = picard(start.clone(), &lin, &init, &w, &tight)?;
            let res = residual_defn(&out.trajectory, None, &w, &lin)?;
            let worst = res.iter().map(|r| r.n.max(r.c).max(r.u)).fold(0.0, f64::max);
            Ok((out.converged, worst))
        })
        .collect();
    let identity: Vec<(bool, f64)> = identity.into_iter().collect::<Result<_>>()?;
    let worst = identity.iter().map(|r| r.1).fold(0.0, f64::max);
    checks.push(check(
        "converged paths satisfy the integral identities",
        identity.iter().all(|r| r.0) && worst <= 1e-10,
        json!({ "paths": identity.len(), "max_residual": worst }),
    ));

    let st = Stepper::new(basis, p)?;
    let cfg = &setup.fixpoint;
    let runs: Vec<(u64, Result<(bool, usize, f64)>)> = (0..setup.config.paths as u64)
        .into_par_iter()
        .map(|path| {
            let r = (|| {
                let w = noise_path(setup, p.steps, p.dt, path)?;
                let out = picard(start.clone(), &st, &init, &w, cfg)?;
                let last = out.history.last().map_or(f64::NAN, |h| h.residual);
                Ok((out.converged, out.history.len(), last))
            })();
            (path, r)
        })
        .collect();
    let mut converged = 0;
    let mut diverged = Vec::new();
    let mut iterations = Vec::new();
    for (path, r) in runs {
        match r {
            Ok((true, it, _)) => {
                converged += 1;
                iterations.push(it);
            }
            Ok((false, _, last)) => diverged.push(json!({ "path": path, "last_residual": last })),
            Err(e) if e.is_blow_up() => diverged.push(json!({ "path": path, "error": e.to_string() })),
            Err(e) => return Err(e),
        }
    }
    let fraction = converged as f64 / setup.config.paths as f64;
    checks.push(check(
        "default parameters converge on 90% of paths",
        fraction >= 0.9,
        json!({ "paths": setup.config.paths, "tol": cfg.tol, "max_iter": cfg.max_iter, "converged": converged, "iterations": iterations, "diverged": diverged }),
    ));
    Ok(checks)
}

// 7 ---------------------------------------------------------------------

fn uniform_bound(setup: &Setup) -> Result<Vec<Check>> {
    let init = SystemState::default_initial(&setup.basis);
    let kappas = &setup.config.kappas;
    let st = Stepper::new(&setup.basis, &setup.params)?;
    let p = setup.config.lyapunov_p;
    let table = uniform_kappa_check(&st, &init, &setup.noise, kappas, setup.config.paths, p)?;
    let amp = stepper_with(setup, |q| q.cutoff_mode = CutoffMode::Amplifier)?;
    let fixture = uniform_kappa_check(&amp, &init, &setup.noise, kappas, setup.config.paths, p)?;
    Ok(vec![
        check("lyapunov bounded uniformly in kappa", table.passed, serde_json::to_value(&table)?),
        check("amplifier fixture is rejected", !fixture.passed, serde_json::to_value(&fixture)?),
    ])
}

// 8 ---------------------------------------------------------------------

fn gluing(setup: &Setup) -> Result<Vec<Check>> {
    let init = SystemState::default_initial(&setup.basis);
    let st = Stepper::new(&setup.basis, &setup.params)?;
    let kappas = &setup.config.kappas;
    let n_paths = (2 * setup.config.paths).max(16);
    let rows = exceedance_prob(&st, &init, &setup.noise, kappas, n_paths)?;
    let kappa_lo = kappas.iter().cloned().fold(f64::INFINITY, f64::min);
    let products: Vec<f64> = rows.iter().map(|r| r.probability * r.kappa.powi(2)).collect();
    let mut checks = vec![check(
        "exceedance nonincreasing in kappa",
        exceedance_nonincreasing(&rows),
        json!({ "paths": n_paths, "rows": rows, "p_times_kappa_squared": products }),
    )];

    let options = setup.config.glue_options()?;
    let runs: Vec<Result<_>> = (0..8u64)
        .into_par_iter()
        .map(|path| escalate_and_glue(&init, kappa_lo, std::slice::from_ref(&st), &setup.noise, 80_000 + path, &options))
        .collect();
    let mut jump = 0.0_f64;
    let mut complete = true;
    let mut inactive = true;
    let mut segments = Vec::new();
    for r in runs {
        let run = r?;
        jump = jump.max(run.max_boundary_jump());
        complete &= run.complete;
        inactive &= run.cutoff_inactive();
        segments.push(run.segments.len());
    }
    checks.push(check(
        "glued runs complete and continuous",
        complete && jump <= 1e-12,
        json!({ "runs": segments.len(), "segments": segments, "max_jump": jump }),
    ));
    checks.push(check("cut-off identically 1 before each stop", inactive, json!(null)));
    Ok(checks)
}

// 9 ---------------------------------------------------------------------

fn continuity_probe(setup: &Setup) -> Result<Vec<Check>> {
    let basis = &setup.basis;
    let p = &setup.params;
    let init = SystemState::default_initial(basis);
    let st = Stepper::new(basis, p)?;
    let cfg = &setup.fixpoint;
    let steps = p.steps;
    let mut maxima = Vec::new();
    for sample in 0..2u64 {
        let mut r = rng(setup, 90 + sample);
        // ξ = n₀ + a(t), |a| bounded, a linear in time between two random fields
        let pairs: Vec<[(SpectralField, SpectralField); 2]> = (0..50)
            .map(|_| {
                [0, 1].map(|_| {
                    let a = random_field(basis, &mut r, 20, 1.0).scale(0.02);
                    let b = random_field(basis, &mut r, 20, 1.0).scale(0.02);
                    (a, b)
                })
            })
            .collect();
        let ratios: Vec<Result<Option<f64>>> = pairs
            .par_iter()
            .enumerate()
            .map(|(i, pair)| {
                let series = |(a, b): &(SpectralField, SpectralField)| -> Vec<SpectralField> {
                    (0..=steps)
                        .map(|k| {
                            let t = k as f64 / steps as f64;
                            init.n.axpy(1.0 - t, a).axpy(t, b)
                        })
                        .collect()
                };
                let w = noise_path(setup, steps, p.dt, 90_000 + 50 * sample + i as u64)?;
                lipschitz_probe(&series(&pair[0]), &series(&pair[1]), &st, &init, &w, cfg)
            })
            .collect();
        let mut m = 0.0_f64;
        for r in ratios {
            if let Some(x) = r? {
                m = m.max(x);
            }
        }
        maxima.push(m);
    }
    let rel = (maxima[0] / maxima[1] - 1.0).abs();
    Ok(vec![check(
        "max Lipschitz ratio finite and stable",
        maxima.iter().all(|m| m.is_finite() && *m > 0.0) && rel <= 0.2,
        json!({ "pairs_per_sample": 50, "max_ratio": maxima, "relative_change": rel }),
    )])
}

// 10 --------------------------------------------------------------------

fn interpolation(setup: &Setup) -> Result<Vec<Check>> {
    let basis = &setup.basis;
    let p = &setup.params;
    let init = SystemState::default_initial(basis);
    let st = Stepper::new(basis, p)?;
    let cfg = &setup.fixpoint;
    let mut maxima = Vec::new();
    let mut dropped = Vec::new();
    for sample in 0..2u64 {
        let series: Vec<Result<Vec<SpectralField>>> = (0..100u64)
            .into_par_iter()
            .map(|i| {
                let w = noise_path(setup, p.steps, p.dt, 100 * sample + i)?;
                Ok(solve_coupled(&st, &init, &w, setup.config.kappa, false)?.n_series())
            })
            .collect();
        // trajectories that leave the stable range are not samples of anything
        let mut kept = Vec::new();
        for r in series {
            match r {
                Ok(x) => kept.push(x),
                Err(e) if e.is_blow_up() => {}
                Err(e) => return Err(e),
            }
        }
        dropped.push(100 - kept.len());
        let res = interpolation_check(&kept, p.dt, cfg.m_star as f64, cfg.s_star, p.q)?;
        maxima.push(res.max_ratio);
    }
    let rel = (maxima[0] / maxima[1] - 1.0).abs();
    Ok(vec![
        check(
            "empirical interpolation constant stable",
            maxima.iter().all(|m| m.is_finite() && *m > 0.0) && rel <= 0.2,
            json!({ "trajectories_per_sample": 100, "m": cfg.m_star, "s": cfg.s_star, "max_ratio": maxima, "relative_change": rel }),
        ),
        check("at most 5 unstable trajectories per sample", dropped.iter().all(|&d| d <= 5), json!(dropped)),
    ])
}
