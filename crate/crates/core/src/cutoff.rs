//! Smooth cut-off profile, running suprema and stopping times.
//!
//! The profile is the standard exponential blend
//!
//! ```text
//! φ(x) = ψ(2 - |x|) / (ψ(2 - |x|) + ψ(|x| - 1)),   ψ(t) = e^{-1/t} (t > 0), 0 otherwise,
//! ```
//!
//! which is `C^∞`, equal to 1 on `|x| ≤ 1` and to 0 on `|x| ≥ 2`.

use crate::error::{Error, Result};

fn psi(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

pub fn phi(x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 {
        return 1.0;
    }
    if a >= 2.0 {
        return 0.0;
    }
    let up = psi(2.0 - a);
    up / (up + psi(a - 1.0))
}

/// `φ_κ(x) = φ(x / κ)`.
pub fn phi_kappa(x: f64, kappa: f64) -> f64 {
    phi(x / kappa)
}

/// Bound on `|φ'|`, attained at `|x| = 3/2` by symmetry of the blend.
pub fn phi_lipschitz() -> f64 {
    // φ'(3/2) = -ψ'(1/2)ψ(1/2)·2 / (2ψ(1/2))² = -ψ'(1/2)/(2ψ(1/2)) = -2
    2.0
}

/// Running supremum `h(t) = sup_{s ≤ t} |v(s)|` of a recorded series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningSup {
    current: f64,
    history: Vec<(f64, f64)>,
}

impl RunningSup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn history(&self) -> &[(f64, f64)] {
        &self.history
    }

    pub fn update(&mut self, t: f64, value: f64) -> Result<f64> {
        if let Some(&(last, _)) = self.history.last() {
            if t < last {
                return Err(Error::TimeRegression { previous: last, next: t });
            }
        }
        self.current = self.current.max(value);
        self.history.push((t, self.current));
        Ok(self.current)
    }

    /// `Θ_κ = φ_κ(h)` at the latest recorded time.
    pub fn theta(&self, kappa: f64) -> f64 {
        phi_kappa(self.current, kappa)
    }

    /// First recorded time with `h ≥ κ`.
    pub fn check_stop(&self, kappa: f64) -> Option<f64> {
        self.history.iter().find(|&&(_, h)| h >= kappa).map(|&(t, _)| t)
    }
}

/// `Θ_κ` from a supremum value.
pub fn theta(sup: f64, kappa: f64) -> f64 {
    phi_kappa(sup, kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn profile_examples() {
        assert_eq!(phi(0.5), 1.0);
        assert_eq!(phi(-3.0), 0.0);
        let v = phi(1.5);
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(phi(1.5), phi(-1.5));
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn theta_examples() {
        assert_eq!(theta(3.0, 4.0), 1.0);
        assert_eq!(theta(9.0, 4.0), 0.0);
        let v = theta(6.0, 4.0);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn tracker_examples() {
        let mut h = RunningSup::new();
        for (t, v) in [(0.1, 1.0), (0.2, 3.0), (0.3, 2.0)] {
            h.update(t, v).unwrap();
        }
        assert_eq!(h.current(), 3.0);
        assert!(h.update(0.25, 1.0).is_err());

        let mut z = RunningSup::new();
        z.update(0.0, 0.0).unwrap();
        assert_eq!(z.current(), 0.0);

        let mut s = RunningSup::new();
        for (t, v) in [(0.1, 1.0), (0.2, 2.0), (0.3, 5.0)] {
            s.update(t, v).unwrap();
        }
        assert_eq!(s.check_stop(4.0), Some(0.3));
        assert_eq!(s.check_stop(6.0), None);
        assert_eq!(s.check_stop(5.0), Some(0.3));
    }

    #[test]
    fn lipschitz_constant_bounds_finite_differences() {
        let h = 1e-6;
        let max = (0..20000)
            .map(|i| 1.0 + i as f64 * 5e-5)
            .map(|x| ((phi(x + h) - phi(x - h)) / (2.0 * h)).abs())
            .fold(0.0, f64::max);
        assert!(max <= phi_lipschitz() + 1e-6 && max > phi_lipschitz() - 1e-3, "{max}");
    }

    proptest! {
        #[test]
        fn profile_is_monotone_on_the_ramp(a in 1.0f64..2.0, b in 1.0f64..2.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(phi(lo) >= phi(hi));
            prop_assert!((0.0..=1.0).contains(&phi(lo)));
        }

        #[test]
        fn sup_matches_prefix_max(values in proptest::collection::vec(0.0f64..10.0, 1..50)) {
            let mut h = RunningSup::new();
            for (i, &v) in values.iter().enumerate() {
                h.update(i as f64, v).unwrap();
                let direct = values[..=i].iter().cloned().fold(0.0, f64::max);
                prop_assert_eq!(h.current(), direct);
            }
        }

        #[test]
        fn theta_is_lipschitz(h1 in 0.0f64..20.0, h2 in 0.0f64..20.0, kappa in 0.5f64..8.0) {
            let d = (theta(h1, kappa) - theta(h2, kappa)).abs();
            prop_assert!(d <= phi_lipschitz() / kappa * (h1 - h2).abs() + 1e-12);
        }

        #[test]
        fn larger_kappa_never_stops_earlier(values in proptest::collection::vec(0.0f64..10.0, 1..50), k1 in 0.1f64..10.0, dk in 0.0f64..5.0) {
            let mut h = RunningSup::new();
            for (i, &v) in values.iter().enumerate() {
                h.update(i as f64, v).unwrap();
            }
            let early = h.check_stop(k1).unwrap_or(f64::INFINITY);
            let late = h.check_stop(k1 + dk).unwrap_or(f64::INFINITY);
            prop_assert!(late >= early);
        }
    }
}
