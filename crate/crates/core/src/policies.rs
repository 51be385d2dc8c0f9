//! Closed-form optimal densities and control laws for the two worked
//! examples: quadratic terminal cost on a Brownian path, and the running
//! maximum of a Brownian path.
//!
//! The quadratic example uses rho(t) = 1 + beta*(T - t). The coefficient
//! of (T - t) is beta, not beta^2: conditioning E[exp(-beta/2 (W_T - x*)^2) | W_t]
//! is the Gaussian quadratic-exponent identity with gamma = beta and
//! variance T - t, which forces rho = 1 + beta*(T - t). The martingale
//! property of the resulting density process confirms the choice
//! numerically (see the acceptance suite), while the beta^2 variant fails it.
//!
//! The running-maximum expressions are evaluated through the scaled
//! complementary error function so the exp(beta^2 (T-t)/2) factor never
//! materializes: with d = (m - w)/sqrt(2(T-t)) and c = beta*sqrt((T-t)/2),
//!   exp(-beta w + c^2) erfc(d + c) = exp(-beta m) exp(-d^2) erfcx(d + c).

use crate::error::{Error, Result};
use crate::path::{ControlPolicy, MaxAwarePolicy, ScalarPolicy};
use crate::quad;
use crate::special::{erf, erfcx};
use std::f64::consts::PI;

/// Quadratic terminal cost C = (1/2)(W_T - x_star)^2.
#[derive(Debug, Clone, Copy)]
pub struct BridgeSpec {
    pub beta: f64,
    pub horizon: f64,
    pub x_star: f64,
}

impl BridgeSpec {
    pub fn new(beta: f64, horizon: f64, x_star: f64) -> Result<Self> {
        if !(beta > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "BridgeSpec requires beta > 0 and horizon > 0, got beta = {beta}, T = {horizon}"
            )));
        }
        Ok(Self { beta, horizon, x_star })
    }

    /// rho(t) = 1 + beta (T - t).
    pub fn rho(&self, t: f64) -> f64 {
        1.0 + self.beta * (self.horizon - t)
    }

    /// Wraps `bridge_control` as a path-engine policy (panics off-domain).
    pub fn control_policy(self) -> impl ControlPolicy {
        ScalarPolicy(move |t, x| bridge_control(&self, t, x).expect("t within [0, T)"))
    }
}

/// u*(t, x) = -beta (x - x_star) / rho(t).
pub fn bridge_control(spec: &BridgeSpec, t: f64, x: f64) -> Result<f64> {
    if !(0.0..spec.horizon).contains(&t) {
        return Err(Error::Domain(format!(
            "bridge_control defined for 0 <= t < T = {}, got t = {t}",
            spec.horizon
        )));
    }
    Ok(-spec.beta * (x - spec.x_star) / spec.rho(t))
}

/// Conditional density process Z*_t evaluated at W_t = x, normalized so
/// that Z*_0 = 1 at the process start W_0 = 0.
pub fn bridge_density(spec: &BridgeSpec, t: f64, x: f64) -> Result<f64> {
    bridge_density_with_coeff(spec, spec.beta, t, x)
}

/// Same density with an explicit coefficient in rho(t) = 1 + coeff*(T-t);
/// exists so the printed beta^2 variant can be put on trial next to the
/// corrected one.
pub fn bridge_density_with_coeff(spec: &BridgeSpec, coeff: f64, t: f64, x: f64) -> Result<f64> {
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(Error::Domain(format!(
            "bridge_density defined for 0 <= t <= T = {}, got t = {t}",
            spec.horizon
        )));
    }
    let rho = |s: f64| 1.0 + coeff * (spec.horizon - s);
    let value = |s: f64, y: f64| {
        let r = rho(s);
        let dev = y - spec.x_star;
        r.powf(-0.5) * f64::exp(-0.5 * spec.beta * dev * dev / r)
    };
    let k = value(0.0, 0.0);
    Ok(value(t, x) / k)
}

/// Running-maximum cost C = max_{0<=t<=T} W_t.
#[derive(Debug, Clone, Copy)]
pub struct MaxBmSpec {
    pub beta: f64,
    pub horizon: f64,
    k_norm: f64,
}

impl MaxBmSpec {
    pub fn new(beta: f64, horizon: f64) -> Result<Self> {
        if !(beta > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "MaxBmSpec requires beta > 0 and horizon > 0, got beta = {beta}, T = {horizon}"
            )));
        }
        // K = E^Q[exp(-beta M_T)], quadrature of exp(-beta a) against the
        // reflection-principle density of M_T
        let cut = 14.0 * horizon.sqrt();
        let k_norm = quad::integrate(
            |a| f64::exp(-beta * a) * reflection_density(horizon, a),
            0.0,
            cut,
            1e-13,
        );
        Ok(Self { beta, horizon, k_norm })
    }

    /// Normalizing constant K = E^Q[exp(-beta M_T)].
    pub fn k_norm(&self) -> f64 {
        self.k_norm
    }

    /// Wraps `max_bm_control` as a path-engine policy (panics off-domain).
    pub fn control_policy(self) -> impl ControlPolicy {
        MaxAwarePolicy(move |t, w, m| {
            // the integrator's running max starts at x0 and can sit a hair
            // below the current state through rounding
            let m = m.max(w);
            max_bm_control(&self, t, w, m).expect("t within [0, T), m >= w")
        })
    }
}

/// Density of M_T at a >= 0 for a Brownian path started at 0 (reflection
/// principle).
pub fn reflection_density(t: f64, a: f64) -> f64 {
    if a < 0.0 {
        return 0.0;
    }
    (2.0 / (PI * t)).sqrt() * f64::exp(-a * a / (2.0 * t))
}

/// Continuous part of the conditional law of M_T given (W_t, M_t) = (w, m):
/// the density at xi > m. The atom at m is `max_bm_atom`.
pub fn max_bm_conditional_density(
    spec: &MaxBmSpec,
    t: f64,
    w: f64,
    m: f64,
    xi: f64,
) -> Result<f64> {
    check_max_state(spec, t, w, m)?;
    if xi <= m {
        return Ok(0.0);
    }
    let rem = spec.horizon - t;
    Ok((2.0 / (PI * rem)).sqrt() * f64::exp(-(xi - w) * (xi - w) / (2.0 * rem)))
}

/// Q(M_T = M_t | W_t = w, M_t = m) = erf((m - w) / sqrt(2(T - t))).
pub fn max_bm_atom(spec: &MaxBmSpec, t: f64, w: f64, m: f64) -> Result<f64> {
    check_max_state(spec, t, w, m)?;
    Ok(erf((m - w) / (2.0 * (spec.horizon - t)).sqrt()))
}

/// Conditional density process Z*_t = E[exp(-beta M_T) | F_t] / K at
/// (W_t, M_t) = (w, m).
pub fn max_bm_density(spec: &MaxBmSpec, t: f64, w: f64, m: f64) -> Result<f64> {
    check_max_state(spec, t, w, m)?;
    let (d, c) = scaled_args(spec, t, w, m);
    let bracket = erf(d) + f64::exp(-d * d) * erfcx(d + c);
    Ok(f64::exp(-spec.beta * m) * bracket / spec.k_norm)
}

/// u*(t, w, m): the erf/erfc ratio of the optimal control, evaluated in
/// log space so neither factor overflows. Always in [-beta, 0].
pub fn max_bm_control(spec: &MaxBmSpec, t: f64, w: f64, m: f64) -> Result<f64> {
    check_max_state(spec, t, w, m)?;
    let (d, c) = scaled_args(spec, t, w, m);
    let erf_d = erf(d);
    if erf_d <= 0.0 {
        // at the maximum (m = w) the atom vanishes and the ratio is -beta
        return Ok(-spec.beta);
    }
    let ln_ratio = erf_d.ln() + d * d - erfcx(d + c).ln();
    Ok(-spec.beta / (1.0 + ln_ratio.exp()))
}

fn scaled_args(spec: &MaxBmSpec, t: f64, w: f64, m: f64) -> (f64, f64) {
    let rem = spec.horizon - t;
    let d = (m - w) / (2.0 * rem).sqrt();
    let c = spec.beta * (rem / 2.0).sqrt();
    (d, c)
}

fn check_max_state(spec: &MaxBmSpec, t: f64, w: f64, m: f64) -> Result<()> {
    if !(0.0..spec.horizon).contains(&t) {
        return Err(Error::Domain(format!(
            "time {t} outside [0, T) with T = {}",
            spec.horizon
        )));
    }
    if m < w {
        return Err(Error::Domain(format!(
            "running max m = {m} below current state w = {w}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::erfc;

    #[test]
    fn bridge_control_at_target_is_zero() {
        let spec = BridgeSpec::new(1.0, 1.0, 0.7).unwrap();
        assert_eq!(bridge_control(&spec, 0.3, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn bridge_control_near_terminal_limit() {
        let spec = BridgeSpec::new(2.0, 1.0, 0.0).unwrap();
        let u = bridge_control(&spec, 1.0 - 1e-12, 1.5).unwrap();
        assert!((u - (-2.0 * 1.5)).abs() < 1e-9);
    }

    #[test]
    fn bridge_control_initial_value() {
        // beta = 1, T = 1, rho(0) = 2
        let spec = BridgeSpec::new(1.0, 1.0, 0.0).unwrap();
        let u = bridge_control(&spec, 0.0, 1.0).unwrap();
        assert!((u - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn bridge_control_domain_error() {
        let spec = BridgeSpec::new(1.0, 1.0, 0.0).unwrap();
        assert!(bridge_control(&spec, 1.0, 0.0).is_err());
    }

    #[test]
    fn bridge_density_normalized_at_start() {
        let spec = BridgeSpec::new(1.3, 2.0, 0.4).unwrap();
        assert!((bridge_density(&spec, 0.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bridge_density_terminal_shape() {
        // at t = T the density is exp(-beta C)/K
        let spec = BridgeSpec::new(1.0, 1.0, 0.0).unwrap();
        let x = 0.8;
        let k = spec.rho(0.0).powf(-0.5); // x_star = 0, start at 0
        let expected = f64::exp(-0.5 * x * x) / k;
        assert!((bridge_density(&spec, 1.0, x).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn bridge_control_is_log_derivative_of_density() {
        let spec = BridgeSpec::new(1.7, 1.5, -0.3).unwrap();
        for &(t, x) in &[(0.0, 0.5), (0.7, -1.2), (1.2, 2.0)] {
            let h = 1e-5;
            let up = bridge_density(&spec, t, x + h).unwrap();
            let dn = bridge_density(&spec, t, x - h).unwrap();
            let z = bridge_density(&spec, t, x).unwrap();
            let fd = (up - dn) / (2.0 * h * z);
            let u = bridge_control(&spec, t, x).unwrap();
            assert!((fd - u).abs() / u.abs().max(1.0) < 1e-6, "t={t} x={x}");
        }
    }

    #[test]
    fn max_bm_k_matches_closed_form() {
        // K = exp(beta^2 T/2) erfc(beta sqrt(T/2)) = erfcx(beta sqrt(T/2))
        for &(beta, t) in &[(1.0, 1.0), (2.5, 0.5), (0.3, 3.0)] {
            let spec = MaxBmSpec::new(beta, t).unwrap();
            let expected = erfcx(beta * (t / 2.0).sqrt());
            assert!(
                (spec.k_norm() - expected).abs() < 1e-12,
                "beta={beta} T={t}: {} vs {expected}",
                spec.k_norm()
            );
        }
    }

    #[test]
    fn conditional_density_below_max_is_zero() {
        let spec = MaxBmSpec::new(1.0, 1.0).unwrap();
        assert_eq!(
            max_bm_conditional_density(&spec, 0.2, 0.0, 0.5, 0.4).unwrap(),
            0.0
        );
    }

    #[test]
    fn conditional_density_point_value() {
        // w = m = 0, t = 0, T = 1, xi = 1 -> sqrt(2/pi) e^{-1/2}
        let spec = MaxBmSpec::new(1.0, 1.0).unwrap();
        let v = max_bm_conditional_density(&spec, 0.0, 0.0, 0.0, 1.0).unwrap();
        let expected = (2.0 / PI).sqrt() * f64::exp(-0.5);
        assert!((v - expected).abs() < 1e-12);
        assert!((expected - 0.483941).abs() < 1e-6);
    }

    #[test]
    fn atom_plus_tail_is_one() {
        let spec = MaxBmSpec::new(1.0, 1.0).unwrap();
        for &(t, w, m) in &[(0.3, 0.1, 0.4), (0.0, 0.0, 0.0), (0.9, -0.5, 0.2)] {
            let atom = max_bm_atom(&spec, t, w, m).unwrap();
            let tail = quad::integrate(
                |xi| max_bm_conditional_density(&spec, t, w, m, xi).unwrap(),
                m,
                m + 14.0 * (spec.horizon - t).sqrt(),
                1e-12,
            );
            assert!((atom + tail - 1.0).abs() < 1e-10, "t={t} w={w} m={m}");
        }
    }

    #[test]
    fn density_at_start_is_one() {
        let spec = MaxBmSpec::new(1.7, 1.0).unwrap();
        let z0 = max_bm_density(&spec, 0.0, 0.0, 0.0).unwrap();
        assert!((z0 - 1.0).abs() < 1e-11, "Z_0 = {z0}");
    }

    #[test]
    fn density_deep_below_max_limit() {
        let spec = MaxBmSpec::new(1.0, 1.0).unwrap();
        let z = max_bm_density(&spec, 0.5, -40.0, 0.3).unwrap();
        let expected = f64::exp(-0.3) / spec.k_norm();
        assert!((z - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn control_at_running_max_is_minus_beta() {
        let spec = MaxBmSpec::new(2.2, 1.0).unwrap();
        let u = max_bm_control(&spec, 0.4, 0.7, 0.7).unwrap();
        assert_eq!(u, -2.2);
    }

    #[test]
    fn control_deep_below_max_vanishes() {
        let spec = MaxBmSpec::new(1.0, 1.0).unwrap();
        let u = max_bm_control(&spec, 0.5, -50.0, 0.0).unwrap();
        assert!(u.abs() < 1e-200);
    }

    #[test]
    fn control_bounded_on_random_states() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            // splitmix64, plenty for a sweep
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        };
        let spec = MaxBmSpec::new(1.0, 1.0).unwrap();
        for _ in 0..100_000 {
            let t = next() * 0.999;
            let w = (next() - 0.5) * 10.0;
            let m = w + next() * 5.0;
            let u = max_bm_control(&spec, t, w, m).unwrap();
            assert!((-1.0..=0.0).contains(&u), "u={u} at t={t} w={w} m={m}");
        }
    }

    #[test]
    fn control_matches_unscaled_formula_in_safe_range() {
        // direct erf/erfc evaluation, valid while exp(beta^2(T-t)/2) is small
        let spec = MaxBmSpec::new(1.0, 1.0).unwrap();
        for &(t, w, m) in &[(0.5, 0.0, 0.3), (0.2, -1.0, 0.5), (0.95, 0.1, 0.11)] {
            let rem = spec.horizon - t;
            let num = -spec.beta
                * f64::exp(-spec.beta * w + 0.5 * spec.beta * spec.beta * rem)
                * erfc((m - w + spec.beta * rem) / (2.0 * rem).sqrt());
            let den = f64::exp(-spec.beta * m) * erf((m - w) / (2.0 * rem).sqrt())
                + f64::exp(-spec.beta * w + 0.5 * spec.beta * spec.beta * rem)
                    * erfc((m - w + spec.beta * rem) / (2.0 * rem).sqrt());
            let direct = num / den;
            let stable = max_bm_control(&spec, t, w, m).unwrap();
            assert!((direct - stable).abs() < 1e-12, "t={t} w={w} m={m}");
        }
    }

    #[test]
    fn control_is_log_derivative_of_density_in_w() {
        let spec = MaxBmSpec::new(1.0, 1.0).unwrap();
        for &(t, w, m) in &[(0.5, 0.0, 0.3), (0.1, -0.4, 0.2), (0.8, 0.3, 0.9)] {
            let h = 1e-5;
            let up = max_bm_density(&spec, t, w + h, m).unwrap();
            let dn = max_bm_density(&spec, t, w - h, m).unwrap();
            let z = max_bm_density(&spec, t, w, m).unwrap();
            let fd = (up - dn) / (2.0 * h * z);
            let u = max_bm_control(&spec, t, w, m).unwrap();
            assert!((fd - u).abs() / u.abs().max(1e-3) < 1e-6, "t={t} w={w} m={m}");
        }
    }

    #[test]
    fn max_state_domain_errors() {
        let spec = MaxBmSpec::new(1.0, 1.0).unwrap();
        assert!(max_bm_control(&spec, 1.0, 0.0, 0.0).is_err());
        assert!(max_bm_control(&spec, 0.5, 0.5, 0.2).is_err());
        assert!(max_bm_density(&spec, 1.5, 0.0, 0.0).is_err());
    }
}
