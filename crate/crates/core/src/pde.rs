//! Finite-difference solution of the linearized value equation in one
//! spatial dimension,
//!
//!   L y - beta phi y = 0,   y = exp(-beta psi) on the boundary data,
//!
//! where L is the backward generator of dX = b dt + sigma dW. The optimal
//! control is read off as u* = sigma y_x / y and the value function as
//! J* = -(1/beta) ln y. A Feynman–Kac Monte Carlo estimator provides an
//! independent cross-check of the grid solution.

use crate::error::{Error, Result};
use crate::path::{mean_and_se, ControlPolicy, McEstimate, StateDependency};
use crate::stream::path_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::Write;

type CoeffFn = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Spatial domain: an open interval, or the whole line truncated at
/// solve time to x0 ± 8 sigma sqrt(T) with artificial Dirichlet data.
#[derive(Clone, Copy, Debug)]
pub enum Domain {
    Bounded(f64, f64),
    Unbounded,
}

/// Problem data for the linearized equation. Coefficients take (t, x);
/// the exit problem evaluates them at t = 0.
pub struct PdeProblem {
    pub drift: CoeffFn,
    pub sigma: CoeffFn,
    pub phi: CoeffFn,
    pub psi: CoeffFn,
    pub domain: Domain,
    pub horizon: f64,
    pub beta: f64,
}

impl PdeProblem {
    pub fn new(
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        phi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        psi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        domain: Domain,
        horizon: f64,
        beta: f64,
    ) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon must be > 0, got {horizon}")));
        }
        if let Domain::Bounded(lo, hi) = domain {
            if !(lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "domain needs lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(Self {
            drift: Box::new(drift),
            sigma: Box::new(sigma),
            phi: Box::new(phi),
            psi: Box::new(psi),
            domain,
            horizon,
            beta,
        })
    }

    /// The interval the grid covers, truncating an unbounded domain
    /// around x0 = 0 at eight standard deviations of the driving noise.
    pub fn space_interval(&self) -> (f64, f64) {
        match self.domain {
            Domain::Bounded(lo, hi) => (lo, hi),
            Domain::Unbounded => {
                let s = (self.sigma)(0.0, 0.0).abs().max(1e-8);
                let half = 8.0 * s * self.horizon.sqrt();
                (-half, half)
            }
        }
    }

    fn check_ellipticity(&self, times: &[f64], xs: &[f64]) -> Result<()> {
        const FLOOR: f64 = 1e-10;
        for &t in times {
            for &x in xs {
                let s2 = (self.sigma)(t, x).powi(2);
                if !(s2 > FLOOR) {
                    return Err(Error::Domain(format!(
                        "sigma^2 = {s2} below ellipticity floor at (t, x) = ({t}, {x})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Grid solution: y > 0 on a time × space grid plus the extracted
/// control. The exit problem uses a single time level at t = 0.
pub struct GridSolution {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    /// y[time][space]
    pub y: Vec<Vec<f64>>,
    /// u_star[time][space] = sigma y_x / y
    pub u_star: Vec<Vec<f64>>,
}

impl GridSolution {
    /// J* = -(1/beta) ln y, elementwise on the first time level (t = 0
    /// for the finite-horizon sweep, the only level for the exit BVP).
    pub fn value_function(&self, beta: f64) -> Vec<f64> {
        self.y[0].iter().map(|&v| -v.ln() / beta).collect()
    }

    pub fn x_index(&self, x: f64) -> usize {
        let h = self.xs[1] - self.xs[0];
        (((x - self.xs[0]) / h).round() as usize).min(self.xs.len() - 1)
    }

    /// CSV rows (t, x, y, u_star, J_star).
    pub fn write_csv<W: Write>(&self, mut w: W, beta: f64) -> Result<()> {
        writeln!(w, "# schema v1: t,x,y,u_star,j_star")?;
        writeln!(w, "t,x,y,u_star,j_star")?;
        for (ti, &t) in self.times.iter().enumerate() {
            for (xi, &x) in self.xs.iter().enumerate() {
                let y = self.y[ti][xi];
                writeln!(w, "{t},{x},{y},{},{}", self.u_star[ti][xi], -y.ln() / beta)?;
            }
        }
        Ok(())
    }
}

/// Thomas algorithm for a tridiagonal system; `a` sub-, `b` main, `c`
/// super-diagonal.
fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut piv = b[0];
    if piv.abs() < 1e-300 {
        return Err(Error::LinearSolve("zero pivot in tridiagonal solve".into()));
    }
    cp[0] = c[0] / piv;
    dp[0] = d[0] / piv;
    for i in 1..n {
        piv = b[i] - a[i] * cp[i - 1];
        if piv.abs() < 1e-300 {
            return Err(Error::LinearSolve(format!("zero pivot at row {i}")));
        }
        cp[i] = c[i] / piv;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / piv;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    Ok(x)
}

fn check_positive(level: &[f64], t: f64, xs: &[f64]) -> Result<()> {
    for (i, &y) in level.iter().enumerate() {
        if !(y > 0.0) || !y.is_finite() {
            return Err(Error::PositivityViolation { t, x: xs[i], y });
        }
    }
    Ok(())
}

/// Backward Crank–Nicolson sweep for the finite-horizon problem with
/// Dirichlet data exp(-beta psi) at t = T and on the lateral boundary.
pub fn solve_finite_horizon(problem: &PdeProblem, nx: usize, nt: usize) -> Result<GridSolution> {
    if nx < 8 || nt < 8 {
        return Err(Error::InvalidParameter(format!("need nx, nt >= 8, got ({nx}, {nt})")));
    }
    let (lo, hi) = problem.space_interval();
    let h = (hi - lo) / nx as f64;
    let dt = problem.horizon / nt as f64;
    let xs: Vec<f64> = (0..=nx).map(|i| lo + i as f64 * h).collect();
    let times: Vec<f64> = (0..=nt).map(|k| k as f64 * dt).collect();
    problem.check_ellipticity(&times, &xs)?;
    let beta = problem.beta;

    // spatial operator row (sub, diag, super) at (t, x_i)
    let row = |t: f64, i: usize| -> (f64, f64, f64) {
        let x = xs[i];
        let b = (problem.drift)(t, x);
        let s2 = (problem.sigma)(t, x).powi(2);
        let p = (problem.phi)(t, x);
        let sub = 0.5 * s2 / (h * h) - b / (2.0 * h);
        let diag = -s2 / (h * h) - beta * p;
        let sup = 0.5 * s2 / (h * h) + b / (2.0 * h);
        (sub, diag, sup)
    };

    let mut y = vec![vec![0.0; nx + 1]; nt + 1];
    for i in 0..=nx {
        y[nt][i] = (-beta * (problem.psi)(times[nt], xs[i])).exp();
    }
    check_positive(&y[nt], times[nt], &xs)?;

    for k in (0..nt).rev() {
        let (t_new, t_old) = (times[k], times[k + 1]);
        let n_int = nx - 1;
        let mut sub = vec![0.0; n_int];
        let mut diag = vec![0.0; n_int];
        let mut sup = vec![0.0; n_int];
        let mut rhs = vec![0.0; n_int];
        let bd_lo_new = (-beta * (problem.psi)(t_new, xs[0])).exp();
        let bd_hi_new = (-beta * (problem.psi)(t_new, xs[nx])).exp();
        for j in 0..n_int {
            let i = j + 1;
            // explicit half at the old (later) level
            let (ao, bo, co) = row(t_old, i);
            rhs[j] = y[k + 1][i]
                + 0.5 * dt * (ao * y[k + 1][i - 1] + bo * y[k + 1][i] + co * y[k + 1][i + 1]);
            // implicit half at the new level
            let (an, bn, cn) = row(t_new, i);
            sub[j] = -0.5 * dt * an;
            diag[j] = 1.0 - 0.5 * dt * bn;
            sup[j] = -0.5 * dt * cn;
            if i == 1 {
                rhs[j] -= sub[j] * bd_lo_new;
                sub[j] = 0.0;
            }
            if i == nx - 1 {
                rhs[j] -= sup[j] * bd_hi_new;
                sup[j] = 0.0;
            }
        }
        let interior = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
        y[k][0] = bd_lo_new;
        y[k][nx] = bd_hi_new;
        y[k][1..nx].copy_from_slice(&interior);
        check_positive(&y[k], t_new, &xs)?;
    }

    let u_star = extract_control_grid(problem, &times, &xs, &y);
    Ok(GridSolution { times, xs, y, u_star })
}

/// Two-point boundary value problem for the time-homogeneous exit
/// formulation; coefficients are evaluated at t = 0.
pub fn solve_exit_problem(problem: &PdeProblem, nx: usize) -> Result<GridSolution> {
    if nx < 8 {
        return Err(Error::InvalidParameter(format!("need nx >= 8, got {nx}")));
    }
    let (lo, hi) = match problem.domain {
        Domain::Bounded(lo, hi) => (lo, hi),
        Domain::Unbounded => {
            return Err(Error::InvalidParameter(
                "exit problem needs a bounded interval".into(),
            ))
        }
    };
    let h = (hi - lo) / nx as f64;
    let xs: Vec<f64> = (0..=nx).map(|i| lo + i as f64 * h).collect();
    problem.check_ellipticity(&[0.0], &xs)?;
    let beta = problem.beta;

    let n_int = nx - 1;
    let mut sub = vec![0.0; n_int];
    let mut diag = vec![0.0; n_int];
    let mut sup = vec![0.0; n_int];
    let mut rhs = vec![0.0; n_int];
    let bd_lo = (-beta * (problem.psi)(0.0, xs[0])).exp();
    let bd_hi = (-beta * (problem.psi)(0.0, xs[nx])).exp();
    for j in 0..n_int {
        let i = j + 1;
        let x = xs[i];
        let b = (problem.drift)(0.0, x);
        let s2 = (problem.sigma)(0.0, x).powi(2);
        let p = (problem.phi)(0.0, x);
        sub[j] = 0.5 * s2 / (h * h) - b / (2.0 * h);
        diag[j] = -s2 / (h * h) - beta * p;
        sup[j] = 0.5 * s2 / (h * h) + b / (2.0 * h);
        if i == 1 {
            rhs[j] -= sub[j] * bd_lo;
            sub[j] = 0.0;
        }
        if i == nx - 1 {
            rhs[j] -= sup[j] * bd_hi;
            sup[j] = 0.0;
        }
    }
    let interior = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
    let mut level = vec![0.0; nx + 1];
    level[0] = bd_lo;
    level[nx] = bd_hi;
    level[1..nx].copy_from_slice(&interior);
    check_positive(&level, 0.0, &xs)?;

    let times = vec![0.0];
    let y = vec![level];
    let u_star = extract_control_grid(problem, &times, &xs, &y);
    Ok(GridSolution { times, xs, y, u_star })
}

fn extract_control_grid(
    problem: &PdeProblem,
    times: &[f64],
    xs: &[f64],
    y: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let nx = xs.len() - 1;
    let h = xs[1] - xs[0];
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            (0..=nx)
                .map(|i| {
                    let dy = if i == 0 {
                        (y[k][1] - y[k][0]) / h
                    } else if i == nx {
                        (y[k][nx] - y[k][nx - 1]) / h
                    } else {
                        (y[k][i + 1] - y[k][i - 1]) / (2.0 * h)
                    };
                    (problem.sigma)(t, xs[i]) * dy / y[k][i]
                })
                .collect()
        })
        .collect()
}

/// u* = sigma y_x / y by central differences (one-sided at the walls).
pub fn extract_control(sol: &GridSolution, problem: &PdeProblem) -> Vec<Vec<f64>> {
    extract_control_grid(problem, &sol.times, &sol.xs, &sol.y)
}

/// Interpolating policy over a finite-horizon grid solution, so the
/// extracted control can be fed back into the path engine. Linear in x
/// and in t, clamped to the grid box.
pub struct GridPolicy<'a> {
    sol: &'a GridSolution,
}

impl<'a> GridPolicy<'a> {
    pub fn new(sol: &'a GridSolution) -> Self {
        Self { sol }
    }

    fn lookup(&self, t: f64, x: f64) -> f64 {
        let s = self.sol;
        let nt = s.times.len() - 1;
        let nx = s.xs.len() - 1;
        let dt = if nt > 0 { s.times[1] - s.times[0] } else { 1.0 };
        let h = s.xs[1] - s.xs[0];
        let ft = ((t - s.times[0]) / dt).clamp(0.0, nt as f64);
        let fx = ((x - s.xs[0]) / h).clamp(0.0, nx as f64);
        let (k, a) = (ft.floor() as usize, ft.fract());
        let (i, b) = (fx.floor() as usize, fx.fract());
        let (k1, i1) = ((k + 1).min(nt), (i + 1).min(nx));
        let u = &s.u_star;
        (1.0 - a) * ((1.0 - b) * u[k][i] + b * u[k][i1])
            + a * ((1.0 - b) * u[k1][i] + b * u[k1][i1])
    }
}

impl ControlPolicy for GridPolicy<'_> {
    fn dependency(&self) -> StateDependency {
        StateDependency::TimeState
    }

    fn eval(&self, t: f64, state: &[f64], _m: f64, out: &mut [f64]) {
        out[0] = self.lookup(t, state[0]);
    }
}

/// Feynman–Kac estimate of y(t, x) for the finite-horizon problem:
/// mean of exp(-beta ∫ phi ds - beta psi) over uncontrolled paths started
/// at (t, x), stopped at the first grid time outside G or at T.
pub fn feynman_kac_mc(
    problem: &PdeProblem,
    t: f64,
    x: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    let remaining = problem.horizon - t;
    if !(remaining > 0.0) {
        return Err(Error::Domain(format!("t = {t} not before horizon {}", problem.horizon)));
    }
    let (lo, hi) = problem.space_interval();
    if matches!(problem.domain, Domain::Bounded(..)) && !(x > lo && x < hi) {
        return Err(Error::Domain(format!("x = {x} not interior to ({lo}, {hi})")));
    }
    let dt = remaining / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let bounded = matches!(problem.domain, Domain::Bounded(..));
    let beta = problem.beta;
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut rng = path_rng(seed, j as u64);
            let mut s = t;
            let mut w = x;
            let mut phi_int = 0.0;
            for _ in 0..n_steps {
                phi_int += (problem.phi)(s, w) * dt;
                let z: f64 = rng.sample(StandardNormal);
                w += (problem.drift)(s, w) * dt + (problem.sigma)(s, w) * z * sqrt_dt;
                s += dt;
                if bounded && !(w > lo && w < hi) {
                    return (-beta * (phi_int + (problem.psi)(s, w))).exp();
                }
            }
            (-beta * (phi_int + (problem.psi)(problem.horizon, w))).exp()
        })
        .collect();
    let (mean, se) = mean_and_se(&samples);
    Ok(McEstimate { estimate: mean, std_error: se, n_effective: n_paths, n_excluded: 0 })
}

/// Feynman–Kac estimate of y(x) for the exit problem: paths run until
/// the first grid time outside G (detection at grid times only, with the
/// usual O(sqrt(dt)) exit bias).
pub fn feynman_kac_exit_mc(
    problem: &PdeProblem,
    x: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    let (lo, hi) = match problem.domain {
        Domain::Bounded(lo, hi) => (lo, hi),
        Domain::Unbounded => {
            return Err(Error::InvalidParameter("exit problem needs a bounded interval".into()))
        }
    };
    if !(x > lo && x < hi) {
        return Err(Error::Domain(format!("x = {x} not interior to ({lo}, {hi})")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    const MAX_STEPS: usize = 100_000_000;
    let sqrt_dt = dt.sqrt();
    let beta = problem.beta;
    let samples: Vec<Result<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut rng = path_rng(seed, j as u64);
            let mut w = x;
            let mut phi_int = 0.0;
            for _ in 0..MAX_STEPS {
                phi_int += (problem.phi)(0.0, w) * dt;
                let z: f64 = rng.sample(StandardNormal);
                w += (problem.drift)(0.0, w) * dt + (problem.sigma)(0.0, w) * z * sqrt_dt;
                if !(w > lo && w < hi) {
                    return Ok((-beta * (phi_int + (problem.psi)(0.0, w))).exp());
                }
            }
            Err(Error::Domain(format!("path {j} did not exit within {MAX_STEPS} steps")))
        })
        .collect();
    let values: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
    let (mean, se) = mean_and_se(&values);
    Ok(McEstimate { estimate: mean, std_error: se, n_effective: n_paths, n_excluded: 0 })
}
