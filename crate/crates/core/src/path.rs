//! Brownian path generation, controlled Euler–Maruyama integration with
//! Girsanov density tracking, and Monte Carlo estimation of
//! entropy-weighted cost.
//!
//! Sampling runs under the *controlled* measure: the simulated increments
//! are increments of the tilted Brownian motion W^u, and the
//! base-measure increments are reconstructed as dW = dW^u + u*dt. The
//! log-density of dP^u/dQ accumulates along the same path, so E^u
//! expectations are plain sample means and no importance weights degrade.
//!
//! All estimator reductions are ordered per-path sums, independent of the
//! rayon worker count.

use crate::error::{Error, Result};
use crate::stream::path_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::Write;

/// Uniform grid on [t0, t0 + horizon].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Grid on [0, horizon] with `n_steps` uniform steps.
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        Self::starting_at(0.0, horizon, n_steps)
    }

    /// Grid on [t0, t0 + horizon]; used for conditional restarts.
    pub fn starting_at(t0: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
        }
        Ok(Self { t0, horizon, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.horizon * k as f64 / self.n_steps as f64
    }

    /// Nearest grid index for a time in [t0, t_end].
    pub fn index_of(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt()).round() as i64;
        k.clamp(0, self.n_steps as i64) as usize
    }
}

/// What a policy needs to see besides (t, state).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateDependency {
    TimeState,
    TimeStateMax,
    OpenLoop,
}

/// Evaluable control law. `running_max` carries the max of the first state
/// component so far; policies that do not declare `TimeStateMax` ignore it.
pub trait ControlPolicy: Sync {
    fn dependency(&self) -> StateDependency {
        StateDependency::TimeState
    }

    /// Writes the control vector (length = noise dimension) into `out`.
    fn eval(&self, t: f64, state: &[f64], running_max: f64, out: &mut [f64]);
}

/// The zero control; sampling under it is the base measure.
pub struct ZeroPolicy;

impl ControlPolicy for ZeroPolicy {
    fn dependency(&self) -> StateDependency {
        StateDependency::OpenLoop
    }

    fn eval(&self, _t: f64, _state: &[f64], _m: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Constant (open-loop) control.
pub struct ConstantPolicy(pub Vec<f64>);

impl ControlPolicy for ConstantPolicy {
    fn dependency(&self) -> StateDependency {
        StateDependency::OpenLoop
    }

    fn eval(&self, _t: f64, _state: &[f64], _m: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Scalar feedback law u(t, x) for one-dimensional problems.
pub struct ScalarPolicy<F: Fn(f64, f64) -> f64 + Sync>(pub F);

impl<F: Fn(f64, f64) -> f64 + Sync> ControlPolicy for ScalarPolicy<F> {
    fn eval(&self, t: f64, state: &[f64], _m: f64, out: &mut [f64]) {
        out[0] = (self.0)(t, state[0]);
    }
}

/// Scalar law u(t, w, m) that also reads the running maximum.
pub struct MaxAwarePolicy<F: Fn(f64, f64, f64) -> f64 + Sync>(pub F);

impl<F: Fn(f64, f64, f64) -> f64 + Sync> ControlPolicy for MaxAwarePolicy<F> {
    fn dependency(&self) -> StateDependency {
        StateDependency::TimeStateMax
    }

    fn eval(&self, t: f64, state: &[f64], m: f64, out: &mut [f64]) {
        out[0] = (self.0)(t, state[0], m);
    }
}

/// Drift b(t,x) in R^n and diffusion sigma(t,x) in R^{n x p} (row-major).
pub struct SdeCoefficients {
    pub dim_state: usize,
    pub dim_noise: usize,
    drift: Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync>,
    diffusion: Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync>,
}

impl SdeCoefficients {
    pub fn new(
        dim_state: usize,
        dim_noise: usize,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &mut [f64]) + Sync + 'static,
    ) -> Self {
        Self {
            dim_state,
            dim_noise,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
        }
    }

    /// One-dimensional dynamics dX = b(t,x) dt + sigma(t,x) dW.
    pub fn scalar(
        b: impl Fn(f64, f64) -> f64 + Sync + 'static,
        sigma: impl Fn(f64, f64) -> f64 + Sync + 'static,
    ) -> Self {
        Self::new(
            1,
            1,
            move |t, x, out| out[0] = b(t, x[0]),
            move |t, x, out| out[0] = sigma(t, x[0]),
        )
    }

    /// dX = dW in one dimension.
    pub fn standard_brownian() -> Self {
        Self::scalar(|_, _| 0.0, |_, _| 1.0)
    }

    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    pub fn diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }
}

/// Path cost declared through its ingredients: a running integrand, a
/// terminal map, and an optional multiple of the running maximum of the
/// first state component.
pub struct CostFunctional {
    pub running: Option<Box<dyn Fn(f64, &[f64]) -> f64 + Sync>>,
    pub terminal: Option<Box<dyn Fn(&[f64]) -> f64 + Sync>>,
    pub max_weight: f64,
}

impl CostFunctional {
    pub fn terminal(f: impl Fn(&[f64]) -> f64 + Sync + 'static) -> Self {
        Self {
            running: None,
            terminal: Some(Box::new(f)),
            max_weight: 0.0,
        }
    }

    pub fn running(f: impl Fn(f64, &[f64]) -> f64 + Sync + 'static) -> Self {
        Self {
            running: Some(Box::new(f)),
            terminal: None,
            max_weight: 0.0,
        }
    }

    /// C = (1/2)(X_T - x_star)^2 on the first component.
    pub fn quadratic_terminal(x_star: f64) -> Self {
        Self::terminal(move |x| 0.5 * (x[0] - x_star) * (x[0] - x_star))
    }

    /// C = max_t X_t on the first component.
    pub fn running_max() -> Self {
        Self {
            running: None,
            terminal: None,
            max_weight: 1.0,
        }
    }

    pub fn constant(k: f64) -> Self {
        Self::terminal(move |_| k)
    }

    /// Evaluates the functional on a stored trajectory; the running part
    /// uses the trapezoid rule on the grid.
    pub fn evaluate(&self, grid: &TimeGrid, states: &[f64], dim_n: usize, running_max: f64) -> f64 {
        let n = grid.n_steps();
        let mut total = 0.0;
        if let Some(phi) = &self.running {
            let dt = grid.dt();
            let mut acc = 0.0;
            for k in 0..=n {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                acc += w * phi(grid.time(k), &states[k * dim_n..(k + 1) * dim_n]);
            }
            total += acc * dt;
        }
        if let Some(psi) = &self.terminal {
            total += psi(&states[n * dim_n..(n + 1) * dim_n]);
        }
        total += self.max_weight * running_max;
        total
    }
}

/// One simulated trajectory with everything the estimators read.
pub struct PathSample {
    /// (n_steps+1) * dim_n flattened states.
    pub states: Vec<f64>,
    /// n_steps * dim_p base-measure Brownian increments dW.
    pub q_increments: Vec<f64>,
    /// ln Z^U at every grid node (identically 0 for uncontrolled paths).
    pub log_density: Vec<f64>,
    /// Running maximum of the first state component at every node.
    pub running_max: Vec<f64>,
    /// Left-point sum of |u|^2 dt over the grid.
    pub control_sq: f64,
    pub diverged: bool,
}

impl PathSample {
    pub fn state(&self, k: usize, dim_n: usize) -> &[f64] {
        &self.states[k * dim_n..(k + 1) * dim_n]
    }

    pub fn terminal_state(&self, dim_n: usize) -> &[f64] {
        let n = self.states.len() / dim_n - 1;
        self.state(n, dim_n)
    }
}

/// Simulates one controlled path; `policy = None` is the uncontrolled
/// base-measure dynamics.
pub fn simulate_one(
    coeffs: &SdeCoefficients,
    policy: Option<&dyn ControlPolicy>,
    grid: &TimeGrid,
    x0: &[f64],
    rng: &mut ChaCha8Rng,
) -> PathSample {
    let n = grid.n_steps();
    let dim_n = coeffs.dim_state;
    let dim_p = coeffs.dim_noise;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let mut states = vec![0.0; (n + 1) * dim_n];
    let mut q_increments = vec![0.0; n * dim_p];
    let mut log_density = vec![0.0; n + 1];
    let mut running_max = vec![0.0; n + 1];
    states[..dim_n].copy_from_slice(x0);
    running_max[0] = x0[0];

    let mut drift = vec![0.0; dim_n];
    let mut sigma = vec![0.0; dim_n * dim_p];
    let mut u = vec![0.0; dim_p];
    let mut dw = vec![0.0; dim_p];
    let mut control_sq = 0.0;
    let mut diverged = false;

    for k in 0..n {
        let t = grid.time(k);
        let (xk, rest) = states[k * dim_n..].split_at_mut(dim_n);
        let x_next = &mut rest[..dim_n];
        for d in dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *d = z * sqrt_dt;
        }
        coeffs.drift_into(t, xk, &mut drift);
        coeffs.diffusion_into(t, xk, &mut sigma);
        let mut u_sq = 0.0;
        let mut u_dot_dw = 0.0;
        if let Some(p) = policy {
            p.eval(t, xk, running_max[k], &mut u);
            for j in 0..dim_p {
                u_sq += u[j] * u[j];
                u_dot_dw += u[j] * dw[j];
            }
        }
        for i in 0..dim_n {
            let mut sig_term = 0.0;
            let mut sig_u = 0.0;
            for j in 0..dim_p {
                let s = sigma[i * dim_p + j];
                sig_term += s * dw[j];
                sig_u += s * u[j];
            }
            x_next[i] = xk[i] + (drift[i] + sig_u) * dt + sig_term;
        }
        // the sampled increments are dW^u; base-measure increments are dW = dW^u + u dt
        for j in 0..dim_p {
            q_increments[k * dim_p + j] = dw[j] + u[j] * dt;
        }
        // ln Z increment: u . dW - |u|^2 dt / 2 = u . dW^u + |u|^2 dt / 2
        log_density[k + 1] = log_density[k] + u_dot_dw + 0.5 * u_sq * dt;
        control_sq += u_sq * dt;
        running_max[k + 1] = running_max[k].max(x_next[0]);
        if x_next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            // freeze the remaining nodes at the last finite-ish value
            for kk in (k + 1)..n {
                let (src, dst) = states[kk * dim_n..].split_at_mut(dim_n);
                dst[..dim_n].copy_from_slice(src);
                log_density[kk + 1] = log_density[kk];
                running_max[kk + 1] = running_max[kk];
            }
            break;
        }
    }

    PathSample {
        states,
        q_increments,
        log_density,
        running_max,
        control_sq,
        diverged,
    }
}

/// Streams `n_paths` controlled paths through `f`, in parallel, returning
/// the per-path results in path order.
pub fn map_paths<R: Send>(
    coeffs: &SdeCoefficients,
    policy: Option<&dyn ControlPolicy>,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
    f: impl Fn(usize, &PathSample) -> R + Sync,
) -> Vec<R> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let sample = simulate_one(coeffs, policy, grid, x0, &mut rng);
            f(i, &sample)
        })
        .collect()
}

/// Grid plus a materialized ensemble of trajectories.
pub struct PathBundle {
    pub grid: TimeGrid,
    pub dim_p: usize,
    pub dim_n: usize,
    pub n_paths: usize,
    paths: Vec<PathSample>,
}

impl PathBundle {
    pub fn path(&self, i: usize) -> &PathSample {
        &self.paths[i]
    }

    pub fn paths(&self) -> &[PathSample] {
        &self.paths
    }

    pub fn n_diverged(&self) -> usize {
        self.paths.iter().filter(|p| p.diverged).count()
    }

    /// CSV export: one row per (path, node).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema v1: path_id,t,state...,running_max,log_density")?;
        let mut header = String::from("path_id,t");
        for i in 0..self.dim_n {
            header.push_str(&format!(",x{i}"));
        }
        header.push_str(",running_max,log_density");
        writeln!(w, "{header}")?;
        for (i, p) in self.paths.iter().enumerate() {
            for k in 0..=self.grid.n_steps() {
                let mut row = format!("{i},{}", self.grid.time(k));
                for v in p.state(k, self.dim_n) {
                    row.push_str(&format!(",{v}"));
                }
                row.push_str(&format!(",{},{}", p.running_max[k], p.log_density[k]));
                writeln!(w, "{row}")?;
            }
        }
        Ok(())
    }
}

/// Raw Brownian bundle: states are the Brownian path itself, the density
/// is identically one.
pub fn sample_paths(
    grid: &TimeGrid,
    n_paths: usize,
    dim_p: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathBundle> {
    if n_paths == 0 || dim_p == 0 {
        return Err(Error::InvalidParameter(
            "n_paths and dim_p must be >= 1".into(),
        ));
    }
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let paths: Vec<PathSample> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            // antithetic pairs share the even path's stream with negated draws
            let source = if antithetic { i - i % 2 } else { i };
            let flip = if antithetic && i % 2 == 1 { -1.0 } else { 1.0 };
            let mut rng = path_rng(seed, source as u64);
            let mut states = vec![0.0; (n + 1) * dim_p];
            let mut q_increments = vec![0.0; n * dim_p];
            let mut running_max: Vec<f64> = vec![0.0; n + 1];
            for k in 0..n {
                for j in 0..dim_p {
                    let z: f64 = rng.sample(StandardNormal);
                    let d = flip * z * sqrt_dt;
                    q_increments[k * dim_p + j] = d;
                    states[(k + 1) * dim_p + j] = states[k * dim_p + j] + d;
                }
                running_max[k + 1] = running_max[k].max(states[(k + 1) * dim_p]);
            }
            PathSample {
                states,
                q_increments,
                log_density: vec![0.0; n + 1],
                running_max,
                control_sq: 0.0,
                diverged: false,
            }
        })
        .collect();
    Ok(PathBundle {
        grid: *grid,
        dim_p,
        dim_n: dim_p,
        n_paths,
        paths,
    })
}

/// Integrates the controlled SDE re-using the increments of `bundle` as
/// increments of W^u, producing states, base-measure increments, and the
/// Girsanov log-density in one sweep.
pub fn integrate_controlled(
    coeffs: &SdeCoefficients,
    policy: &dyn ControlPolicy,
    bundle: &PathBundle,
    x0: &[f64],
) -> Result<PathBundle> {
    if coeffs.dim_noise != bundle.dim_p {
        return Err(Error::DimensionMismatch {
            expected: bundle.dim_p,
            got: coeffs.dim_noise,
        });
    }
    if x0.len() != coeffs.dim_state {
        return Err(Error::DimensionMismatch {
            expected: coeffs.dim_state,
            got: x0.len(),
        });
    }
    let grid = bundle.grid;
    let n = grid.n_steps();
    let dim_n = coeffs.dim_state;
    let dim_p = coeffs.dim_noise;
    let dt = grid.dt();
    let paths: Vec<PathSample> = bundle
        .paths
        .par_iter()
        .map(|src| {
            let mut states = vec![0.0; (n + 1) * dim_n];
            let mut q_increments = vec![0.0; n * dim_p];
            let mut log_density = vec![0.0; n + 1];
            let mut running_max = vec![0.0; n + 1];
            states[..dim_n].copy_from_slice(x0);
            running_max[0] = x0[0];
            let mut drift = vec![0.0; dim_n];
            let mut sigma = vec![0.0; dim_n * dim_p];
            let mut u = vec![0.0; dim_p];
            let mut control_sq = 0.0;
            let mut diverged = false;
            for k in 0..n {
                let t = grid.time(k);
                let (xk, rest) = states[k * dim_n..].split_at_mut(dim_n);
                let x_next = &mut rest[..dim_n];
                let dw_u = &src.q_increments[k * dim_p..(k + 1) * dim_p];
                coeffs.drift_into(t, xk, &mut drift);
                coeffs.diffusion_into(t, xk, &mut sigma);
                policy.eval(t, xk, running_max[k], &mut u);
                let mut u_sq = 0.0;
                let mut u_dot_dw = 0.0;
                for j in 0..dim_p {
                    u_sq += u[j] * u[j];
                    u_dot_dw += u[j] * dw_u[j];
                }
                for i in 0..dim_n {
                    let mut sig_term = 0.0;
                    let mut sig_u = 0.0;
                    for j in 0..dim_p {
                        let s = sigma[i * dim_p + j];
                        sig_term += s * dw_u[j];
                        sig_u += s * u[j];
                    }
                    x_next[i] = xk[i] + (drift[i] + sig_u) * dt + sig_term;
                }
                for j in 0..dim_p {
                    q_increments[k * dim_p + j] = dw_u[j] + u[j] * dt;
                }
                log_density[k + 1] = log_density[k] + u_dot_dw + 0.5 * u_sq * dt;
                control_sq += u_sq * dt;
                running_max[k + 1] = running_max[k].max(x_next[0]);
                if x_next.iter().any(|v| !v.is_finite()) {
                    diverged = true;
                    for kk in (k + 1)..n {
                        let (s0, s1) = states[kk * dim_n..].split_at_mut(dim_n);
                        s1[..dim_n].copy_from_slice(s0);
                        log_density[kk + 1] = log_density[kk];
                        running_max[kk + 1] = running_max[kk];
                    }
                    break;
                }
            }
            PathSample {
                states,
                q_increments,
                log_density,
                running_max,
                control_sq,
                diverged,
            }
        })
        .collect();
    Ok(PathBundle {
        grid,
        dim_p,
        dim_n,
        n_paths: bundle.n_paths,
        paths,
    })
}

/// Along base-measure-sampled paths, accumulates ln Z^U using the stored
/// increments as dW: ln Z_k = sum u.dW - |u|^2 dt / 2. The mean of
/// exp(ln Z_T) over such a bundle is 1 for any admissible policy.
pub fn girsanov_reweigh(bundle: &PathBundle, policy: &dyn ControlPolicy) -> PathBundle {
    let grid = bundle.grid;
    let n = grid.n_steps();
    let dim_n = bundle.dim_n;
    let dim_p = bundle.dim_p;
    let dt = grid.dt();
    let paths: Vec<PathSample> = bundle
        .paths
        .par_iter()
        .map(|src| {
            let mut log_density = vec![0.0; n + 1];
            let mut u = vec![0.0; dim_p];
            let mut control_sq = 0.0;
            for k in 0..n {
                policy.eval(grid.time(k), src.state(k, dim_n), src.running_max[k], &mut u);
                let dw = &src.q_increments[k * dim_p..(k + 1) * dim_p];
                let mut u_sq = 0.0;
                let mut u_dot_dw = 0.0;
                for j in 0..dim_p {
                    u_sq += u[j] * u[j];
                    u_dot_dw += u[j] * dw[j];
                }
                log_density[k + 1] = log_density[k] + u_dot_dw - 0.5 * u_sq * dt;
                control_sq += u_sq * dt;
            }
            PathSample {
                states: src.states.clone(),
                q_increments: src.q_increments.clone(),
                log_density,
                running_max: src.running_max.clone(),
                control_sq,
                diverged: src.diverged,
            }
        })
        .collect();
    PathBundle {
        grid,
        dim_p,
        dim_n,
        n_paths: bundle.n_paths,
        paths,
    }
}

/// Point estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_effective: usize,
    pub n_excluded: usize,
}

/// Ordered (deterministic) mean and standard error of a sample.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        // Kahan summation keeps the reduction deterministic and accurate
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let mean = sum / n;
    let mut var = 0.0;
    for &v in values {
        var += (v - mean) * (v - mean);
    }
    let var = if values.len() > 1 { var / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

const MAX_DIVERGED_RATE: f64 = 1e-3;

fn filter_diverged(values: Vec<Option<f64>>) -> Result<(Vec<f64>, usize)> {
    let total = values.len();
    let kept: Vec<f64> = values.into_iter().flatten().collect();
    let excluded = total - kept.len();
    let rate = excluded as f64 / total as f64;
    if rate > MAX_DIVERGED_RATE {
        return Err(Error::ExcessiveDivergence {
            rate,
            count: excluded,
            total,
        });
    }
    Ok((kept, excluded))
}

/// J(u) estimate: sample mean over controlled paths of
/// c(X) + (1/(2 beta)) sum_k |u(t_k, X_k)|^2 dt.
pub fn estimate_cost(
    coeffs: &SdeCoefficients,
    policy: &dyn ControlPolicy,
    cost: &CostFunctional,
    grid: &TimeGrid,
    n_paths: usize,
    beta: f64,
    x0: &[f64],
    seed: u64,
) -> Result<McEstimate> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    let dim_n = coeffs.dim_state;
    let per_path = map_paths(coeffs, Some(policy), grid, x0, n_paths, seed, |_, p| {
        if p.diverged {
            return None;
        }
        let c = cost.evaluate(grid, &p.states, dim_n, p.running_max[grid.n_steps()]);
        Some(c + p.control_sq / (2.0 * beta))
    });
    let (kept, excluded) = filter_diverged(per_path)?;
    let (mean, se) = mean_and_se(&kept);
    Ok(McEstimate {
        estimate: mean,
        std_error: se,
        n_effective: kept.len(),
        n_excluded: excluded,
    })
}

/// Optimal value by the exponential-of-cost route:
/// -(1/beta) ln E^Q[exp(-beta c(X))] under uncontrolled dynamics, with a
/// delta-method standard error.
pub fn optimal_value_mc(
    cost: &CostFunctional,
    coeffs: &SdeCoefficients,
    grid: &TimeGrid,
    n_paths: usize,
    beta: f64,
    x0: &[f64],
    seed: u64,
) -> Result<McEstimate> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    let dim_n = coeffs.dim_state;
    let costs = map_paths(coeffs, None, grid, x0, n_paths, seed, |_, p| {
        if p.diverged {
            return None;
        }
        Some(cost.evaluate(grid, &p.states, dim_n, p.running_max[grid.n_steps()]))
    });
    let (kept, excluded) = filter_diverged(costs)?;
    // max-shift so exp(-beta c) cannot overflow for deeply negative costs
    let shift = kept.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let weights: Vec<f64> = kept.iter().map(|&c| f64::exp(-beta * (c - shift))).collect();
    let (mean_w, se_w) = mean_and_se(&weights);
    if !(mean_w > 0.0) {
        return Err(Error::NormalizationUnderflow);
    }
    Ok(McEstimate {
        estimate: shift - mean_w.ln() / beta,
        std_error: se_w / (beta * mean_w),
        n_effective: weights.len(),
        n_excluded: excluded,
    })
}

/// H(P^u; P^v) estimate: mean over u-controlled paths of
/// (1/2) sum_k |u - v|^2(t_k, X_k) dt.
///
/// The factor 1/2 is forced by the V = 0 specialization
/// H(P^u; Q) = E^u[(1/2) int |u|^2], itself fixed by the Girsanov
/// log-density.
pub fn entropy_between_policies(
    policy_u: &dyn ControlPolicy,
    policy_v: &dyn ControlPolicy,
    coeffs: &SdeCoefficients,
    grid: &TimeGrid,
    n_paths: usize,
    x0: &[f64],
    seed: u64,
) -> Result<McEstimate> {
    let dim_n = coeffs.dim_state;
    let dim_p = coeffs.dim_noise;
    let dt = grid.dt();
    let per_path = map_paths(coeffs, Some(policy_u), grid, x0, n_paths, seed, |_, p| {
        if p.diverged {
            return None;
        }
        let mut u = vec![0.0; dim_p];
        let mut v = vec![0.0; dim_p];
        let mut acc = 0.0;
        for k in 0..grid.n_steps() {
            let t = grid.time(k);
            let x = p.state(k, dim_n);
            policy_u.eval(t, x, p.running_max[k], &mut u);
            policy_v.eval(t, x, p.running_max[k], &mut v);
            for j in 0..dim_p {
                let d = u[j] - v[j];
                acc += d * d;
            }
        }
        Some(0.5 * acc * dt)
    });
    let (kept, excluded) = filter_diverged(per_path)?;
    let (mean, se) = mean_and_se(&kept);
    Ok(McEstimate {
        estimate: mean,
        std_error: se,
        n_effective: kept.len(),
        n_excluded: excluded,
    })
}

/// Both sides of the density/drift identity at t = 0 for p = 1:
/// lhs = E^Q[Z^U_T W_r], rhs = int_0^r E^Q[U_s Z^U_s] ds.
#[derive(Debug, Clone, Copy)]
pub struct DensityDriftCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_std_error: f64,
    pub rhs_std_error: f64,
}

impl DensityDriftCheck {
    pub fn joint_std_error(&self) -> f64 {
        (self.lhs_std_error * self.lhs_std_error + self.rhs_std_error * self.rhs_std_error).sqrt()
    }
}

pub fn density_drift_identity_check(
    policy: &dyn ControlPolicy,
    grid: &TimeGrid,
    n_paths: usize,
    r: f64,
    seed: u64,
) -> Result<DensityDriftCheck> {
    if r < 0.0 || r > grid.t_end() + 1e-12 {
        return Err(Error::Domain(format!("r = {r} outside [0, T]")));
    }
    let kr = grid.index_of(r);
    let coeffs = SdeCoefficients::standard_brownian();
    let dt = grid.dt();
    let pairs = map_paths(&coeffs, None, grid, &[0.0], n_paths, seed, |_, p| {
        // base-measure sampling; attach the policy's density along the path
        let mut u = [0.0];
        let mut log_z: f64 = 0.0;
        let mut trapz = 0.0;
        let mut prev = 0.0;
        for k in 0..=grid.n_steps() {
            let z = log_z.exp();
            if k < grid.n_steps() {
                policy.eval(grid.time(k), p.state(k, 1), p.running_max[k], &mut u);
            }
            let integrand = u[0] * z;
            if k > 0 && k <= kr {
                trapz += 0.5 * (prev + integrand) * dt;
            }
            prev = integrand;
            if k == kr && k == grid.n_steps() {
                break;
            }
            if k < grid.n_steps() {
                let dw = p.q_increments[k];
                log_z += u[0] * dw - 0.5 * u[0] * u[0] * dt;
            }
        }
        let z_t = log_z.exp();
        let w_r = p.states[kr];
        (z_t * w_r, trapz)
    });
    let lhs_vals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs_vals: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (lhs, lhs_se) = mean_and_se(&lhs_vals);
    let (rhs, rhs_se) = mean_and_se(&rhs_vals);
    Ok(DensityDriftCheck {
        lhs,
        rhs,
        lhs_std_error: lhs_se,
        rhs_std_error: rhs_se,
    })
}
