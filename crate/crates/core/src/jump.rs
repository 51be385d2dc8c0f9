//! Finite-activity Poisson random measure simulation under an intensity
//! ν(dz) on (0, ∞), and under the exponentially tilted intensity
//! ν*(dz) = e^{-beta γ(z)} ν(dz), which is the optimal measure change for a
//! pure-jump cost beta ∫∫ γ(z) N(ds, dz).
//!
//! The density of the tilted measure on path space is
//!   Z*_T = exp(-beta Σ_jumps γ(z) - T ∫ (e^{-beta γ(z)} - 1) ν(dz)),
//! and its relative entropy has the closed form
//!   H(P*; Q) = T ∫ [1 - e^{-beta γ(z)} (1 + beta γ(z))] ν(dz).

use crate::error::{Error, Result};
use crate::quad::integrate;
use crate::stream::path_rng;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use std::io::Write;
use std::sync::Arc;

const QUAD_TOL: f64 = 1e-11;

/// Intensity measure on (0, ∞): the density family α z^{-1/2} e^{-δz} dz,
/// or a finite list of atoms (location, weight).
#[derive(Clone, Debug)]
pub enum Intensity {
    BuiltIn { alpha: f64, delta: f64 },
    Atoms(Vec<(f64, f64)>),
}

/// A jump process with a size map γ and tilt strength beta.
#[derive(Clone)]
pub struct JumpProcessSpec {
    pub intensity: Intensity,
    pub gamma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub horizon: f64,
    pub beta: f64,
}

/// One realized path: jump times sorted in [0, T] with sizes γ(z).
#[derive(Clone, Debug, Default)]
pub struct JumpPath {
    pub times: Vec<f64>,
    pub sizes: Vec<f64>,
}

impl JumpPath {
    /// X_T = Σ γ(z_j).
    pub fn terminal_value(&self) -> f64 {
        self.sizes.iter().sum()
    }

    pub fn count(&self) -> usize {
        self.times.len()
    }
}

impl JumpProcessSpec {
    pub fn new(intensity: Intensity, horizon: f64, beta: f64) -> Result<Self> {
        Self::with_gamma(intensity, Arc::new(|z| z), horizon, beta)
    }

    pub fn with_gamma(
        intensity: Intensity,
        gamma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        horizon: f64,
        beta: f64,
    ) -> Result<Self> {
        match &intensity {
            Intensity::BuiltIn { alpha, delta } => {
                if !(*alpha > 0.0) || !(*delta > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "built-in intensity needs alpha, delta > 0, got alpha = {alpha}, delta = {delta}"
                    )));
                }
            }
            Intensity::Atoms(atoms) => {
                if atoms.iter().any(|&(z, w)| !(z > 0.0) || w < 0.0 || !w.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "atoms need locations > 0 and finite weights >= 0".into(),
                    ));
                }
            }
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {horizon}")));
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self { intensity, gamma, horizon, beta })
    }

    /// ∫ ν(dz). For the built-in family this is α √(π/δ); computed by
    /// quadrature so the Γ-function formula stays available as a test oracle.
    pub fn total_mass(&self) -> f64 {
        match &self.intensity {
            Intensity::BuiltIn { alpha, delta } => {
                // substitute z = u^2 to remove the z^{-1/2} singularity:
                // ∫_0^∞ α z^{-1/2} e^{-δz} dz = 2α ∫_0^∞ e^{-δ u^2} du
                let a = *alpha;
                let d = *delta;
                let upper = (40.0 / d).sqrt();
                integrate(|u| 2.0 * a * (-d * u * u).exp(), 0.0, upper, QUAD_TOL)
            }
            Intensity::Atoms(atoms) => atoms.iter().map(|&(_, w)| w).sum(),
        }
    }

    /// The process under the optimal tilt ν*(dz) = e^{-beta γ(z)} ν(dz), with
    /// beta reset to zero (the tilted measure is the new base measure).
    /// For the built-in family with γ(z) = z the tilt stays in the family
    /// with δ' = δ + beta; other γ maps only admit the atom representation.
    pub fn tilt(&self) -> Result<JumpProcessSpec> {
        let intensity = match &self.intensity {
            Intensity::BuiltIn { alpha, delta } => {
                // only valid when γ is the identity; spot-check it
                for z in [0.1, 0.7, 1.3, 4.2] {
                    if ((self.gamma)(z) - z).abs() > 1e-12 {
                        return Err(Error::InvalidParameter(
                            "built-in tilt requires gamma(z) = z; use an atom intensity for general gamma".into(),
                        ));
                    }
                }
                Intensity::BuiltIn { alpha: *alpha, delta: *delta + self.beta }
            }
            Intensity::Atoms(atoms) => Intensity::Atoms(
                atoms
                    .iter()
                    .map(|&(z, w)| (z, w * (-self.beta * (self.gamma)(z)).exp()))
                    .collect(),
            ),
        };
        JumpProcessSpec::with_gamma(intensity, Arc::clone(&self.gamma), self.horizon, 0.0)
    }

    /// ∫ (e^{-beta γ(z)} - 1) ν(dz) — the compensator rate in ln Z*.
    fn tilt_rate(&self) -> f64 {
        let beta = self.beta;
        match &self.intensity {
            Intensity::BuiltIn { alpha, delta } => {
                let a = *alpha;
                let d = *delta;
                let g = Arc::clone(&self.gamma);
                let upper = (40.0 / d).sqrt();
                integrate(
                    move |u| {
                        let z = u * u;
                        2.0 * a * (-d * z).exp() * ((-beta * g(z)).exp() - 1.0)
                    },
                    0.0,
                    upper,
                    QUAD_TOL,
                )
            }
            Intensity::Atoms(atoms) => atoms
                .iter()
                .map(|&(z, w)| w * ((-beta * (self.gamma)(z)).exp() - 1.0))
                .sum(),
        }
    }

    /// H(P*; Q) = T ∫ [1 - e^{-beta γ(z)}(1 + beta γ(z))] ν(dz) >= 0.
    pub fn relative_entropy(&self) -> f64 {
        let beta = self.beta;
        let integrand = |g: f64| 1.0 - (-beta * g).exp() * (1.0 + beta * g);
        let value = match &self.intensity {
            Intensity::BuiltIn { alpha, delta } => {
                let a = *alpha;
                let d = *delta;
                let gm = Arc::clone(&self.gamma);
                let upper = (40.0 / d).sqrt();
                integrate(
                    move |u| {
                        let z = u * u;
                        2.0 * a * (-d * z).exp() * integrand(gm(z))
                    },
                    0.0,
                    upper,
                    QUAD_TOL,
                )
            }
            Intensity::Atoms(atoms) => atoms
                .iter()
                .map(|&(z, w)| w * integrand((self.gamma)(z)))
                .sum(),
        };
        self.horizon * value.max(0.0)
    }

    /// ln Z*_T for a realized path.
    pub fn sample_log_density(&self, path: &JumpPath) -> f64 {
        -self.beta * path.terminal_value() - self.horizon * self.tilt_rate()
    }

    fn sample_size(&self, rng: &mut impl Rng) -> f64 {
        match &self.intensity {
            Intensity::BuiltIn { delta, .. } => {
                // normalized density ∝ z^{-1/2} e^{-δz} is Gamma(1/2, rate δ),
                // the square of a N(0, 1/(2δ)) draw
                let n: f64 = rng.sample(StandardNormal);
                n * n / (2.0 * delta)
            }
            Intensity::Atoms(atoms) => {
                let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
                let mut u = rng.gen::<f64>() * total;
                for &(z, w) in atoms {
                    if u < w {
                        return z;
                    }
                    u -= w;
                }
                atoms.last().map(|&(z, _)| z).unwrap_or(0.0)
            }
        }
    }

    /// Draw one path: Poisson(T·mass) jump count, uniform times, i.i.d.
    /// sizes from the normalized intensity.
    pub fn sample_one(&self, rng: &mut impl Rng) -> JumpPath {
        let mass = self.total_mass();
        let rate = mass * self.horizon;
        if rate <= 0.0 {
            return JumpPath::default();
        }
        let count = Poisson::new(rate).expect("positive rate").sample(rng) as usize;
        let mut times: Vec<f64> = (0..count).map(|_| rng.gen::<f64>() * self.horizon).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sizes = (0..count).map(|_| (self.gamma)(self.sample_size(rng))).collect();
        JumpPath { times, sizes }
    }

    /// Draw `n_paths` paths on independent (seed, path) streams.
    pub fn sample_paths(&self, n_paths: usize, seed: u64) -> Vec<JumpPath> {
        (0..n_paths)
            .into_par_iter()
            .map(|j| self.sample_one(&mut path_rng(seed, j as u64)))
            .collect()
    }
}

/// For each beta in `betas`, the tilted path obtained by thinning one
/// shared base-measure realization: a jump of size z survives the tilt to
/// δ + beta with probability e^{-beta z}, using one shared uniform per
/// jump so paths across beta values are pathwise comparable (larger beta
/// keeps a subset of the jumps kept by smaller beta).
///
/// Only valid for the built-in family with γ(z) = z.
pub fn thinned_paths_across_betas(
    base: &JumpProcessSpec,
    betas: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<JumpPath>>> {
    if !matches!(base.intensity, Intensity::BuiltIn { .. }) {
        return Err(Error::InvalidParameter(
            "thinning across betas needs the built-in intensity family".into(),
        ));
    }
    if let Some(&b) = betas.iter().find(|&&b| !(b >= 0.0)) {
        return Err(Error::InvalidParameter(format!("betas must be >= 0, got {b}")));
    }
    let per_path: Vec<Vec<JumpPath>> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut rng = path_rng(seed, j as u64);
            let raw = base.sample_one(&mut rng);
            let uniforms: Vec<f64> = raw.sizes.iter().map(|_| rng.gen::<f64>()).collect();
            betas
                .iter()
                .map(|&beta| {
                    let mut times = Vec::new();
                    let mut sizes = Vec::new();
                    for ((&t, &z), &v) in raw.times.iter().zip(&raw.sizes).zip(&uniforms) {
                        if v <= (-beta * z).exp() {
                            times.push(t);
                            sizes.push(z);
                        }
                    }
                    JumpPath { times, sizes }
                })
                .collect()
        })
        .collect();
    // transpose to per-beta layout
    let mut out = vec![Vec::with_capacity(n_paths); betas.len()];
    for path_set in per_path {
        for (i, p) in path_set.into_iter().enumerate() {
            out[i].push(p);
        }
    }
    Ok(out)
}

/// Write paths as right-continuous step functions: rows (path_id, t, X_t)
/// with a row at t = 0, one after every jump, and one at t = T.
pub fn write_jump_csv(out: &mut dyn Write, paths: &[JumpPath], horizon: f64) -> Result<()> {
    writeln!(out, "# schema v1: path_id,t,x")?;
    writeln!(out, "path_id,t,x")?;
    for (id, p) in paths.iter().enumerate() {
        let mut x = 0.0;
        writeln!(out, "{id},0,{x}")?;
        for (&t, &s) in p.times.iter().zip(&p.sizes) {
            x += s;
            writeln!(out, "{id},{t},{x}")?;
        }
        writeln!(out, "{id},{horizon},{x}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::mean_and_se;

    fn builtin(alpha: f64, delta: f64, beta: f64) -> JumpProcessSpec {
        JumpProcessSpec::new(Intensity::BuiltIn { alpha, delta }, 1.0, beta).unwrap()
    }

    #[test]
    fn atom_mass_is_weight_sum() {
        let s = JumpProcessSpec::new(Intensity::Atoms(vec![(1.0, 2.5)]), 1.0, 0.0).unwrap();
        assert_eq!(s.total_mass(), 2.5);
    }

    #[test]
    fn builtin_mass_matches_gamma_function_formula() {
        // ∫ α z^{-1/2} e^{-δz} dz = α Γ(1/2) δ^{-1/2} = α √(π/δ)
        let s = builtin(10.0, 5.0, 0.0);
        let exact = 10.0 * (std::f64::consts::PI / 5.0).sqrt();
        assert!((s.total_mass() - exact).abs() < 1e-9, "{} vs {exact}", s.total_mass());
        assert!((exact - 7.926654595).abs() < 1e-8);
    }

    #[test]
    fn tilt_shifts_delta_by_beta() {
        let s = builtin(10.0, 5.0, 2.0);
        let t = s.tilt().unwrap();
        match t.intensity {
            Intensity::BuiltIn { alpha, delta } => {
                assert_eq!(alpha, 10.0);
                assert_eq!(delta, 7.0);
            }
            _ => panic!("expected built-in"),
        }
        assert_eq!(t.beta, 0.0);
        let exact = 10.0 * (std::f64::consts::PI / 6.0).sqrt();
        let t1 = builtin(10.0, 5.0, 1.0).tilt().unwrap();
        assert!((t1.total_mass() - exact).abs() < 1e-9);
        assert!((exact - 7.236012546).abs() < 1e-8);
    }

    #[test]
    fn tilt_of_atoms_reweights_pointwise() {
        let s = JumpProcessSpec::new(Intensity::Atoms(vec![(1.0, 1.0), (2.0, 3.0)]), 1.0, 1.0)
            .unwrap();
        let t = s.tilt().unwrap();
        match t.intensity {
            Intensity::Atoms(a) => {
                assert!((a[0].1 - (-1.0f64).exp()).abs() < 1e-15);
                assert!((a[1].1 - 3.0 * (-2.0f64).exp()).abs() < 1e-15);
            }
            _ => panic!("expected atoms"),
        }
    }

    #[test]
    fn beta_zero_tilt_is_identity() {
        let s = builtin(10.0, 5.0, 0.0);
        let t = s.tilt().unwrap();
        assert!((t.total_mass() - s.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_paths_are_empty() {
        let s = JumpProcessSpec::new(Intensity::BuiltIn { alpha: 10.0, delta: 5.0 }, 0.0, 0.0)
            .unwrap();
        for p in s.sample_paths(10, 3) {
            assert_eq!(p.count(), 0);
        }
    }

    #[test]
    fn mean_count_matches_poisson_rate() {
        let s = builtin(10.0, 5.0, 0.0);
        let paths = s.sample_paths(100_000, 11);
        let counts: Vec<f64> = paths.iter().map(|p| p.count() as f64).collect();
        let (mean, se) = mean_and_se(&counts);
        let rate = s.total_mass();
        assert!((mean - rate).abs() < 3.0 * se, "mean {mean} vs rate {rate} (se {se})");
    }

    #[test]
    fn tilted_paths_have_fewer_jumps() {
        let base = builtin(10.0, 5.0, 1.0);
        let tilted = base.tilt().unwrap();
        let c0: Vec<f64> = base.sample_paths(50_000, 1).iter().map(|p| p.count() as f64).collect();
        let c1: Vec<f64> =
            tilted.sample_paths(50_000, 2).iter().map(|p| p.count() as f64).collect();
        let (m0, s0) = mean_and_se(&c0);
        let (m1, s1) = mean_and_se(&c1);
        assert!(m0 - m1 > 3.0 * (s0 * s0 + s1 * s1).sqrt(), "{m0} vs {m1}");
    }

    #[test]
    fn jump_sizes_have_gamma_half_moments() {
        // Gamma(1/2, rate δ): mean 1/(2δ), variance 1/(2δ^2)
        let s = builtin(10.0, 5.0, 0.0);
        let mut sizes = Vec::new();
        for p in s.sample_paths(30_000, 21) {
            sizes.extend_from_slice(&p.sizes);
        }
        let (mean, se) = mean_and_se(&sizes);
        assert!((mean - 0.1).abs() < 4.0 * se, "mean {mean} (se {se})");
    }

    #[test]
    fn entropy_closed_forms() {
        let s0 = builtin(10.0, 5.0, 0.0);
        assert_eq!(s0.relative_entropy(), 0.0);
        let atom = JumpProcessSpec::new(Intensity::Atoms(vec![(1.0, 1.0)]), 1.0, 1.0).unwrap();
        let exact = 1.0 - 2.0 * (-1.0f64).exp();
        assert!((atom.relative_entropy() - exact).abs() < 1e-14);
        assert!((exact - 0.264241).abs() < 1e-6);
    }

    #[test]
    fn entropy_nonnegative_over_corpus() {
        for &(a, d, b) in &[(10.0, 5.0, 1.0), (1.0, 0.5, 3.0), (4.0, 2.0, 0.25), (10.0, 5.0, 2.0)]
        {
            assert!(builtin(a, d, b).relative_entropy() >= 0.0);
        }
    }

    #[test]
    fn log_density_of_empty_path_is_minus_compensator() {
        // no jumps: ln Z* = -T ∫ (e^{-z} - 1) f(z) dz = mass(δ=5) - mass(δ=6)
        let s = builtin(10.0, 5.0, 1.0);
        let expected =
            10.0 * (std::f64::consts::PI / 5.0).sqrt() - 10.0 * (std::f64::consts::PI / 6.0).sqrt();
        let got = s.sample_log_density(&JumpPath::default());
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
        assert_eq!(builtin(10.0, 5.0, 0.0).sample_log_density(&JumpPath::default()), 0.0);
    }

    #[test]
    fn density_normalizes_under_base_measure() {
        let s = builtin(10.0, 5.0, 1.0);
        let weights: Vec<f64> = s
            .sample_paths(100_000, 5)
            .iter()
            .map(|p| s.sample_log_density(p).exp())
            .collect();
        let (mean, se) = mean_and_se(&weights);
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} (se {se})");
    }

    #[test]
    fn tilting_consistency_for_count_and_terminal() {
        let s = builtin(10.0, 5.0, 1.0);
        let tilted = s.tilt().unwrap();
        let base_paths = s.sample_paths(100_000, 8);
        let tilted_paths = tilted.sample_paths(100_000, 9);
        for g in [
            (|p: &JumpPath| p.count() as f64) as fn(&JumpPath) -> f64,
            |p: &JumpPath| p.terminal_value(),
        ] {
            let lhs: Vec<f64> =
                base_paths.iter().map(|p| g(p) * s.sample_log_density(p).exp()).collect();
            let rhs: Vec<f64> = tilted_paths.iter().map(g).collect();
            let (ml, sl) = mean_and_se(&lhs);
            let (mr, sr) = mean_and_se(&rhs);
            assert!(
                (ml - mr).abs() < 3.0 * (sl * sl + sr * sr).sqrt(),
                "{ml} +- {sl} vs {mr} +- {sr}"
            );
        }
    }

    #[test]
    fn entropy_identity_under_tilted_measure() {
        let s = builtin(10.0, 5.0, 1.0);
        let tilted = s.tilt().unwrap();
        let lnz: Vec<f64> =
            tilted.sample_paths(100_000, 13).iter().map(|p| s.sample_log_density(p)).collect();
        let (mean, se) = mean_and_se(&lnz);
        let h = s.relative_entropy();
        assert!((mean - h).abs() < 3.0 * se, "mean {mean} vs H {h} (se {se})");
    }

    #[test]
    fn thinning_matches_tilted_count_and_nests_across_betas() {
        let base = builtin(10.0, 5.0, 0.0);
        let per_beta = thinned_paths_across_betas(&base, &[0.0, 1.0, 2.0], 50_000, 17).unwrap();
        // nesting: larger beta keeps a subset
        for j in 0..per_beta[0].len() {
            assert!(per_beta[1][j].count() <= per_beta[0][j].count());
            assert!(per_beta[2][j].count() <= per_beta[1][j].count());
        }
        // thinned count mean matches the tilted mass for beta = 1
        let counts: Vec<f64> = per_beta[1].iter().map(|p| p.count() as f64).collect();
        let (mean, se) = mean_and_se(&counts);
        let rate = 10.0 * (std::f64::consts::PI / 6.0).sqrt();
        assert!((mean - rate).abs() < 3.0 * se, "mean {mean} vs {rate} (se {se})");
    }

    #[test]
    fn csv_export_is_step_function_rows() {
        let p = JumpPath { times: vec![0.25, 0.5], sizes: vec![1.0, 2.0] };
        let mut buf = Vec::new();
        write_jump_csv(&mut buf, &[p], 1.0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# schema v1"));
        assert!(text.contains("0,0.25,1"));
        assert!(text.contains("0,0.5,3"));
        assert!(text.contains("0,1,3"));
    }
}
