//! Exact solution of relative-entropy-weighted optimization on finite
//! sample spaces.
//!
//! The minimizer of E^P[C] + (1/beta) * H(P;Q) over P << Q is the Gibbs
//! measure with weights proportional to q_i * exp(-beta * c_i), and the
//! attained value is -(1/beta) * ln E^Q[exp(-beta C)]. Everything here is
//! elementary but normalized carefully: exponentials go through a
//! max-shift so beta*c may exceed the float range.

use crate::error::{Error, Result};
use rand::Rng;

/// A probability vector over labeled outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates nonnegativity and normalization (sum within 1e-12 of 1).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter(
                "measure needs at least one outcome".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "measure weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "measure weights sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { weights })
    }

    /// Uniform measure on `n` outcomes.
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes an arbitrary nonnegative vector.
    pub fn from_unnormalized(raw: &[f64]) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cannot normalize vector with total mass {sum}"
            )));
        }
        Self::new(raw.iter().map(|w| w / sum).collect())
    }

    /// Uniform sample from the simplex (symmetric Dirichlet(1)).
    pub fn sample_simplex<R: Rng>(n: usize, rng: &mut R) -> Self {
        // -ln U_i are iid Exp(1); their normalization is Dirichlet(1,...,1)
        let raw: Vec<f64> = (0..n)
            .map(|_| -f64::ln(rng.gen_range(f64::MIN_POSITIVE..1.0)))
            .collect();
        Self::from_unnormalized(&raw).expect("exponential draws are positive")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Cost per outcome; any finite real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector {
    values: Vec<f64>,
}

impl CostVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "cost values must be finite".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    Ok(())
}

/// H(p; q) = sum p_i ln(p_i / q_i), with 0*ln(0) = 0.
///
/// Returns +inf when p is not absolutely continuous w.r.t. q; that is a
/// legitimate value of the functional, not an error.
pub fn relative_entropy(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<f64> {
    check_len(p.len(), q.len())?;
    let mut h = 0.0;
    for (&pi, &qi) in p.weights.iter().zip(&q.weights) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        h += pi * (pi / qi).ln();
    }
    // rounding can push tiny entropies below zero
    Ok(h.max(0.0))
}

/// The minimizer of the entropy-weighted cost: weights q_i*exp(-beta*c_i),
/// normalized with a max-shift.
pub fn gibbs_measure(c: &CostVector, q: &DiscreteMeasure, beta: f64) -> Result<DiscreteMeasure> {
    check_beta(beta)?;
    check_len(c.len(), q.len())?;
    let shift = c
        .values
        .iter()
        .zip(&q.weights)
        .filter(|(_, &qi)| qi > 0.0)
        .map(|(&ci, _)| -beta * ci)
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::NormalizationUnderflow);
    }
    let raw: Vec<f64> = c
        .values
        .iter()
        .zip(&q.weights)
        .map(|(&ci, &qi)| qi * f64::exp(-beta * ci - shift))
        .collect();
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::NormalizationUnderflow);
    }
    DiscreteMeasure::new(raw.iter().map(|w| w / sum).collect())
}

/// J(p) = E^p[C] + (1/beta) H(p; q).
pub fn entropy_weighted_cost(
    p: &DiscreteMeasure,
    c: &CostVector,
    q: &DiscreteMeasure,
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    check_len(p.len(), c.len())?;
    let h = relative_entropy(p, q)?;
    if h.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mean_cost: f64 = p
        .weights
        .iter()
        .zip(c.values.iter())
        .map(|(&pi, &ci)| pi * ci)
        .sum();
    Ok(mean_cost + h / beta)
}

/// J(p*) = -(1/beta) ln sum_i q_i exp(-beta c_i), log-sum-exp stabilized.
pub fn optimal_value(c: &CostVector, q: &DiscreteMeasure, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_len(c.len(), q.len())?;
    let shift = c
        .values
        .iter()
        .zip(&q.weights)
        .filter(|(_, &qi)| qi > 0.0)
        .map(|(&ci, _)| -beta * ci)
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::NormalizationUnderflow);
    }
    let sum: f64 = c
        .values
        .iter()
        .zip(&q.weights)
        .map(|(&ci, &qi)| qi * f64::exp(-beta * ci - shift))
        .sum();
    Ok(-(shift + sum.ln()) / beta)
}

/// Splits J(p) into (1/beta) H(p; p*) and the optimal value; the two sum
/// back to `entropy_weighted_cost(p, ...)` exactly (up to rounding).
pub fn variational_decomposition(
    p: &DiscreteMeasure,
    c: &CostVector,
    q: &DiscreteMeasure,
    beta: f64,
) -> Result<(f64, f64)> {
    let p_star = gibbs_measure(c, q, beta)?;
    let gap = relative_entropy(p, &p_star)? / beta;
    let value = optimal_value(c, q, beta)?;
    Ok((gap, value))
}
