//! Relative-entropy-weighted stochastic optimal control.
//!
//! The cost under a candidate law P is J(P) = E^P[C] + (1/beta) H(P; Q),
//! where Q is the law of the uncontrolled dynamics and H is relative
//! entropy. The minimizer is the Gibbs tilt dP*/dQ ∝ exp(-beta C), and
//! everything here follows from that identity: exact solutions on finite
//! spaces, Girsanov-weighted Monte Carlo for diffusions, closed-form
//! optimal drifts for the pinned-endpoint and running-maximum costs, a
//! nested Malliavin-derivative estimator, exponentially tilted jump
//! processes, and a linearized-HJB finite-difference solver.

pub mod error;
pub mod jump;
pub mod malliavin;
pub mod measure;
pub mod path;
pub mod pde;
pub mod policies;
pub mod quad;
pub mod special;
pub mod stream;

pub use error::{Error, Result};
pub use measure::{
    entropy_weighted_cost, gibbs_measure, optimal_value, relative_entropy,
    variational_decomposition, CostVector, DiscreteMeasure,
};
pub use path::{
    estimate_cost, mean_and_se, optimal_value_mc, ControlPolicy, CostFunctional, McEstimate,
    PathBundle, SdeCoefficients, TimeGrid,
};
pub use policies::{BridgeSpec, MaxBmSpec};
