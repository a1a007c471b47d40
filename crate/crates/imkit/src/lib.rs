//! Prior-free probabilistic inference built on associations between data,
//! parameters, and auxiliary variables.
//!
//! The pipeline has three stages:
//!
//! 1. **Associate** — represent the sampling model as `x = a(u, theta)` with a
//!    fully known auxiliary distribution for `u` ([`association`]).
//! 2. **Predict** — predict the unobserved auxiliary realization with a valid
//!    predictive random set ([`prs`]).
//! 3. **Combine** — map the random set through the association into parameter
//!    space and read off belief/plausibility for assertions ([`engine`]).
//!
//! Efficiency comes from conditioning: when some functions of the auxiliaries
//! are fully observed, prediction can condition on them and work in a reduced
//! dimension. The [`characteristics`] module constructs such conditioning
//! variables numerically by solving the characteristic ODE system of a
//! first-order homogeneous linear PDE system with Picard iteration, and the
//! [`regular`] module classifies models by whether globally observed
//! (parameter-free) conditioning variables exist at all.
//!
//! [`catalog`] ships ready-made models, including a corrupted-Brownian-motion
//! model with closed-form eigensystem, sufficient statistics, conditioning
//! variables, and conditional samplers. [`expr`] provides a small expression
//! grammar with symbolic partials for user-defined coordinate-wise models.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod association;
pub mod catalog;
pub mod characteristics;
pub mod engine;
pub mod error;
pub mod expr;
pub mod prs;
pub mod quad;
pub mod regular;
pub mod stats;

pub use association::{Association, AuxiliaryDistribution, ParameterSpace};
pub use engine::{Assertion, BeliefPlausibility, ConditionalAssociation, PlausibilityCurve};
pub use error::ImError;
pub use prs::{PredictiveRandomSet, SetRealization, ValidityReport};

// matrix types appear in public signatures; callers get the matching version
pub use nalgebra;
