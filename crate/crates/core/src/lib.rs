//! Neural policy iteration for continuous-time nonlinear optimal control,
//! with interval branch-and-bound stability verification.
//!
//! The crate solves infinite-horizon problems dx/dt = f(x) + g(x)u with cost
//! integral of Q(x) + u'Ru by iterating policy evaluation and policy
//! improvement over one-hidden-layer value networks. Two evaluators are
//! provided: a least-squares solve over the output weights of a random
//! feature net (`elm`), and gradient-descent training of all parameters with
//! a Lyapunov gain-matching penalty (`pinn`). Resulting controllers can be
//! certified by the interval verifier (`verify`) and exercised in closed-loop
//! simulation (`sim`).
//!
//! All numerics are generic over the scalar type ([`scalar::Scalar`]);
//! concrete `f64` aliases live at the crate root.

pub mod elm;
pub mod error;
pub mod expr;
pub mod ghjb;
pub mod interval;
pub mod io;
pub mod pinn;
pub mod riccati;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod systems;
pub mod valuenet;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default working precision.
pub type Real = f64;
/// Interval over the default precision.
pub type RealInterval = interval::Interval<Real>;
/// Benchmark instantiated at the default precision.
pub type RealBenchmark = systems::Benchmark<Real>;
/// Value net at the default precision.
pub type RealValueNet = valuenet::ValueNet<Real>;
