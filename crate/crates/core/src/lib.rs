//! Numerical toolkit for simultaneous interconnection and damping assignment
//! passivity-based control (SIDA-PBC) of underactuated mechanical systems with
//! generalized forces.
//!
//! The crate is organized bottom-up:
//!
//! * [`field`], [`jet`], [`fd`], [`linalg`]: configuration-dependent fields with
//!   analytic partials, forward-mode matrix jets, finite-difference oracles and
//!   the small dense linear algebra used everywhere.
//! * [`system`]: the open-loop port-Hamiltonian plant and the desired closed
//!   loop ([`TargetDynamics`](system::TargetDynamics)).
//! * [`matching`]: pointwise residuals of the matching equations (gyroscopic
//!   and generalized-force variants), the `B_k - A_k = W_k` machinery and the
//!   control laws.
//! * [`pfl`]: the energy-shaping construction on top of a partially
//!   feedback-linearized plant.
//! * [`lyapunov`]: direct-Lyapunov designs on second-order systems that are
//!   not in port-Hamiltonian form.
//! * [`systems`]: the cart-pendulum and ball-and-beam instances.
//! * [`sampling`], [`sim`]: seeded residual sweeps and ODE integration.

pub mod error;
pub mod fd;
pub mod field;
pub mod jet;
pub mod linalg;
pub mod lyapunov;
pub mod matching;
pub mod pfl;
pub mod sampling;
pub mod sim;
pub mod system;
pub mod systems;

pub use error::{Error, Result};
pub use field::{MatrixField, ScalarField, VectorField};
pub use system::{MechanicalSystem, SecondOrderPlant, State, TargetDynamics};

/// Convenience alias for the dynamic vectors used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Convenience alias for the dynamic matrices used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
