//! Concrete plants with their controllers.
//!
//! * [`cart_pendulum`]: inverted pendulum on a cart, energy shaping after
//!   partial feedback linearization.
//! * [`ball_beam`]: ball and beam in the coordinates of a direct-Lyapunov
//!   design.
//! * [`coupled3`]: a three-degree-of-freedom test plant with configuration
//!   dependent `M`, `M_d` and gyroscopic terms, used to exercise the
//!   kinetic-energy identities.

pub mod ball_beam;
pub mod cart_pendulum;
pub mod coupled3;
