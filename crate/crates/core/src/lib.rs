//! Optimal rejection of mismatched disturbances for discrete-time linear
//! systems, posed as a linear quadratic tracking problem.
//!
//! The plant is `x[k+1] = A x[k] + B u[k] + E d[k]` with a known disturbance
//! `d`. The controllers minimise
//!
//! ```text
//! J = sum_k (x_k - r)' Q (x_k - r) + (B u_k + E d_k)' R (B u_k + E d_k)
//!     + (x_{N+1} - r)' P_{N+1} (x_{N+1} - r)
//! ```
//!
//! so that the regulated output `c_o x` tracks `c_o r` while the combined
//! input/disturbance action `B u + E d` is kept small.
//!
//! Modules:
//! - [`model`]: plant, cost and disturbance types, validation, ZOH discretisation
//! - [`riccati`]: finite-horizon recursion (strict or pseudo-inverse) and the stationary equation
//! - [`feedforward`]: the `h`/`f` compensation sequences (recursive, closed form, stationary)
//! - [`control`]: optimal, stationary, receding-horizon and baseline control laws
//! - [`sim`]: closed-loop rollout, cost evaluation and a brute-force optimality oracle
//! - [`verify`]: random instances and the oracle-equivalence checks built on them

pub mod control;
pub mod error;
pub mod feedforward;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
