//! Brownian-time process kernels and lattice stochastic integral equations.
//!
//! The crate has three layers:
//!
//! * [`kernels`] and [`lattice`] evaluate the continuous and lattice
//!   transition densities (Gaussian, Brownian-time, 2-Brownian-times, walk)
//!   by quadrature, together with the discrete Laplacian machinery.
//! * [`solver`] drives the spatially discretized stochastic integral
//!   equations against a seeded, nested noise system: Picard iteration,
//!   the dyadic frozen-coefficient Euler scheme, the parametrized
//!   differential-difference system, and the degenerate fourth-order SPDE.
//! * [`estimates`] and [`montecarlo`] measure the kernel norms, the
//!   fourth-order residuals, and the dimension-dependent Hölder exponents,
//!   producing machine-checkable reports.
//!
//! The `btp` binary (see [`cli`]) exposes the experiments as subcommands.

pub mod cli;
pub mod error;
pub mod estimates;
pub mod kernels;
pub mod lattice;
pub mod montecarlo;
pub mod quad;
pub mod solver;
pub mod special;

pub use error::{BtpError, Result};
pub use kernels::{Dim, SpacePoint};
pub use quad::QuadratureSpec;
