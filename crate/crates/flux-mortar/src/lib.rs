//! Flux-mortar mixed finite element domain decomposition for Darcy flow.
//!
//! The domain is split into axis-aligned rectangular subdomains carrying
//! independent tensor grids that may be non-matching along the interfaces.
//! Each subdomain hosts a lowest-order Raviart-Thomas mixed method reduced
//! to a cell-centered two-point flux scheme. The interface unknown is the
//! normal flux, represented by a mortar function on an independent interface
//! grid; pressure continuity is imposed weakly. Two interface projections
//! are provided (per-side L2 projection and projection onto weakly
//! continuous traces), each inducing a discrete extension operator built
//! from subdomain Neumann solves. The coupled problem is reduced to a
//! symmetric positive definite interface system solved by conjugate
//! gradients, with a coarse problem handling interior (floating)
//! subdomains, and the running iterate conserves mass cell by cell.
//!
//! The [`verification`] module carries a manufactured solution and a
//! convergence-study driver; the [`cli`] module exposes the `study`,
//! `plot-mortar`, and `diagnose` commands.

pub mod cli;
pub mod config;
pub mod darcy_local;
pub mod dd_solver;
pub mod error;
pub mod extension;
pub mod geometry;
pub mod linalg;
pub mod mortar;
pub(crate) mod par;
pub mod verification;

pub use error::{Error, Result};
pub use extension::Variant;
pub use mortar::MortarOrder;
