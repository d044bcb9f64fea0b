//! Meta-learned graph networks that forecast convection-diffusion fields
//! from sparse, irregularly placed sensors.
//!
//! The crate is layered bottom-up:
//!
//! * [`autodiff`]: dense `f64` tensors, a reverse-mode tape, parameter
//!   stores with Adam, and finite-difference gradient checks.
//! * [`pde`]: a periodic 2-D convection-diffusion solver that produces
//!   fine-grid fields and their ground-truth spatial derivatives.
//! * [`graph`]: sensor sampling, k-nearest-neighbour graphs and the task
//!   file format.
//! * [`fdm`]: exact stencil coefficients and a least-squares derivative
//!   baseline on graphs.
//! * [`models`]: spatial derivative modules, the recurrent time derivative
//!   module, their composition and the recurrent graph network baseline.
//! * [`meta`]: modular and MAML-style meta-training, meta-test adaptation
//!   and the non-meta baselines.

pub mod autodiff;
pub mod error;
pub mod fdm;
pub mod graph;
pub mod meta;
pub mod models;
pub mod pde;
pub mod seed;

pub use error::{Error, Result};
