//! Closed-loop data-enabled predictive control.
//!
//! The crate is `no_std` (with `alloc`) and covers the algorithmic core:
//!
//! * [`plant`]: innovation/predictor-form LTI models, seeded noise and simulation.
//! * [`hankel`]: block-Hankel data matrices, block-Toeplitz operators and data equations.
//! * [`predictor`]: instrumental-variable predictor synthesis (sequential one-step
//!   predictors, the unified multi-step formulation, DeePC with IVs and CL-SPC).
//! * [`qp`]: a dense dual active-set QP solver and the receding-horizon tracking problem.
//! * [`controller`]: adaptive data-driven controllers and the oracle MPC.
//! * [`experiment`]: tracking runs, the `J_rms` metric, bias and correlation statistics.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod controller;
pub mod error;
pub mod experiment;
pub mod hankel;
pub mod linalg;
pub mod plant;
pub mod predictor;
pub mod qp;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
