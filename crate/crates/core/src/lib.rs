//! Estimation of the Gaussian noise level σ_g and the effective number of
//! degrees of freedom N in magnitude MRI, from the magnitude data alone.
//!
//! Background voxels are identified per slice by mapping squared magnitudes
//! onto a Γ(N, 1) variable and rejecting everything outside a pair of
//! inverse-cdf bounds; σ_g and N are then re-estimated from the surviving
//! voxels until both settle.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod identify;
pub mod io;
pub mod model;
pub mod specfun;
pub mod synth;
