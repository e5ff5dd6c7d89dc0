//! Data-driven state-feedback synthesis for discrete-time linear plants whose
//! input and state measurements carry bounded errors.
//!
//! The pipeline is: simulate or load a measured trajectory ([`simkit`]),
//! assemble data matrices and consistency sets ([`conset`]), pose the
//! synthesis LMIs and solve them ([`synth`], [`sdp`]), then verify the
//! resulting certificate. [`matfact`] holds the matrix elimination result the
//! set descriptions rest on.

pub mod conset;
pub mod error;
pub mod linalg;
pub mod matfact;
pub mod rng;
pub mod sdp;
pub mod simkit;
pub mod synth;

pub use error::{Error, Result};
