//! Procedurally generated geometric IQ questions, a compact convolutional
//! training stack that learns to answer them, and an analytic solver that
//! verifies every generated label.
//!
//! The crate is `no_std` (with `alloc`). File formats, PNG output and the
//! command-line tool live in the `shapeiq` crate.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod geometry;
pub mod models;
pub mod nn;
pub mod oracle;
pub mod qgen;
