//! Volumetric attention for 2.5D networks.
//!
//! The crate is split along the pipeline:
//!
//! - [`tensor`]: dense f64 tensors, a reverse-mode tape and a gradient checker.
//! - [`attention`]: feature bags over the z direction and the volumetric
//!   channel and spatial attention gates built on them.
//! - [`volume`]: CT volume I/O, intensity clamping, z resampling, 2.5D slabs
//!   and bag index windows.
//! - [`metrics`]: Dice, size-stratified Dice, FROC sensitivity and AP50.
//! - [`phantom`]: synthetic phantoms and a toy 2.5D model used to measure
//!   what cross-slice context buys.

pub mod attention;
pub mod error;
pub mod fsutil;
pub mod gradsuite;
pub mod metrics;
pub mod phantom;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
