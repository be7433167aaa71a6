//! Ultrasound vessel registration toolkit.
//!
//! The pipeline locates the internal jugular vein (IJV) in a sonogram,
//! normalizes it with an ellipse-driven affine transform, optionally denoises
//! the image set with a principal-component approximation and finally
//! registers each image onto a reference with a small convolutional U-Net
//! that predicts a dense displacement field.
//!
//! Everything in this crate is pure computation on in-memory buffers and
//! builds without `std` (an allocator is required). File formats, the CLI
//! and experiment orchestration live in the `cervreg` crate.
//!
//! ```
//! use cervreg_core::image::{DisplacementField, GrayImage};
//! use cervreg_core::image::warp;
//!
//! let img = GrayImage::from_fn(4, 3, |x, y| (x + y) as f32 / 5.0);
//! let moved = warp(&img, &DisplacementField::zeros(4, 3)).unwrap();
//! assert_eq!(moved, img);
//! ```
#![cfg_attr(not(any(feature = "std", test)), no_std)]
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod affine;
pub mod error;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod pca;
pub mod real;
pub mod segment;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::{BinaryMask, DisplacementField, GrayImage};
