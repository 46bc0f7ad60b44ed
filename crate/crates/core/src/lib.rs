//! Sketch-guided progressive conditional GAN for ultrasound-style image
//! synthesis: label composition, phantom data, networks, losses, training,
//! metrics and the augmentation benchmark.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

mod error;
pub mod augbench;
pub mod datagen;
pub mod fen;
pub mod image;
pub mod kernels;
pub mod labelkit;
pub mod losses;
pub mod metrics;
pub mod netcore;
pub mod nn;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use image::Image;
pub use tensor::{Shape, Tensor};
