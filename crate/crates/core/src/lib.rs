//! Out-of-core training of 3D Gaussian splatting scenes.
//!
//! Only the geometric attributes of each Gaussian (mean, scale, rotation)
//! stay resident on the accelerator; appearance attributes and their Adam
//! states live in host memory and are updated lazily with a deferred
//! optimizer that skips Gaussians outside the current view. Rows needed by
//! the next view are brought up to date early and forwarded, so host
//! updates overlap the device's forward and backward passes.
//!
//! The "device" is a second in-process arena with byte accounting; the
//! schedule, tier arithmetic and optimizer math are the same as on real
//! hardware.

pub mod error;
pub mod math;
pub mod offload;
pub mod optim;
pub mod real;
pub mod render;
pub mod scene;
pub mod split;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
