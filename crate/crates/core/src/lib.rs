//! Parallel-beam tomographic reconstruction.
//!
//! Filtered backprojection with two interchangeable kernels: the direct
//! slant-stack sum ([`radon::backproject_ss`], `O(N^3)` per slice) and the
//! Fourier-domain kernel based on the Backprojection-Slice Theorem
//! ([`bst::bst_backproject`], `O(N^2 log N)`). Around them sit an analytic
//! ellipsoid phantom, the usual sinogram corrections, a bounded-queue stage
//! pipeline, and a small raw volume container.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the common choices.

pub mod bench;
pub mod bst;
pub mod error;
pub mod grid;
pub mod io;
mod parallel;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod radon;
pub mod recon;
pub mod scalar;

pub use error::{Error, Result};
pub use grid::{
    detector_coordinate, pixel_center, slice_coordinate, AngleAxis, AngleSpan, DetectorAxis,
    ImageGrid, Interpolation, Sinogram, StageTag, VolumeBlock,
};
pub use parallel::available_workers;
pub use scalar::Real;

pub type Sinogram64 = Sinogram<f64>;
pub type Sinogram32 = Sinogram<f32>;
pub type ImageGrid64 = ImageGrid<f64>;
pub type ImageGrid32 = ImageGrid<f32>;
pub type Ellipsoid64 = phantom::Ellipsoid<f64>;
pub type BstPlan64 = bst::BstPlan<f64>;
