//! Deep synthesis regularization for sparse-view tomography.
//!
//! The crate bundles everything needed to go from synthetic phantoms to
//! reconstructions and convergence experiments:
//!
//! * [`tensor`]: dense tensors with a tape-based reverse-mode autodiff core.
//! * [`phantom`]: ellipse and Shepp-Logan phantoms, datasets, measurement noise.
//! * [`radon`]: parallel-beam Radon transform, adjoint, norm estimate, FBP.
//! * [`haar`]: orthonormal multilevel Haar analysis and synthesis.
//! * [`regularizers`]: weighted l1 penalty, soft-thresholding, total variation.
//! * [`solvers`]: FISTA and Chambolle-Pock iterations.
//! * [`net`]: the sparse encoder/decoder pair and its training loop.
//! * [`pipeline`]: FBP, wavelet, TV and learned-synthesis reconstructions.
//! * [`rates`]: parameter-choice checks and convergence-rate experiments.
//!
//! Parallel loops go through [`par`], which falls back to sequential
//! iteration when the `parallel` feature is disabled. Every reduction is
//! performed in a fixed order, so results do not depend on the thread count.

pub mod error;
pub mod haar;
pub mod io;
pub mod linop;
pub mod net;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod radon;
pub mod rates;
pub mod regularizers;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use haar::{CoeffPyramid, PyramidShape};
pub use phantom::Image;
pub use radon::{RadonGeometry, Sinogram};
pub use tensor::Tensor;
