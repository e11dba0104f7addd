//! Diffusion decoder for mel spectrograms built around directional patch
//! interaction: attention restricted to each patch's previous-frame and
//! lower-frequency neighbours.

pub mod diffusion;
pub mod directional;
pub mod dit;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod params;
pub mod patch_grid;
pub mod scalar;
pub mod spectro_io;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
