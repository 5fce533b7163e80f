//! Neural radiance fields regularized with structure-from-motion matches:
//! geometry, differentiable rendering, losses, synthetic data and training.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod field;
pub mod geometry;
pub mod imaging;
pub mod losses;
pub mod trainer;

pub use error::{Error, Result};

// the tape allocates and frees many large buffers per step; glibc returns
// them to the kernel each time
#[cfg(feature = "mimalloc")]
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
