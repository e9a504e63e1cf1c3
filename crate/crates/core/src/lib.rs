pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod conv;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod raster;
pub mod rendernet;
pub mod sceneio;
pub mod tensor;

pub use error::{Error, Result};
