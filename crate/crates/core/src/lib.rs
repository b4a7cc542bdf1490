pub mod dsp;
pub mod model;
pub mod classgmm;
pub mod losses;
pub mod datagen;
pub mod features;
pub mod system;
pub mod separator;
pub mod trainer;
pub mod error;
pub mod eval;

pub use error::{Error, Result};
