pub mod calibrate;
pub mod composite;
pub mod error;
pub mod evalkit;
pub mod formats;
pub mod histnet;
pub mod image;
pub mod pipesim;
pub mod par;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{Image, Mask};
pub use par::Execution;
