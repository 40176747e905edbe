pub mod alignment;
pub mod attribution;
pub mod augment;
pub mod config;
pub mod dataset;
pub mod dissection;
pub mod error;
pub mod faithfulness;
pub mod harness;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod records;
pub mod report;
pub mod rng;
pub mod scene;
pub mod tensorfile;

pub use error::{Error, Result};
pub use image::{Image, Rect};
