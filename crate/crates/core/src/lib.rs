#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod codec;
pub mod error;
pub mod image;
pub mod io;
pub mod kv;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod trainer;
pub mod translation;

pub use error::{Error, Result};
