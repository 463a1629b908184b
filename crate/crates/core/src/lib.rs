pub mod ald;
pub mod blob;
pub mod dsl;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod mot_io;
pub mod noise;
pub mod numerics;
pub mod raw;
pub mod toynet;
pub mod tracker;

pub use error::{Error, Result};
