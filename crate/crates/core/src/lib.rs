pub mod cli;
pub mod config;
pub mod darkchannel;
pub mod deblur;
pub mod error;
pub mod image;
pub mod io;
mod kv;
pub mod lsf;
pub mod metrics;
pub mod optim;
pub mod patch;
pub mod pipeline;
pub mod saturation;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
