#![allow(clippy::needless_range_loop)]

pub mod audio;
pub mod cli;
pub mod dbn;
pub mod encoder;
pub mod eval;
pub mod frontend;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod train;
