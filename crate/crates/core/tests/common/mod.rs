//! Oracles and fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod dbn;
pub mod encoder;
pub mod grad;
pub mod matching;
