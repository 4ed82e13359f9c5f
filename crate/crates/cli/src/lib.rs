//! Demonstration service behind `rlab demo-serve`.

pub mod protocol;
pub mod service;
