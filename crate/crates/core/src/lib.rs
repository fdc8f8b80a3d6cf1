pub mod bench;
pub mod certificate;
pub mod config;
pub mod control;
pub mod digest;
pub mod dynamics;
pub mod error;
pub mod forge;
pub mod penn;
pub mod pipeline;
pub mod plot;
pub mod qp;
pub mod selector;
pub mod surrogate;
pub mod tracin;

pub use error::{Error, Result};
