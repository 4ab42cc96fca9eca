pub mod dict;
pub mod classify;
pub mod data;
pub mod dimsel;
pub mod embed;
pub mod error;
pub mod fmt;
pub mod linalg;
pub mod pipeline;
pub mod sparse;

pub use error::{Error, Result};
