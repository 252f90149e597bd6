pub mod cli;
pub mod dynamics;
pub mod error;
pub mod governor;
pub mod io;
pub mod krotov;
pub mod linalg;
pub mod operators;
pub mod report;
pub mod units;

pub use error::{Error, Result};
