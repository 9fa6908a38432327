pub mod attention;
pub mod cli;
pub mod error;
pub mod format;
pub mod grouping;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod selftest;

pub use error::{Error, Result};
