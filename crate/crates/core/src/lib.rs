pub mod alignkit;
pub mod detector;
pub mod error;
pub mod evalmetrics;
pub mod numkernel;
pub mod synthdomains;
pub mod trainloop;

pub use error::{Error, Result};
