pub mod error;
pub mod specfun;

pub use error::{Error, Result};
pub mod band;
pub mod ccp;
pub mod cli;
pub mod design;
pub mod lpsolve;
pub mod oracle;
pub mod relax;
pub mod selftest;
pub mod simulate;
