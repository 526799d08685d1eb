#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dpcoa;
pub mod error;
pub mod family;
pub mod gpca;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod manifest;
pub mod server;
pub mod sim;
pub mod tree;

pub use error::{Error, Result};
pub use linalg::{Matrix, SymEigen};
