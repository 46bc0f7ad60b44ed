//! File formats, corpora, the HTTP service and the command line around
//! `spgan-core`.

pub mod cli;
pub mod config;
pub mod corpus;
mod error;
pub mod io;
pub mod manifest;
pub mod ops;
pub mod service;
pub mod store;

pub use error::{Error, Result};
