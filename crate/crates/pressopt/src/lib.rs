//! Driver for the press optimizer: the result store, simulation backends,
//! the optimization loop, plot exports and the HTTP service. The numerics
//! live in [`pressopt_core`].

pub mod backend;
pub mod cloud_io;
pub mod config;
pub mod error;
pub mod export;
pub mod profile;
pub mod runner;
pub mod service;
pub mod store;

pub use error::{Error, Result};
