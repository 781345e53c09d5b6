//! Command line, file formats, LLM clients and HTTP service around
//! [`saerch_core`].

pub mod cli;
pub mod client;
pub mod config;
pub mod embed;
pub mod error;
pub mod formats;
pub mod labelling;
pub mod mock;
pub mod server;

pub use config::Config;
pub use error::{Error, Result};
