//! Configuration, file formats and the end-to-end pipeline around
//! [`interagent_core`].

pub mod config;
pub mod formats;
pub mod pipeline;

pub use config::Config;
