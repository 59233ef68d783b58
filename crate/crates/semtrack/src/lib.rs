//! File formats, experiment drivers and the command-line front end for
//! [`semtrack_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod plot;
pub mod results;
pub mod seqio;

pub use error::{Error, Result};
