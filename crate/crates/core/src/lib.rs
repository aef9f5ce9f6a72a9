//! COVID-19 CT classification pipeline: lung-area slice selection, an
//! attention-merge slice classifier, and patient-level voting.

pub mod data_io;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod numkernel;
pub mod pipeline;
pub mod selection;
pub mod trainer;
pub mod voting;

pub use error::{Error, ErrorKind, Result};
