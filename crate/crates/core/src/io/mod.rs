//! File formats: binary grid files, annotation/result JSON and the flat
//! hyperparameter config.

pub mod config;
pub mod gridfile;
pub mod json;

pub use config::{Config, ConfigError};
pub use gridfile::{decode_grid_file, encode_grid_file, read_grid_file, write_grid_file, GridFile, GridFileError};
pub use json::{AnnotationRecord, JsonError, ResultRecord};
