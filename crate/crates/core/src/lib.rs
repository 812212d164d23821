pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod localize;
pub mod losses;
pub mod model;
pub mod partition;
pub mod selftrain;
pub mod types;
