pub mod aggregation;
pub mod cluster;
pub mod config;
pub mod data;
pub mod delay;
pub mod error;
pub mod harness;
pub mod objective;
pub mod sparse;
pub mod theory;
pub mod trainer;
