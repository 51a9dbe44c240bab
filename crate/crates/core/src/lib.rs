//! Seed-free synthetic instruction data for low-resource languages.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod context;
pub mod diversity;
pub mod eval;
pub mod gateway;
pub mod instruct;
pub mod lenient;
pub mod pipeline;
pub mod record;
pub mod store;
pub mod topics;
pub mod util;
