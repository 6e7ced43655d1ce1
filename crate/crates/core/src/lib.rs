pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod graph;
pub mod lifelong;
pub mod nnkit;
pub mod select_eval;
pub mod vae;

pub use error::{Error, Result};
