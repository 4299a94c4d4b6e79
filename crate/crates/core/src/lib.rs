//! AST-guided memory for repository-level iterative code generation.

pub mod api;
pub mod bm25;
pub mod config;
pub mod context;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod index;
pub mod orchestrator;
pub mod python;
pub mod runner;
pub mod session;
pub mod store;

pub use error::{Error, Result};
