//! Empathetic dialogue engine.
//!
//! The pipeline recognizes a user's emotion class and the span stating its
//! cause, probes with a counseling template when an emotional turn has no
//! cause yet, and otherwise generates a reply conditioned on history, query,
//! emotion label and cause.

pub mod corpus;
pub mod dialogue;
pub mod emotion;
pub mod error;
pub mod evalkit;
pub mod generator;
pub mod neural;
pub mod service;
pub mod textproc;

pub use error::{Error, Result};
