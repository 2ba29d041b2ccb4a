//! Transfer of attribute-based access-control rules from a source party to
//! a target party.
//!
//! Source rules are compared against the target's decision log or against
//! rules learned from it; conflicting rules are adapted rather than
//! overridden, and the result is scored with precision, recall and F1.

pub mod adaptation;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod learner;
pub mod matching;
pub mod model;
pub mod transfer;

pub use error::{Error, Result};
