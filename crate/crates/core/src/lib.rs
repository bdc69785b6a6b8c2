//! Interaction-fidelity ranking: score a whole candidate set against a
//! user's full behaviour sequence with degree-normalized linear
//! cross-attention, in time linear in both set sizes.

pub mod attention;
pub mod bench;
pub mod check;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numeric;
pub mod par;
pub mod training;

pub use error::{Error, Result};
