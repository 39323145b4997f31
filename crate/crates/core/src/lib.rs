//! Joint MMSE design and bi-directional training of precoders and receivers
//! for cellular MIMO with successive cancellation (uplink) and
//! Tomlinson-Harashima interference pre-compensation (downlink).

pub mod channel;
pub mod error;
pub mod filters;
pub mod harness;
pub mod linalg;
pub mod mmse;
pub mod multiplier;
pub mod objectives;
pub mod optimizer;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
