//! Biometric symmetric-key establishment for wireless body sensor networks.
//!
//! Sensors on one body derive similar bit strings from a shared physiological
//! signal and use them as witnesses in a fuzzy commitment that transports the
//! leader's session key. The crate contains the primitives, the per-node
//! protocol state machines, energy-driven leader rotation and a deterministic
//! discrete-event simulator that exercises all of it, including adversaries.

pub mod biokeys;
pub mod bits;
pub mod election;
pub mod fuzzycommit;
pub mod protocol;
mod rng;
pub mod simnet;

pub use bits::{BitError, BitString};
