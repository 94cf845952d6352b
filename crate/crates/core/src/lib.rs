//! Reward-hacking laboratory: small policy-gradient experiments with proxy
//! rewards, gradient regularization, and Monte-Carlo checks of the
//! flatness/robustness bounds.

pub mod bt;
pub mod diagnostics;
pub mod error;
pub mod nets;
pub mod numeric;
pub mod policies;
pub mod rewards;
pub mod trainer;

pub use error::{Error, Result};
