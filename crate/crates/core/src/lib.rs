//! A small ACT-R style production-system engine.
//!
//! Declarative chunks carry power-law activation histories, productions are
//! matched exhaustively every cycle, and conflicts are resolved by a rational
//! stopping rule over the arrival times of matched instantiations. Firings
//! feed back into activation, production strength, utility and associative
//! statistics. Runs are recorded as line-oriented traces that can be replayed
//! and compiled into new productions.

pub mod association;
pub mod compile;
pub mod conflict;
pub mod declarative;
pub mod engine;
pub mod experiments;
pub mod model;
pub mod params;
pub mod procedural;
pub mod trace;
pub mod utility;
pub mod value;

pub use engine::{run_model, Engine, EngineError, ExternalAction};
pub use model::{Model, ModelError};
pub use params::Parameters;
pub use trace::{HaltReason, Trace};
