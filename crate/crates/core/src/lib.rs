//! Outbreak detection by stacking statistical surveillance methods.
//!
//! The crate provides
//! * five sliding-window surveillance detectors (EARS C1/C2/C3, Bayes, RKI)
//!   that emit one-tailed p-values ([`detectors`]),
//! * a synthetic benchmark of seasonal/trending count series with injected
//!   outbreaks ([`synthgen`]),
//! * dataset assembly for a stacking learner over p-values or binary alarms
//!   ([`stacking`]) and a random-forest learner ([`forest`]),
//! * ROC / detection-rate curves, partial areas and rank aggregation
//!   ([`eval`]),
//! * file formats and the batch pipeline behind the `outbreak-fusion` CLI
//!   ([`persist`], [`pipeline`], [`cli`]).

pub mod cli;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod forest;
pub mod persist;
pub mod pipeline;
pub mod synthgen;
pub mod rng;
pub mod series;
pub mod stacking;

pub use error::{Error, Result};
