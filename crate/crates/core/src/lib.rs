//! Opinion dynamics with confirmation and negativity bias under strategic
//! extremal-opinion schedules.
//!
//! The crate covers the whole pipeline:
//!
//! - [`model`]: the nonlinear dynamics, its two linear regimes and a simulator;
//! - [`estimator`]: differenced least-squares identification of each regime;
//! - [`complexity`]: sample-complexity conditions, dwell times and the
//!   largest network size they certify;
//! - [`inference`]: recovery of topology, subconscious bias and bias gains
//!   from the regime estimates;
//! - [`harness`]: ideology-panel ingestion, prediction, sanity checks and
//!   Monte Carlo experiments;
//! - [`io`]: the CSV and JSON file formats used by the CLI.

pub mod complexity;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;

pub use error::{Error, Result};
pub use model::{Regime, RegimeModel, Schedule, SocialSystem, Trajectory};
