//! End-to-end workflows on top of the model, estimator, bounds and inference.

pub mod experiments;
pub mod ingest;
pub mod predict;
pub mod sanity;

pub use experiments::{
    boundedness_experiment, pac_experiment, random_feasible_system, round_trip_experiment, wilson_lower,
    BoundednessReport, PacReport, RoundTripReport, SystemSampler,
};
pub use ingest::{ingest_ideology, party_regime, IdeologyPanel, IngestReport, MemberFormat};
pub use predict::{fit_models, predict, regime_runs, split_regime_segments, PredictionReport, RegimeSegments};
pub use sanity::{sanity_checks, SanityReport};
