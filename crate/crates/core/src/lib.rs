//! Home-field advantage (HFA) estimation from game margins.
//!
//! The crate covers two phases of analysis:
//!
//! * Phase I: per-season (optionally per-conference) estimates of the HFA
//!   from the fixed-team-effect model ([`fixed_model`]) and the
//!   random-team-effect model fitted by REML/EM ([`mixed_model`]), a
//!   chi-square diagnostic for schedule-induced bias in the mixed-model
//!   estimate ([`diagnostics`]), and resampling simulations that measure
//!   that bias directly ([`simulation`]).
//! * Phase II: weighted trend models over the resulting per-year HFA
//!   series ([`phase2`]).

pub mod diagnostics;
pub mod error;
pub mod fixed_model;
pub mod linalg;
pub mod mixed_model;
pub mod optim;
pub mod phase2;
pub mod schedule;
pub mod simulation;
pub mod stats;

pub use error::{HfaError, Result};
pub use fixed_model::{fit_fixed, pairwise_difference, FixedDesign, FixedFit, PairwiseDifference};
pub use mixed_model::{fit_mixed, henderson_solve, reml_loglik, EmConfig, MixedDesign, MixedFit};
pub use schedule::{
    build_design, check_estimability, filter_intraconference, parse_games, ConferenceMap,
    EstimabilityReport, Game, GameSet, ScheduleMatrix,
};
