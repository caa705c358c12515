//! Extraction of tree-structured tubular centerlines (airways, vessels) from 3D
//! scalar volumes.
//!
//! A tubular template is fitted to the image at regularly spaced candidate
//! positions ([`fitting`]), the fitted candidates are organised into a
//! hypothesis tree of fixed search depth ([`mht`]) and the tree is traversed by
//! deferred decisions to grow branch polylines ([`tracker`]). Two scoring modes
//! are available: [`ScoringMode::Original`] thresholds the raw contrast SNR of
//! each fit, [`ScoringMode::Modified`] replaces it by the reciprocal rank of the
//! fit among its siblings so one global threshold serves every branch scale.
//!
//! [`phantom`] renders synthetic volumes with exact ground truth from the same
//! image model, [`metrics`] scores centerlines against a reference and
//! [`suite`] bundles the phantom scenarios with the glue to track and score them.

pub mod centerline;
pub mod error;
pub mod fitting;
pub mod geom;
pub mod metrics;
pub mod mht;
pub mod phantom;
pub mod suite;
pub mod template;
pub mod tracker;
pub mod volume;

pub use error::{Error, Result};
pub use fitting::{fit_template, raw_score, solve_linear, FitOptions, FitResult, LinearFit, ScoreFormula};
pub use geom::Point3;
pub use metrics::{centerline_distance, evaluate, overlap_measures, resample, Evaluation, OverlapMeasures, SampledCenterline};
pub use mht::{global_score, rank_hypotheses, HypothesisTree, LocalHypothesis, RankScope, ScoringMode, Thresholds};
pub use phantom::{render, PhantomSpec};
pub use template::{TemplateParams, WeightWindow};
pub use tracker::{track_tree, Branch, CenterlineTree, TerminationReason, TrackOutput, TrackerConfig};
pub use volume::{IntensityUnit, Volume};
