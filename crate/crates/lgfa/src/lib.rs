//! Vector-map fusion, class-constrained localization, line completion and
//! foreground reprojection over class-labeled 2D polylines, with a synthetic
//! scenario generator, baseline registrars and an evaluation harness.

pub mod baselines;
pub mod completion;
pub mod evalmetrics;
pub mod foreground;
pub mod fusion;
pub mod geom;
pub mod localization;
pub mod map_model;
pub mod pipeline;
pub mod report;
pub mod scenario;
