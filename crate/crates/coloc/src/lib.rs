//! Turns coarse WiFi access-point association logs into per-user dwell
//! segments, room-level collocation episodes, attendance inferences,
//! behavioral features, and performance-prediction models.
//!
//! The pipeline runs in stages, each a pure function of the previous
//! stage's output:
//!
//! 1. [`ingest`] — parse logs, AP registry, roster, schedules, attendance.
//! 2. [`segmentation`] — classify each user's event stream into
//!    stationary dwell segments (Dwelling / Moving / Disconnected).
//! 3. [`collocation`] — intersect dwells per room into episodes where two
//!    or more users share a room, bridging short absences.
//! 4. [`validation`] — infer lecture attendance from dwells and score it
//!    against instructor ground truth.
//! 5. [`features`] — weekly behavioral features and semester summaries
//!    (mean / median / std / approximate entropy).
//! 6. [`modeling`] — group-aware cross-validated regression of term
//!    scores on those features (OLS, CART, gradient boosting).
//! 7. [`analytics`] — interaction graphs, space usage, punctuality.
//!
//! [`synth`] generates synthetic campuses with known ground truth so the
//! whole chain can be tested end to end, and [`model`] holds the shared
//! domain types.

pub mod analytics;
pub mod collocation;
pub mod features;
pub mod ingest;
pub mod model;
pub mod modeling;
pub mod segmentation;
pub mod synth;
pub mod validation;
