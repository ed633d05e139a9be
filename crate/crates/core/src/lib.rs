//! Hierarchical image peeling.
//!
//! An image is disassembled into a stack of progressively smoother structure
//! layers `I^1 … I^T` and the detail components `C_t = I^{t-1} - I^t` removed
//! at each scale, so that `I = I^T + Σ C_t` holds exactly. Each scale solves
//! an edge-guided quadratic separation problem whose guidance map comes from
//! a closed-form threshold on a shrinking reference gradient field.

pub mod apps;
pub mod cli;
pub mod config;
pub mod error;
pub mod guider;
pub mod hierarchy;
pub mod image;
pub mod metrics;
pub mod oracle;
pub mod peeler;

pub use error::{HipeError, Result};
pub use guider::{GuidanceMap, ReferenceGradient, ScaleSchedule};
pub use hierarchy::{peel, peel_with_external_guidance, PeelHierarchy};
pub use image::{gradient, load_image, save_image, GradientField, Image};
pub use metrics::{gcc, hierarchy_report, GccReport};
pub use peeler::{peel_once, PeelConfig, SolverRegistry};
