//! Test-time adaptation for zero-shot temporal action localization.
//!
//! A [`bundle::VideoBundle`] carries precomputed features for one video:
//! frame activations entering a vision projection head, text activations
//! entering a text projection head, and the heads themselves. The
//! [`localizer`] adapts both heads per video with a self-supervised ranking
//! loss and turns the resulting frame scores into labeled temporal
//! proposals; [`metrics`] scores proposals against ground truth.

pub mod bundle;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod guidance;
pub mod head;
pub mod linalg;
pub mod localizer;
pub mod metrics;
pub mod optim;
pub mod results;
pub mod synth;
pub mod tensor;

pub use bundle::{load_bundle, save_bundle, validate_bundle, Annotation, TextItem, TextRole, VideoBundle, Violation};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use localizer::{localize, Heads, Proposal, VideoResult};
pub use metrics::{average_precision, map_report, tiou, EvalReport, GroundTruth, Prediction};
pub use tensor::{read_tensor, write_tensor, Tensor};
