//! Reverse-mode gradients of the registration objective and the Adam update.

mod adam;
pub mod gradcheck;
mod tape;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradcheck, GradcheckReport, StageError};
pub use tape::{evaluate, forward, forward_backward, GradientTape, PipelineConfig, Problem, Stage};
