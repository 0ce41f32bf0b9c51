//! Two-stage load-safety image classification on a from-scratch CNN engine.
//!
//! * [`tensor`]: dense tensors, layer kernels with backward passes, SGD,
//!   gradient checking.
//! * [`arch`]: sequential architecture specs, LogisticNet, shape and
//!   receptive-field analysis.
//! * [`model`]: a trainable network instantiated from a spec.
//! * [`imaging`]: RGB images, PPM I/O, resizing and seeded augmentation.
//! * [`dataset`]: manifests, splits, stage relabeling, synthetic scenes.
//! * [`pipeline`]: training, overfit detection, metrics, checkpoints and
//!   the two-stage classifier.

pub mod arch;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod imaging;
pub mod model;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
