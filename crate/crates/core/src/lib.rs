//! Survival prediction from slice-level image features.
//!
//! The pipeline runs from volume geometry (anchor slices with the largest
//! tumor cross-section per plane, neighbor windows, tumor-cropped tiles)
//! through slice aggregation (anchor attention, attention MIL, mean/max
//! pooling) into risk heads trained on the Cox negative log partial
//! likelihood, and is scored with Harrell's C-index and two-group hazard
//! ratios under held-out-test cross validation.
//!
//! ```
//! use daal_core::survival::{cox_loss, SurvivalLabel};
//!
//! let labels = [SurvivalLabel::new(1.0, true)?, SurvivalLabel::new(2.0, false)?];
//! let loss = cox_loss(&[0.0, 0.0], &labels)?;
//! assert!((loss - 2f64.ln()).abs() < 1e-12);
//! # Ok::<(), daal_core::Error>(())
//! ```

pub mod aggregation;
pub mod error;
pub mod formats;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod optim;
pub mod survival;
pub mod volume;

pub use error::{Error, Result};
