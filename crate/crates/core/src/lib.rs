//! Tracking-by-embedding toolkit.
//!
//! - [`geometry`]: boxes, IoU/GIoU and cosine similarity.
//! - [`assignment`]: rectangular Hungarian solver and the prediction/truth matcher.
//! - [`contrastive`]: instance-level contrastive loss, detection losses and gradients.
//! - [`sampler`]: training batch construction.
//! - [`tracker`]: online ID assignment over a FIFO embedding memory.
//! - [`metrics`]: CLEAR-MOT, IDF1 and HOTA.
//! - [`simulator`]: seeded synthetic sequences.
//! - [`formats`]: MOTChallenge text and detection JSON Lines codecs.

pub mod assignment;
pub mod contrastive;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod metrics;
pub mod sampler;
pub mod simulator;
pub mod tracker;

pub use error::{Error, Result};
