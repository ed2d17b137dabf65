//! Retinal image quality assessment guided by dark and bright channel priors.
//!
//! The crate is organised the same way the pipeline runs:
//!
//! * [`imgproc`]: field-of-view detection, crop/pad/resize, augmentation, image IO.
//! * [`priors`]: exact dark/bright channel maps, the fast sliding extremum filter,
//!   and the fixed-Gaussian approximation used inside the network stem.
//! * [`nnet`]: a small CNN with explicit forward/backward passes and the
//!   prior-guided stem.
//! * [`data`]: synthetic fundus generation, manifests, k-fold splits, batching.
//! * [`evaluate`]: confusion matrices, macro metrics, Grad-CAM.
//! * [`train`]: the training schedule, checkpoints and the variant ablation.
//!
//! With the default `parallel` feature the per-sample and per-row loops run on
//! rayon; building with `--no-default-features` gives a purely sequential
//! crate with bit-identical results.

pub mod bench;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod imgproc;
pub mod nnet;
mod par;
pub mod priors;
pub mod train;

pub use error::{Error, Result};
