//! Hybrid capsule network / convolutional deep belief network classifier.
//!
//! The crate is `no_std` and only needs an allocator. Everything here is a
//! pure function of its inputs plus an explicit [`RandomStream`], so training
//! runs are bit-reproducible for a fixed seed. File formats, image decoding
//! and the command line live in the companion `capsdbn` crate.
//!
//! Layout:
//!
//! * [`numerics`]: tensors, convolution, activations, seeded streams and a
//!   finite-difference gradient oracle.
//! * [`preprocess`]: per-image standardization, median filtering,
//!   augmentation and dataset-level whitening.
//! * [`capsnet`]: convolutional front end, primary and category capsules,
//!   routing-by-agreement, margin loss and exact backpropagation.
//! * [`dbn`]: convolutional RBMs, contrastive divergence and greedy stacking.
//! * [`hybrid`]: late fusion head and referral policy.
//! * [`eval`]: metrics, ROC-AUC, early stopping and the synthetic dataset.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

mod error;

pub mod capsnet;
pub mod dbn;
pub mod eval;
pub mod hybrid;
pub mod numerics;
pub mod preprocess;

pub use error::{Error, Result};
pub use numerics::{RandomStream, Real, Tensor};
