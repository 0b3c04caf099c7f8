//! Exemplar-style unsupervised feature learning.
//!
//! Random patches are sampled from unlabeled images, every patch is expanded
//! into its own surrogate class by random translation, scaling, color and
//! contrast transformations, and a small convolutional network is trained to
//! tell the classes apart. The network's responses, pooled over a spatial
//! pyramid, serve as image features for a linear SVM.

pub mod augment;
pub mod error;
pub mod experiment;
pub mod features;
pub mod imaging;
pub mod manifest;
pub mod net;
pub mod rng;
pub mod sampler;
pub mod svm;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
