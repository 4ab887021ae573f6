//! Hybrid clickbait classifier.
//!
//! The model scores a social-media post with three components whose outputs
//! are concatenated and fed to a logistic layer:
//!
//! * a bidirectional LSTM with additive attention over the post title, where
//!   each token is a pretrained word vector joined with a character-CNN vector;
//! * a Siamese network comparing document vectors of the post title and the
//!   linked article description;
//! * a Siamese network comparing a projected image feature with the
//!   description vector.
//!
//! Everything is differentiated by the small reverse-mode engine in
//! [`tensor`], trained with Adadelta on binary cross-entropy ([`training`]),
//! and persisted through the binary formats in [`io`].

pub mod embeddings;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod training;

mod error;

pub use error::{Error, Result};
