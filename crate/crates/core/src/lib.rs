//! Trains a recurrent text encoder into a fixed, precomputed image-feature
//! space and evaluates cross-modal retrieval in that space.
//!
//! The image side is frozen: features are loaded from disk
//! ([`dataio::FeatureStore`]) and never updated. Only the text encoder
//! ([`textenc`]) learns, driven by the positive-aware triplet ranking loss
//! ([`loss`]) over negatives mined inside each batch ([`mining`]).
//!
//! Numeric kernels are generic over [`Real`] so the same code runs in `f32`
//! for training and in `f64` for gradient verification.

// `!(x > 0.0)` is how NaN gets rejected; index loops walk parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod evalret;
pub mod loss;
pub mod mining;
pub mod synthetic;
pub mod textenc;
pub mod trainer;

pub use diffcore::Real;
pub use error::{Error, Result};
