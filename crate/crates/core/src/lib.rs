//! Dynamic SPECT reconstruction from severely undersampled projections.
//!
//! The reconstruction model factorizes the image sequence through a small
//! temporal basis (`U = alpha * B^T`), enforces column sparsity of the
//! coefficients, temporal smoothness, and correlation of edge sets across
//! neighboring frames via infimal convolutions of TV Bregman distances.
//! The model is solved by an alternating scheme: a primal-dual (PDHG)
//! solver for the image, proximal forward-backward splitting for the
//! coefficients, and a small normal-equation solve for the basis.
//!
//! The crate also ships the full simulation side (phantoms, activity
//! curves, Gaussian/Poisson/event-level noise) and the FBP, alternating
//! least-squares, and alternating-EM baselines used for comparison.

pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod phantom;
pub mod projector;
pub mod regularization;

pub use error::{Error, Result};
