//! Asynchronous action-chunk execution for manipulators on moving bases.
//!
//! The pipeline has three parts:
//!
//! * [`action`]: aligns incoming policy chunks against the execution buffer,
//!   blends them with an exponential temporal ensemble and interpolates the
//!   buffer at control rate.
//! * [`stabilizer`] with [`predictor`]: predicts the platform pose at
//!   execution time and rigidly corrects each buffered action for the
//!   motion since it was generated.
//! * [`latency`]: finds the system latency by an end-effector-hold search.
//!
//! [`sim`] closes the loop on a virtual clock and [`cli`] wraps it in
//! reproducible commands.

pub mod action;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod history;
pub mod latency;
pub mod predictor;
pub mod sim;
pub mod stabilizer;

pub use action::{Action, ActionBuffer, ActionChunk, ActionManager, EnsembleConfig};
pub use error::{Error, Result};
pub use geometry::{Extrinsics, Pose, Vec3};
pub use history::{PoseHistory, PoseSample};
pub use stabilizer::{Offset, Stabilizer};
