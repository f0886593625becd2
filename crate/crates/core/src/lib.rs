//! Multi-segment reconstruction: recover a 1-D signal and the distribution of
//! segment start locations from noisy, randomly located cyclic segments.
//!
//! Solvers:
//! - [`trainer`]: adversarial distribution matching (WGAN-GP critic, generator
//!   driven through the known forward model, Gumbel-Softmax relaxed PMF).
//! - [`em`]: expectation-maximization on the marginalized likelihood.
//! - [`moments`]: fitting moments up to third order.

pub mod critic;
pub mod em;
pub mod error;
pub mod forward;
pub mod io;
pub(crate) mod linalg;
pub mod metrics;
pub mod moments;
pub mod optim;
pub mod relaxation;
pub mod rng;
pub mod trainer;

pub use error::{MsrError, Result};
pub use forward::{MeasurementSet, SegmentPmf, Signal};
