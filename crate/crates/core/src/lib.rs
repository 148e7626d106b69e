//! Region-weighted diffusion loss with a timestep-dependent schedule, a
//! matched-face identity loss, insertion-quality metrics, and tooling for
//! building paired training manifests.

pub mod bdp;
pub mod error;
pub mod harness;
pub mod losses;
pub mod masks;
pub mod matching;
pub mod metrics;
pub mod numerics;
pub mod schedule;

pub use error::{Error, Result};
