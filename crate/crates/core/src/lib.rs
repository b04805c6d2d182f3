//! Photon-number statistics of weak-coherent-pulse QKD under the
//! photon-number-splitting (PNS) attack.
//!
//! The crate computes the source, lossy-channel and attacked distributions,
//! decides when Eve can reshape the attacked statistics into the Poissonian
//! statistics of an honest lossy channel, builds the extraction plan that
//! does it, and checks the result by pulse-level simulation.
//!
//! Module map:
//!
//! * [`distributions`]: truncated Poisson and PNS photon-number distributions.
//! * [`matching`]: vacuum-matched blocking fraction, difference profile, feasibility.
//! * [`transport`]: Eve's redistribution plan and its verification.
//! * [`boundary`]: the single-photon excess `d1`, critical transmission and figure data.
//! * [`gain`]: the conservative gain bound and the optimal mean photon number.
//! * [`montecarlo`]: seeded pulse-level simulation and chi-squared comparison.

pub mod boundary;
pub mod distributions;
mod error;
pub mod fmt;
pub mod gain;
pub mod matching;
pub mod montecarlo;
pub mod transport;

pub use distributions::{ChannelParams, PhotonDistribution};
pub use error::{Error, Result};
