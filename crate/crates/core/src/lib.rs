//! Forward simulation and statistical inference for focused-He⁺-beam creation of
//! silicon-vacancy (V_Si) arrays in 4H-SiC.
//!
//! The crate is split along the physical pipeline:
//!
//! * [`transport`]: binary-collision Monte Carlo of He⁺ slowing down in an amorphous
//!   target, yielding depth/lateral profiles and Kinchin–Pease vacancy counts.
//! * [`patterning`]: dose calibration, spot patterns and Poisson sampling of
//!   ground-truth defect arrays.
//! * [`photonics`]: confocal scan rendering, emitter saturation and HBT photon
//!   timestamp simulation with start-stop-free correlation.
//! * [`inference`]: Levenberg–Marquardt fitting and the estimators that recover
//!   yields and single-defect rates from images and histograms.
//!
//! All randomness is derived from a single `u64` master seed through named paths
//! (see [`rng::SeedPath`]), so results do not depend on thread scheduling.

pub mod error;
pub mod inference;
pub mod patterning;
pub mod photonics;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
