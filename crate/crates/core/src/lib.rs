//! Rough differential equations driven by fractional Brownian motion.
//!
//! The crate is organised bottom-up: grid paths and Hölder norms, fBm
//! sampling, level-2 lifts, controlled paths and rough integration, RDE
//! solvers, the drift-reducing transform and the scalar flow derivative.

pub mod controlled;
pub mod error;
pub mod fbm;
pub mod flow;
pub mod grid_path;
pub mod numerics;
pub mod rde;
pub mod rough_lift;
pub mod transform;

pub use controlled::{ControlledPath, FnMap, SmoothMap};
pub use error::{Error, Result};
pub use fbm::{FbmParams, FbmSampler};
pub use grid_path::{GridPath, HolderReport, TimeGrid};
pub use numerics::OrderFit;
pub use rough_lift::{Flavor, RoughPath};
