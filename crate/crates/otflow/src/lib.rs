//! Solvers built around measure-preserving rearrangement.
//!
//! The crate has three layers:
//!
//! * [`grid`] and [`rearrange`] hold the building blocks: periodic and box
//!   grids with spectral / finite-volume projections, semi-Lagrangian
//!   transport, and optimal-assignment rearrangement of point clouds.
//! * [`aht`], [`gnsb`], [`ghb`] and [`cross_burgers`] are the time steppers
//!   that combine those blocks into full models.
//! * [`presets`], [`diag`] and [`dump`] supply reproducible initial data,
//!   diagnostics and the on-disk formats shared with the command line tool.
//!
//! Everything is deterministic: the only randomness comes from an explicit
//! seeded generator in [`presets`], and all solvers break ties by lowest
//! index.

pub mod aht;
pub mod cross_burgers;
pub mod diag;
pub mod dump;
pub mod error;
pub mod ghb;
pub mod gnsb;
pub mod grid;
pub mod presets;
pub mod rearrange;

pub use error::{Error, Result};

/// Library version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
