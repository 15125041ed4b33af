//! High-order hybridizable discontinuous Galerkin (HDG) simulator for
//! incompressible, immiscible three-phase flow (water / heavy oil / light oil)
//! in heterogeneous 2D porous media.
//!
//! The pressure–total-velocity system and the two saturation equations are
//! discretized with HDG on triangles and advanced with a semi-implicit
//! operator-splitting loop: Darcy solve, then wetting saturation, then light
//! oil saturation, each implicit within a time step. Static condensation
//! reduces every global solve to the mesh-skeleton trace unknowns.

pub mod bench_probe;
pub mod cli_support;
pub mod condense;
pub mod config;
pub mod darcy;
pub mod driver;
pub mod error;
pub mod field;
pub mod fluid;
pub mod geom;
pub mod mesh;
pub mod nonlinear;
pub mod output;
pub mod postprocess;
pub mod ref_element;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};

/// Seconds per day, used wherever configs speak in days.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Pascals per psi, used to normalize capillary-pressure closures to SI.
pub const PA_PER_PSI: f64 = 6_894.757;
