//! Numerics for planar diffusions with a point interaction at the origin.

pub mod error;
pub mod point;
pub mod quad;
pub mod specfun;
pub mod kernel;
pub mod families;
pub mod doob;
pub mod stats;
pub mod sampler;
pub mod hmap;
pub mod verify;

pub use error::{Error, Result};
pub use point::PlanarPoint;
pub use quad::{EndpointRule, QuadratureSpec, SpecialValue};
