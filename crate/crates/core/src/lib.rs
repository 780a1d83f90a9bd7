//! Point-source wave equation with a compactly supported potential:
//! forward solves by progressive waves plus a retarded-potential series,
//! synthetic backscattering data, and layer-stripping reconstruction.

pub mod error;
pub mod field;
pub mod cli;
pub mod goursat;
pub mod inverse;
pub mod point_source;
pub mod progressive;
pub mod retarded;
pub mod stability;

pub use error::{Error, Result};
