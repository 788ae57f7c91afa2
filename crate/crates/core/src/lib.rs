pub mod diffusion;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod qdm;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use grid::{EnsembleStack, FieldStack, GridSpec, LatWeights, Units};
