pub mod divergence;
pub mod error;
pub mod gaussian_vi;
pub mod gmm;
pub mod lda;
pub mod linreg;
pub mod location;
pub mod math;
pub mod objective;
pub mod risk;
pub mod rng;
pub mod synth;
pub mod tiny;

pub use error::{Error, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
