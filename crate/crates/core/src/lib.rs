pub mod annotate;
pub mod backbone;
pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod script;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use script::{ActionLabel, ActionScript, ActionSegment};
