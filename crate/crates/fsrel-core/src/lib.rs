//! Few-shot predicate classification over scene graphs with decomposed
//! subject/object prototypes, an adaptive support re-weighting metric, and
//! an episodic training loop, evaluated with mean recall at K.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod metric;
pub mod model;
pub mod nn;
pub mod params;
pub mod prototype;
pub mod sgdata;
pub mod training;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use model::Model;
