//! Data model, dataset ingestion, base/novel splitting, support and episode
//! sampling, and synthetic world generation.

pub mod episode;
pub mod io;
pub mod split;
pub mod synth;
pub mod types;

pub use episode::{sample_episode, EpisodeConfig};
pub use io::{load_dataset, load_split, load_support, save_dataset, save_split, save_support};
pub use split::{make_split, sample_support_sets};
pub use synth::{generate_synthetic_world, ModePools, SyntheticWorld, WorldConfig, WorldMetadata};
pub use types::*;
