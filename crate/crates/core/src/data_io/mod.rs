//! Volume files, label tables, weight containers and the phantom generator.

pub mod labels;
pub mod svol;
pub mod synth;
pub mod weights;

pub use labels::{load_labels, write_labels, LabelTable};
pub use svol::{read_volume, write_volume};
pub use synth::{synth_generate, SynthConfig};
pub use weights::{load_model, save_model};
