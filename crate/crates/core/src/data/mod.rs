//! Dataset handling: manifest ingestion, subject-disjoint splitting, and the
//! synthetic disguise-face generator.

mod manifest;
mod split;
pub(crate) mod synth;

pub use manifest::{
    load_manifest, planted_regions_path, relative_path, save_manifest, DatasetManifest,
    FaceSample, Label,
};
pub use split::{holdout_subject_split, kfold_subject_split};
pub use synth::{generate_synthetic, load_planted_regions, SynthConfig};
