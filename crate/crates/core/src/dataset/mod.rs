//! Procedural binocular focal-stack dataset.

pub mod manifest;
pub mod patch;
pub mod procedural;
pub mod sample;

pub use manifest::{generate_dataset, DatasetConfig, Manifest, Split};
pub use patch::{crop_to_multiple_of_8, extract_patch, load_split, random_placement, sample_patch, Patch, PatchTarget, Placement, Sample};
pub use procedural::{gen_scene, SceneSpec, StereoScene, TextureSource};
pub use sample::{build_sample, SampleConfig, SamplePair};
