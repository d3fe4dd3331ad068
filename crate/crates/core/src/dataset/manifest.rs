//! Dataset generation and the JSON manifest.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::procedural::{gen_scene, SceneSpec, TextureSource};
use crate::dataset::sample::{build_sample, SampleConfig, SAMPLE_FILES};
use crate::error::{Error, Result};
use crate::optics::scene::DepthRange;
use crate::rng::{derive_seed, stream};

/// Test scenes draw their seeds from ids at and above this offset.
pub const TEST_SEED_OFFSET: u64 = 1 << 32;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    pub width: usize,
    pub height: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub depth_range: DepthRange,
    pub max_disparity_px: u32,
    pub texture: TextureSource,
    /// Probability that a scene uses a stepped backdrop.
    pub ramp_background: f64,
    pub sample: SampleConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            train_count: 60,
            test_count: 10,
            width: 192,
            height: 192,
            objects_min: 2,
            objects_max: 5,
            depth_range: DepthRange::default(),
            max_disparity_px: 24,
            texture: TextureSource::Mixed,
            ramp_background: 0.5,
            sample: SampleConfig::default(),
        }
    }
}

impl DatasetConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects_min > self.objects_max {
            return Err(Error::Config("objects_min exceeds objects_max".into()));
        }
        if !(0.0..=1.0).contains(&self.ramp_background) {
            return Err(Error::Config("ramp_background must be a probability".into()));
        }
        self.sample.stack.validate()?;
        self.sample.lens.validate()?;
        self.scene_spec(0).validate()
    }

    fn scene_spec(&self, seed: u64) -> SceneSpec {
        use rand::Rng;
        let mut rng = stream(seed, 0x0b7);
        SceneSpec {
            seed,
            width: self.width,
            height: self.height,
            objects: rng.random_range(self.objects_min..=self.objects_max),
            depth_range: self.depth_range,
            max_disparity_px: self.max_disparity_px,
            texture: self.texture,
            ramp_background: rng.random_bool(self.ramp_background),
        }
    }

    /// `(id, seed, split)` for every sample.
    pub fn entries(&self) -> Vec<(String, u64, Split)> {
        let train = (0..self.train_count).map(|i| (format!("train_{i:04}"), derive_seed(self.seed, i as u64), Split::Train));
        let test = (0..self.test_count).map(|i| {
            (
                format!("test_{i:04}"),
                derive_seed(self.seed, TEST_SEED_OFFSET + i as u64),
                Split::Test,
            )
        });
        train.chain(test).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    /// Relative to the dataset root.
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub samples: Vec<ManifestEntry>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub config: DatasetConfig,
    pub config_hash: String,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: Manifest = serde_json::from_slice(&bytes)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        let p = self.root.join(MANIFEST_FILE);
        std::fs::write(&p, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&p, e))
    }

    pub fn sample_dir(&self, id: &str) -> Result<PathBuf> {
        self.samples
            .iter()
            .find(|e| e.id == id)
            .map(|e| self.root.join(&e.dir))
            .ok_or_else(|| Error::Usage(format!("sample `{id}` not in manifest")))
    }

    /// Disjoint splits and every referenced file present.
    pub fn validate(&self) -> Result<()> {
        if let Some(id) = self.train.iter().find(|id| self.test.contains(id)) {
            return Err(Error::Config(format!("sample `{id}` is in both splits")));
        }
        for e in &self.samples {
            let dir = self.root.join(&e.dir);
            let mut files: Vec<PathBuf> = SAMPLE_FILES.iter().map(|f| dir.join(f)).collect();
            for eye in ["left", "right"] {
                files.push(dir.join(eye).join(crate::optics::render::SIDECAR));
            }
            if let Some(missing) = files.iter().find(|f| !f.exists()) {
                return Err(Error::Format {
                    path: missing.clone(),
                    reason: format!("referenced by sample `{}` but missing", e.id),
                });
            }
        }
        Ok(())
    }
}

/// Generates every sample under `out` and writes the manifest.
pub fn generate_dataset(config: &DatasetConfig, out: &Path) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let entries = config.entries();
    entries.par_iter().try_for_each(|(id, seed, _)| -> Result<()> {
        let pair = gen_scene(&config.scene_spec(*seed))?;
        let sample = build_sample(&pair, &config.sample, id, *seed)?;
        sample.write(&out.join("samples").join(id))
    })?;
    let manifest = Manifest {
        root: out.to_path_buf(),
        samples: entries
            .iter()
            .map(|(id, seed, split)| ManifestEntry {
                id: id.clone(),
                split: *split,
                seed: *seed,
                dir: Path::new("samples").join(id),
            })
            .collect(),
        train: entries.iter().filter(|e| e.2 == Split::Train).map(|e| e.0.clone()).collect(),
        test: entries.iter().filter(|e| e.2 == Split::Test).map(|e| e.0.clone()).collect(),
        config: config.clone(),
        config_hash: config.hash(),
    };
    manifest.save()?;
    log::info!(
        "generated {} train / {} test samples in {}",
        manifest.train.len(),
        manifest.test.len(),
        out.display()
    );
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetConfig {
        DatasetConfig {
            seed: 9,
            train_count: 3,
            test_count: 2,
            width: 32,
            height: 32,
            ..Default::default()
        }
    }

    #[test]
    fn seeds_of_splits_are_disjoint() {
        let cfg = DatasetConfig::default();
        let e = cfg.entries();
        let train: Vec<u64> = e.iter().filter(|x| x.2 == Split::Train).map(|x| x.1).collect();
        assert!(e.iter().filter(|x| x.2 == Split::Test).all(|x| !train.contains(&x.1)));
        assert_eq!(e.len(), 70);
    }

    #[test]
    fn generation_writes_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&tiny(), dir.path()).unwrap();
        let back = Manifest::load(dir.path()).unwrap();
        assert_eq!(back.samples, m.samples);
        back.validate().unwrap();
        assert_eq!(back.config_hash, tiny().hash());
        std::fs::remove_file(dir.path().join("samples/test_0001/meta.json")).unwrap();
        assert!(back.validate().is_err());
    }

    #[test]
    fn hash_tracks_config() {
        assert_eq!(tiny().hash(), tiny().hash());
        assert_ne!(tiny().hash(), DatasetConfig { seed: 10, ..tiny() }.hash());
    }
}
