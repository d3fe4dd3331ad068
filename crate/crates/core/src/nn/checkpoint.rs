//! Little-endian binary checkpoints.
//!
//! Layout: the magic bytes `BDFFCKPT`, a `u32` format version, a `u32` block
//! count, then per block a `u32` name length, the UTF-8 name, a `u32` rank,
//! `rank` × `u64` extents and the raw `f32` values. Running statistics are
//! stored as `<bn>.running_mean` / `<bn>.running_var`, Adam moments as
//! `adam.m/<param>` / `adam.v/<param>` plus a one-element `adam.step` block.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::adam::{AdamConfig, AdamState};
use crate::nn::batchnorm::RunningStats;
use crate::nn::model::Model;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BDFFCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub blocks: BTreeMap<String, Tensor<f32>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut blocks = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= buf.len() - r.pos))
                .ok_or_else(|| Error::Checkpoint(format!("block `{name}` extents exceed file size")))?;
            let raw = r.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.insert(name, Tensor::from_vec(&shape, data)?);
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes after last block".into()));
        }
        Ok(Checkpoint { blocks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn from_model(model: &Model<f32>, adam: Option<&AdamState<f32>>) -> Self {
        let mut blocks: BTreeMap<String, Tensor<f32>> = model.params.clone();
        for (key, stats) in &model.running {
            let c = stats.mean.len();
            blocks.insert(
                format!("{key}.running_mean"),
                Tensor::from_vec(&[c], stats.mean.clone()).expect("length c"),
            );
            blocks.insert(
                format!("{key}.running_var"),
                Tensor::from_vec(&[c], stats.var.clone()).expect("length c"),
            );
        }
        if let Some(adam) = adam {
            for (name, m) in &adam.first_moment {
                blocks.insert(format!("adam.m/{name}"), Tensor::from_vec(&[m.len()], m.clone()).unwrap());
            }
            for (name, v) in &adam.second_moment {
                blocks.insert(format!("adam.v/{name}"), Tensor::from_vec(&[v.len()], v.clone()).unwrap());
            }
            blocks.insert("adam.step".into(), Tensor::full(&[1], adam.step as f32));
        }
        Checkpoint { blocks }
    }

    /// Copies every parameter and running statistic of `model` whose name
    /// starts with one of `prefixes` (all of them if `prefixes` is empty).
    /// Fails listing every required block that is absent or misshapen.
    pub fn load_into(&self, model: &mut Model<f32>, prefixes: &[&str]) -> Result<usize> {
        let wanted = |name: &str| prefixes.is_empty() || prefixes.iter().any(|p| name.starts_with(p));
        let mut missing = vec![];
        let mut loaded = 0;
        let names: Vec<String> = model.params.keys().filter(|n| wanted(n)).cloned().collect();
        for name in names {
            match self.blocks.get(&name) {
                Some(t) if t.shape() == model.params[&name].shape() => {
                    model.params.insert(name, t.clone());
                    loaded += 1;
                }
                Some(t) => missing.push(format!("{name} (shape {:?})", t.shape())),
                None => missing.push(name),
            }
        }
        for key in model.graph().batchnorm_keys().into_iter().filter(|k| wanted(k)) {
            let mean = self.blocks.get(&format!("{key}.running_mean"));
            let var = self.blocks.get(&format!("{key}.running_var"));
            match (mean, var) {
                (Some(m), Some(v)) => {
                    model.running.insert(
                        key,
                        RunningStats {
                            mean: m.data().to_vec(),
                            var: v.data().to_vec(),
                        },
                    );
                    loaded += 2;
                }
                _ => missing.push(format!("{key}.running_mean/var")),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingBlocks(missing));
        }
        Ok(loaded)
    }

    /// Restores optimizer state saved by [`Checkpoint::from_model`].
    pub fn adam_state(&self, config: AdamConfig) -> Option<AdamState<f32>> {
        let step = self.blocks.get("adam.step")?.data()[0] as u64;
        let mut state = AdamState::new(config);
        state.step = step;
        for (name, t) in &self.blocks {
            if let Some(p) = name.strip_prefix("adam.m/") {
                state.first_moment.insert(p.to_string(), t.data().to_vec());
            } else if let Some(p) = name.strip_prefix("adam.v/") {
                state.second_moment.insert(p.to_string(), t.data().to_vec());
            }
        }
        Some(state)
    }
}
