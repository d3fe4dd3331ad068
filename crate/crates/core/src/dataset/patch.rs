//! In-memory samples, training patches and augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::manifest::{Manifest, Split};
use crate::dataset::sample::SamplePair;
use crate::error::{Error, Result};
use crate::image::Image;

/// Compact planar copy of a sample: stacks as bytes (as stored on disk),
/// everything else as floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub slices: usize,
    pub max_disparity_px: u32,
    /// `slices·3` planes per eye.
    pub stack: [Vec<u8>; 2],
    pub edof: [Vec<f32>; 2],
    pub disparity: [Vec<f32>; 2],
    /// EDoF network predictions, filled in between training stages.
    pub edof_pred: Option<[Vec<f32>; 2]>,
}

fn stack_bytes(stack: &crate::optics::render::FocalStack) -> Vec<u8> {
    stack.slices.iter().flat_map(|s| Image::to_planar(s)).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

impl Sample {
    pub fn from_pair(pair: &SamplePair) -> Self {
        Sample {
            id: pair.meta.id.clone(),
            width: pair.edof_left.width(),
            height: pair.edof_left.height(),
            slices: pair.left.len(),
            max_disparity_px: pair.meta.max_disparity_px,
            stack: [stack_bytes(&pair.left), stack_bytes(&pair.right)],
            edof: [pair.edof_left.to_planar(), pair.edof_right.to_planar()],
            disparity: [pair.disparity_left.to_planar(), pair.disparity_right.to_planar()],
            edof_pred: None,
        }
    }

    pub fn stack_channels(&self) -> usize {
        self.slices * 3
    }

    pub fn stack_f32(&self, eye: usize) -> Vec<f32> {
        self.stack[eye].iter().map(|&b| b as f32 / 255.0).collect()
    }

    /// Crops the bottom/right so both extents are multiples of 8.
    pub fn crop_to_multiple_of_8(&self) -> Result<Sample> {
        let (w, h) = (multiple_of_8(self.width)?, multiple_of_8(self.height)?);
        if (w, h) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let cp = |buf: &[f32], c: usize| crop_planar(buf, c, self.width, self.height, 0, 0, w, h);
        let cpb = |buf: &[u8], c: usize| crop_planar(buf, c, self.width, self.height, 0, 0, w, h);
        let sc = self.stack_channels();
        Ok(Sample {
            id: self.id.clone(),
            width: w,
            height: h,
            slices: self.slices,
            max_disparity_px: self.max_disparity_px,
            stack: [cpb(&self.stack[0], sc), cpb(&self.stack[1], sc)],
            edof: [cp(&self.edof[0], 3), cp(&self.edof[1], 3)],
            disparity: [cp(&self.disparity[0], 1), cp(&self.disparity[1], 1)],
            edof_pred: self.edof_pred.as_ref().map(|p| [cp(&p[0], 3), cp(&p[1], 3)]),
        })
    }
}

fn multiple_of_8(n: usize) -> Result<usize> {
    if n < 8 {
        return Err(Error::Shape(format!("extent {n} is below 8")));
    }
    Ok(n - n % 8)
}

/// Bottom/right crop of an image to multiples of 8.
pub fn crop_to_multiple_of_8(image: &Image) -> Result<Image> {
    let (w, h) = (multiple_of_8(image.width())?, multiple_of_8(image.height())?);
    image.crop(0, 0, w, h)
}

#[allow(clippy::too_many_arguments)]
pub fn crop_planar<T: Copy>(buf: &[T], c: usize, w: usize, h: usize, x0: usize, y0: usize, pw: usize, ph: usize) -> Vec<T> {
    debug_assert_eq!(buf.len(), c * w * h);
    let mut out = Vec::with_capacity(c * pw * ph);
    for ch in 0..c {
        for y in y0..y0 + ph {
            let row = ch * w * h + y * w + x0;
            out.extend_from_slice(&buf[row..row + pw]);
        }
    }
    out
}

pub fn flip_planar_h<T>(buf: &mut [T], w: usize) {
    for row in buf.chunks_exact_mut(w) {
        row.reverse();
    }
}

pub fn flip_planar_v<T>(buf: &mut [T], w: usize, h: usize) {
    for plane in buf.chunks_exact_mut(w * h) {
        for y in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchTarget {
    /// One eye's stack with its ground truth.
    Focus,
    /// Both eyes cropped at identical coordinates.
    Stereo,
}

/// Crop position and augmentation of one patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub x0: usize,
    pub y0: usize,
    /// Eye used as "left" (focus target: the only eye).
    pub eye: usize,
    pub flip_h: bool,
    pub flip_v: bool,
}

/// Planar patch; index 0 is the (possibly swapped) left eye. Stereo-only
/// fields are empty for focus patches.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub stack: Vec<Vec<f32>>,
    pub edof: Vec<Vec<f32>>,
    pub disparity: Vec<Vec<f32>>,
    pub edof_pred: Vec<Vec<f32>>,
}

pub fn random_placement<R: Rng + ?Sized>(sample: &Sample, target: PatchTarget, size: usize, augment: bool, rng: &mut R) -> Result<Placement> {
    if size > sample.width || size > sample.height {
        return Err(Error::Shape(format!(
            "patch {size}x{size} larger than image {}x{}",
            sample.width, sample.height
        )));
    }
    let x0 = rng.random_range(0..=sample.width - size);
    let y0 = rng.random_range(0..=sample.height - size);
    let eye = match target {
        PatchTarget::Focus => rng.random_range(0..2),
        PatchTarget::Stereo => 0,
    };
    let (flip_h, flip_v) = if augment { (rng.random_bool(0.5), rng.random_bool(0.5)) } else { (false, false) };
    Ok(Placement {
        x0,
        y0,
        eye,
        flip_h,
        flip_v,
    })
}

/// Cuts a patch. A horizontal flip of a stereo patch mirrors both views and
/// swaps the eyes so that disparities keep their sign.
pub fn extract_patch(sample: &Sample, target: PatchTarget, size: usize, at: &Placement) -> Result<Patch> {
    if at.x0 + size > sample.width || at.y0 + size > sample.height {
        return Err(Error::Shape(format!(
            "patch {size}x{size} at ({}, {}) exceeds image {}x{}",
            at.x0, at.y0, sample.width, sample.height
        )));
    }
    let (w, h) = (sample.width, sample.height);
    let eyes: Vec<usize> = match target {
        PatchTarget::Focus => vec![at.eye],
        PatchTarget::Stereo if at.flip_h => vec![1, 0],
        PatchTarget::Stereo => vec![0, 1],
    };
    let finish = |mut buf: Vec<f32>| {
        if at.flip_h {
            flip_planar_h(&mut buf, size);
        }
        if at.flip_v {
            flip_planar_v(&mut buf, size, size);
        }
        buf
    };
    let crop = |buf: &[f32], c: usize| finish(crop_planar(buf, c, w, h, at.x0, at.y0, size, size));
    let sc = sample.stack_channels();
    let stack = eyes
        .iter()
        .map(|&e| {
            let bytes = crop_planar(&sample.stack[e], sc, w, h, at.x0, at.y0, size, size);
            finish(bytes.into_iter().map(|b| b as f32 / 255.0).collect())
        })
        .collect();
    Ok(Patch {
        size,
        stack,
        edof: eyes.iter().map(|&e| crop(&sample.edof[e], 3)).collect(),
        disparity: eyes.iter().map(|&e| crop(&sample.disparity[e], 1)).collect(),
        edof_pred: match &sample.edof_pred {
            Some(p) => eyes.iter().map(|&e| crop(&p[e], 3)).collect(),
            None => vec![],
        },
    })
}

pub fn sample_patch<R: Rng + ?Sized>(sample: &Sample, target: PatchTarget, size: usize, rng: &mut R) -> Result<Patch> {
    let at = random_placement(sample, target, size, true, rng)?;
    extract_patch(sample, target, size, &at)
}

/// Loads one split of a manifest into memory.
pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<Sample>> {
    let ids = match split {
        Split::Train => &manifest.train,
        Split::Test => &manifest.test,
    };
    use rayon::prelude::*;
    ids.par_iter()
        .map(|id| Ok(Sample::from_pair(&SamplePair::read(&manifest.sample_dir(id)?)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::procedural::{gen_scene, SceneSpec};
    use crate::dataset::sample::{build_sample, SampleConfig};
    use crate::rng::stream;
    use proptest::prelude::*;

    fn sample() -> Sample {
        let pair = gen_scene(&SceneSpec {
            seed: 21,
            width: 64,
            height: 48,
            ..Default::default()
        })
        .unwrap();
        let cfg = SampleConfig {
            noise_peak: None,
            ..Default::default()
        };
        Sample::from_pair(&build_sample(&pair, &cfg, "s", 1).unwrap())
    }

    #[test]
    fn crop_examples() {
        assert_eq!(crop_to_multiple_of_8(&Image::new(960, 540, 3)).unwrap().height(), 536);
        assert_eq!(crop_to_multiple_of_8(&Image::new(960, 540, 3)).unwrap().width(), 960);
        let c = crop_to_multiple_of_8(&Image::new(64, 64, 1)).unwrap();
        assert_eq!((c.width(), c.height()), (64, 64));
        let c = crop_to_multiple_of_8(&Image::new(9, 9, 1)).unwrap();
        assert_eq!((c.width(), c.height()), (8, 8));
        assert!(crop_to_multiple_of_8(&Image::new(7, 9, 1)).is_err());
    }

    #[test]
    fn focus_patch_shape() {
        let s = sample();
        let p = sample_patch(&s, PatchTarget::Focus, 32, &mut stream(0, 0)).unwrap();
        assert_eq!(p.stack.len(), 1);
        assert_eq!(p.stack[0].len(), 48 * 32 * 32);
        assert_eq!(p.disparity[0].len(), 32 * 32);
        assert!(p.stack[0].iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn oversized_patch_is_an_error() {
        assert!(sample_patch(&sample(), PatchTarget::Stereo, 64, &mut stream(0, 0)).is_err());
    }

    #[test]
    fn placement_is_reproducible() {
        let s = sample();
        let a = random_placement(&s, PatchTarget::Stereo, 16, true, &mut stream(3, 0)).unwrap();
        let b = random_placement(&s, PatchTarget::Stereo, 16, true, &mut stream(3, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stereo_flip_keeps_photo_consistency() {
        let s = sample();
        let size = 48;
        for flip_h in [false, true] {
            let at = Placement {
                x0: 8,
                y0: 0,
                eye: 0,
                flip_h,
                flip_v: true,
            };
            let p = extract_patch(&s, PatchTarget::Stereo, size, &at).unwrap();
            let mut matched = 0;
            for y in 0..size {
                for x in 0..size {
                    let d = (p.disparity[0][y * size + x] * s.max_disparity_px as f32).round() as usize;
                    if x < d {
                        continue;
                    }
                    let q = y * size + x - d;
                    if (p.disparity[1][q] * s.max_disparity_px as f32).round() as usize != d {
                        continue;
                    }
                    let agree = (0..3).all(|c| {
                        let plane = c * size * size;
                        (p.edof[0][plane + y * size + x] - p.edof[1][plane + q]).abs() < 1e-6
                    });
                    matched += agree as usize;
                }
            }
            assert!(matched > size * size / 2, "flip_h={flip_h}: {matched}");
        }
    }

    #[test]
    fn stereo_hflip_swaps_eyes() {
        let s = sample();
        let at = Placement {
            x0: 0,
            y0: 0,
            eye: 0,
            flip_h: true,
            flip_v: false,
        };
        let p = extract_patch(&s, PatchTarget::Stereo, 32, &at).unwrap();
        // new left at column 0 is the old right at column 31
        assert_eq!(p.edof[0][0], s.edof[1][31]);
    }

    proptest! {
        #[test]
        fn double_flip_is_identity(w in 1usize..9, h in 1usize..9, c in 1usize..3) {
            let orig: Vec<u32> = (0..(w * h * c) as u32).collect();
            let mut b = orig.clone();
            flip_planar_h(&mut b, w);
            flip_planar_h(&mut b, w);
            prop_assert_eq!(&b, &orig);
            flip_planar_v(&mut b, w, h);
            flip_planar_v(&mut b, w, h);
            prop_assert_eq!(&b, &orig);
        }
    }
}
