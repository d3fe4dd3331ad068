//! Binocular focal-stack samples with ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::procedural::StereoScene;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optics::lens::{coc_diameter, LensConfig, StereoRig};
use crate::optics::noise::add_poisson_noise;
use crate::optics::render::{draw_max_coc, plan_stack, render_stack, FocalStack, StackConfig};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub lens: LensConfig,
    pub stack: StackConfig,
    /// `None` disables shot noise.
    pub noise_peak: Option<f64>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            lens: LensConfig::default(),
            stack: StackConfig::default(),
            noise_peak: Some(crate::optics::noise::DEFAULT_PEAK),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub seed: u64,
    pub max_coc_px: f64,
    pub aperture_mm: f64,
    pub rig: StereoRig,
    pub noise_peak: Option<f64>,
    pub max_disparity_px: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub left: FocalStack,
    pub right: FocalStack,
    /// All-in-focus colour of each view.
    pub edof_left: Image,
    pub edof_right: Image,
    /// Normalized disparity of each view.
    pub disparity_left: Image,
    pub disparity_right: Image,
    pub meta: SampleMeta,
}

/// Renders both stacks with one shared blur draw and focus schedule, then
/// adds independent shot noise per slice.
pub fn build_sample(pair: &StereoScene, config: &SampleConfig, id: &str, seed: u64) -> Result<SamplePair> {
    let mut rng = stream(seed, 0);
    let max_coc = draw_max_coc(&mut rng, &config.stack);
    let plan = plan_stack(&pair.left.scene, &config.lens, max_coc, &config.stack)?;
    let mut left = render_stack(&pair.left.scene, &plan, seed)?;
    let mut right = render_stack(&pair.right.scene, &plan, seed)?;
    if let Some(peak) = config.noise_peak {
        for (eye, stack) in [&mut left, &mut right].into_iter().enumerate() {
            for (k, s) in stack.slices.iter_mut().enumerate() {
                let mut r = stream(derive_seed(seed, 1 + eye as u64), k as u64);
                *s = add_poisson_noise(s, peak, &mut r)?;
            }
            stack.noise_peak = Some(peak);
        }
    }
    // baseline so that d/c = l/D reproduces the pixel disparity at the far focus
    let layers = &plan.layer_depths_mm;
    let far_focus = plan.lens.focused_at(layers[0])?;
    let c_near = coc_diameter(&far_focus, layers[layers.len() - 1])?;
    let baseline = if c_near > 0.0 {
        pair.max_disparity_px as f64 * plan.lens.aperture_mm / c_near
    } else {
        plan.lens.aperture_mm
    };
    Ok(SamplePair {
        left,
        right,
        edof_left: pair.left.scene.color.clone(),
        edof_right: pair.right.scene.color.clone(),
        disparity_left: pair.left.scene.disparity.clone(),
        disparity_right: pair.right.scene.disparity.clone(),
        meta: SampleMeta {
            id: id.to_string(),
            seed,
            max_coc_px: max_coc,
            aperture_mm: plan.lens.aperture_mm,
            rig: StereoRig::new(baseline, plan.lens)?,
            noise_peak: config.noise_peak,
            max_disparity_px: pair.max_disparity_px,
        },
    })
}

pub const SAMPLE_FILES: [&str; 5] = ["edof_left.png", "edof_right.png", "disparity_left.pfm", "disparity_right.pfm", "meta.json"];

impl SamplePair {
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.left.write(&dir.join("left"))?;
        self.right.write(&dir.join("right"))?;
        self.edof_left.write_png(&dir.join("edof_left.png"))?;
        self.edof_right.write_png(&dir.join("edof_right.png"))?;
        self.disparity_left.write_pfm(&dir.join("disparity_left.pfm"))?;
        self.disparity_right.write_pfm(&dir.join("disparity_right.pfm"))?;
        let p = dir.join("meta.json");
        std::fs::write(&p, serde_json::to_vec_pretty(&self.meta)?).map_err(|e| Error::io(&p, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join("meta.json");
        let meta: SampleMeta = serde_json::from_slice(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)?;
        Ok(SamplePair {
            left: FocalStack::read(&dir.join("left"))?,
            right: FocalStack::read(&dir.join("right"))?,
            edof_left: Image::read_png(&dir.join("edof_left.png"))?,
            edof_right: Image::read_png(&dir.join("edof_right.png"))?,
            disparity_left: Image::read_pfm(&dir.join("disparity_left.pfm"))?,
            disparity_right: Image::read_pfm(&dir.join("disparity_right.pfm"))?,
            meta,
        })
    }
}
