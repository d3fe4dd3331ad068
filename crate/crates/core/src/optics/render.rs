//! Layered, occlusion-aware defocus rendering.
//!
//! The scene is split into depth layers. For each focal slice every layer's
//! premultiplied colour and coverage are spread by that layer's disc kernel,
//! then layers are composited back to front and the result is divided by the
//! accumulated coverage.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::optics::lens::{coc_diameter, LensConfig};
use crate::optics::psf::disc_psf;
use crate::optics::scene::Scene;
use crate::optics::{DEFAULT_LAYERS, MAX_COC_PX};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpacing {
    /// Evenly spaced in inverse depth.
    #[default]
    Disparity,
    Depth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub layers: usize,
    pub spacing: LayerSpacing,
    /// Hard cap on any rendered blur diameter.
    pub max_coc_px: f64,
    /// Range of the per-scene draw of the largest blur diameter.
    pub coc_draw_min_px: f64,
    pub coc_draw_max_px: f64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            layers: DEFAULT_LAYERS,
            spacing: LayerSpacing::Disparity,
            max_coc_px: MAX_COC_PX,
            coc_draw_min_px: 7.0,
            coc_draw_max_px: MAX_COC_PX,
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::Config(format!("need at least 2 layers, got {}", self.layers)));
        }
        if !(self.max_coc_px > 0.0 && self.max_coc_px <= MAX_COC_PX) {
            return Err(Error::Config(format!(
                "blur cap {} px outside (0, {MAX_COC_PX}]",
                self.max_coc_px
            )));
        }
        if !(0.0 <= self.coc_draw_min_px
            && self.coc_draw_min_px <= self.coc_draw_max_px
            && self.coc_draw_max_px <= self.max_coc_px)
        {
            return Err(Error::Config(format!(
                "blur draw range [{}, {}] must lie within [0, {}]",
                self.coc_draw_min_px, self.coc_draw_max_px, self.max_coc_px
            )));
        }
        Ok(())
    }
}

/// `n` focus distances, far to near, spanning the scene's depth extent.
pub fn depth_layers(scene: &Scene, n: usize) -> Result<Vec<f64>> {
    depth_layers_with(scene, n, LayerSpacing::Disparity)
}

pub fn depth_layers_with(scene: &Scene, n: usize, spacing: LayerSpacing) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 depth layers, got {n}")));
    }
    let (near, far) = scene.depth_extent();
    if near == far {
        log::warn!("constant-depth scene: all {n} layers at {near} mm");
        return Ok(vec![near; n]);
    }
    Ok((0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            match spacing {
                LayerSpacing::Disparity => 1.0 / (1.0 / far + t * (1.0 / near - 1.0 / far)),
                LayerSpacing::Depth => far + t * (near - far),
            }
        })
        .collect())
}

/// Index of the layer nearest in inverse depth to each pixel (ties go to the
/// farther layer).
pub fn assign_layers(scene: &Scene, layer_depths: &[f64]) -> Vec<usize> {
    let inv: Vec<f64> = layer_depths.iter().map(|z| 1.0 / z).collect();
    scene
        .depth
        .data()
        .iter()
        .map(|&z| {
            let q = 1.0 / z as f64;
            let mut best = 0;
            for (i, v) in inv.iter().enumerate() {
                if (v - q).abs() < (inv[best] - q).abs() {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// Accumulated coverage before renormalization.
    pub alpha: Image,
    /// Pixels whose blur diameter exceeded the cap.
    pub clamped: usize,
}

/// Refocuses `scene` at `focus_depth` with the default 16 disparity layers and
/// the 31 px cap.
pub fn render_refocused(scene: &Scene, lens: &LensConfig, focus_depth: f64) -> Result<Image> {
    let layers = depth_layers(scene, DEFAULT_LAYERS)?;
    Ok(render_layers(scene, lens, focus_depth, &layers, MAX_COC_PX)?.image)
}

/// Blur diameter of each layer when the lens is focused at `focus_depth`.
pub fn layer_cocs(lens: &LensConfig, focus_depth: f64, layer_depths: &[f64]) -> Result<Vec<f64>> {
    let focused = lens.focused_at(focus_depth)?;
    layer_depths.iter().map(|&z| coc_diameter(&focused, z)).collect()
}

pub fn render_layers(
    scene: &Scene,
    lens: &LensConfig,
    focus_depth: f64,
    layer_depths: &[f64],
    max_coc_px: f64,
) -> Result<RenderOutput> {
    let assignment = assign_layers(scene, layer_depths);
    let members = group(&assignment, layer_depths.len());
    composite(scene, &members, &layer_cocs(lens, focus_depth, layer_depths)?, max_coc_px)
}

fn group(assignment: &[usize], n: usize) -> Vec<Vec<u32>> {
    let mut members = vec![vec![]; n];
    for (p, &l) in assignment.iter().enumerate() {
        members[l].push(p as u32);
    }
    members
}

fn composite(scene: &Scene, members: &[Vec<u32>], cocs: &[f64], max_coc_px: f64) -> Result<RenderOutput> {
    let (w, h) = (scene.width(), scene.height());
    let color = scene.color.data();
    let mut out = vec![0.0f32; w * h * 3];
    let mut trans = vec![1.0f32; w * h];
    let mut buf = vec![0.0f32; w * h * 4];
    let mut clamped = 0;
    for (layer, pixels) in members.iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let mut coc = cocs[layer];
        if coc > max_coc_px {
            clamped += pixels.len();
            coc = max_coc_px;
        }
        let spans = disc_psf(coc)?.row_spans();
        buf.fill(0.0);
        for &p in pixels {
            let p = p as usize;
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            let c = [color[3 * p], color[3 * p + 1], color[3 * p + 2], 1.0];
            for (dy, dx0, ws) in &spans {
                let yy = y + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let x0 = x + dx0;
                let skip = (-x0).max(0) as usize;
                let end = ((w as isize - x0).max(0) as usize).min(ws.len());
                if skip >= end {
                    continue;
                }
                let base = (yy as usize * w + (x0 + skip as isize) as usize) * 4;
                let dst = &mut buf[base..base + (end - skip) * 4];
                for (d, &wt) in dst.chunks_exact_mut(4).zip(&ws[skip..end]) {
                    d[0] += wt * c[0];
                    d[1] += wt * c[1];
                    d[2] += wt * c[2];
                    d[3] += wt;
                }
            }
        }
        for i in 0..w * h {
            let b = &buf[4 * i..4 * i + 4];
            let a = b[3].min(1.0);
            if a <= 0.0 {
                continue;
            }
            let o = &mut out[3 * i..3 * i + 3];
            o[0] = o[0] * (1.0 - a) + b[0];
            o[1] = o[1] * (1.0 - a) + b[1];
            o[2] = o[2] * (1.0 - a) + b[2];
            trans[i] *= 1.0 - a;
        }
    }
    if clamped > 0 {
        log::info!("{clamped} pixels clamped to the {max_coc_px} px blur cap");
    }
    let alpha: Vec<f32> = trans.iter().map(|t| 1.0 - t).collect();
    for (o, &a) in out.chunks_exact_mut(3).zip(&alpha) {
        if a > 0.0 {
            o.iter_mut().for_each(|v| *v = (*v / a).clamp(0.0, 1.0));
        }
    }
    Ok(RenderOutput {
        image: Image::from_vec(w, h, 3, out)?,
        alpha: Image::from_vec(w, h, 1, alpha)?,
        clamped,
    })
}

/// Everything needed to render matching stacks for both eyes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackPlan {
    /// Far to near; slice `k` focuses at layer `k`.
    pub layer_depths_mm: Vec<f64>,
    /// Lens with the aperture scaled to the drawn blur.
    pub lens: LensConfig,
    pub max_coc_px: f64,
    pub cap_px: f64,
}

/// Uniform draw of the scene's largest blur diameter.
pub fn draw_max_coc<R: Rng + ?Sized>(rng: &mut R, config: &StackConfig) -> f64 {
    if config.coc_draw_max_px > config.coc_draw_min_px {
        rng.random_range(config.coc_draw_min_px..=config.coc_draw_max_px)
    } else {
        config.coc_draw_min_px
    }
}

/// Layers from `scene` and an aperture so that the largest blur over all
/// slices and layers equals `max_coc_px`.
pub fn plan_stack(scene: &Scene, lens: &LensConfig, max_coc_px: f64, config: &StackConfig) -> Result<StackPlan> {
    config.validate()?;
    let layers = depth_layers_with(scene, config.layers, config.spacing)?;
    plan_layers(layers, lens, max_coc_px, config)
}

/// As [`plan_stack`] for explicitly given layer depths (far to near).
pub fn plan_layers(layers: Vec<f64>, lens: &LensConfig, max_coc_px: f64, config: &StackConfig) -> Result<StackPlan> {
    config.validate()?;
    lens.validate()?;
    if !(max_coc_px >= 0.0 && max_coc_px <= config.max_coc_px) {
        return Err(Error::Config(format!(
            "requested blur {max_coc_px} px exceeds the {} px cap",
            config.max_coc_px
        )));
    }
    if layers.is_empty() {
        return Err(Error::Config("no depth layers".into()));
    }
    let unit = lens.with_aperture(1.0)?;
    let mut worst = 0.0f64;
    for &zf in &layers {
        for c in layer_cocs(&unit, zf, &layers)? {
            worst = worst.max(c);
        }
    }
    let lens = if worst > 0.0 && max_coc_px > 0.0 {
        lens.with_aperture(max_coc_px / worst)?
    } else {
        *lens
    };
    Ok(StackPlan {
        layer_depths_mm: layers,
        lens,
        max_coc_px,
        cap_px: config.max_coc_px,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FocalStack {
    pub slices: Vec<Image>,
    pub focus_depths: Vec<f64>,
    pub max_coc_px: f64,
    pub lens: LensConfig,
    pub noise_peak: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StackSidecar {
    slices: Vec<String>,
    focus_depths_mm: Vec<f64>,
    max_coc_px: f64,
    lens: LensConfig,
    noise_peak: Option<f64>,
    seed: u64,
}

pub const SIDECAR: &str = "stack.json";

impl FocalStack {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn width(&self) -> usize {
        self.slices[0].width()
    }

    pub fn height(&self) -> usize {
        self.slices[0].height()
    }

    /// Slices stacked along channels: slice-major, then RGB, then rows.
    pub fn to_planar(&self) -> Vec<f32> {
        self.slices.iter().flat_map(|s| s.to_planar()).collect()
    }

    /// Writes `slice_XX.png` files and the JSON sidecar into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names = vec![];
        for (i, s) in self.slices.iter().enumerate() {
            let name = format!("slice_{i:02}.png");
            s.write_png(&dir.join(&name))?;
            names.push(name);
        }
        let side = StackSidecar {
            slices: names,
            focus_depths_mm: self.focus_depths.clone(),
            max_coc_px: self.max_coc_px,
            lens: self.lens,
            noise_peak: self.noise_peak,
            seed: self.seed,
        };
        let path = dir.join(SIDECAR);
        std::fs::write(&path, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SIDECAR);
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let side: StackSidecar = serde_json::from_slice(&text)?;
        let slices = side
            .slices
            .iter()
            .map(|n| Image::read_png(&dir.join(n)))
            .collect::<Result<Vec<_>>>()?;
        if slices.len() != side.focus_depths_mm.len() {
            return Err(Error::Format {
                path,
                reason: "slice count does not match focus depths".into(),
            });
        }
        Ok(FocalStack {
            slices,
            focus_depths: side.focus_depths_mm,
            max_coc_px: side.max_coc_px,
            lens: side.lens,
            noise_peak: side.noise_peak,
            seed: side.seed,
        })
    }

    pub fn slice_paths(dir: &Path, n: usize) -> Vec<PathBuf> {
        (0..n).map(|i| dir.join(format!("slice_{i:02}.png"))).collect()
    }
}

/// Renders one slice per planned layer.
pub fn render_stack(scene: &Scene, plan: &StackPlan, seed: u64) -> Result<FocalStack> {
    let layers = &plan.layer_depths_mm;
    let members = group(&assign_layers(scene, layers), layers.len());
    let slices = layers
        .par_iter()
        .map(|&zf| {
            let cocs = layer_cocs(&plan.lens, zf, layers)?;
            Ok(composite(scene, &members, &cocs, plan.cap_px)?.image)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FocalStack {
        slices,
        focus_depths: layers.clone(),
        max_coc_px: plan.max_coc_px,
        lens: plan.lens,
        noise_peak: None,
        seed,
    })
}

/// Default 16-slice stack with the largest blur drawn once from `rng`.
pub fn synth_focal_stack<R: Rng + ?Sized>(scene: &Scene, lens: &LensConfig, rng: &mut R) -> Result<FocalStack> {
    let config = StackConfig::default();
    let seed = rng.next_u64();
    let c = draw_max_coc(rng, &config);
    render_stack(scene, &plan_stack(scene, lens, c, &config)?, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::scene::DepthRange;
    use crate::rng::stream;

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| {
            let v = ((x * 37 + y * 91 + c * 13) ^ (x * y)) % 17;
            v as f32 / 16.0
        })
    }

    fn two_plane(w: usize, h: usize, color: Image) -> Scene {
        let disp = Image::from_fn(w, h, 1, |x, y, _| {
            if (w / 4..3 * w / 4).contains(&x) && (h / 4..3 * h / 4).contains(&y) {
                1.0
            } else {
                0.0
            }
        });
        Scene::from_disparity(color, disp, &DepthRange::default()).unwrap()
    }

    #[test]
    fn layers_even_in_disparity() {
        let scene = two_plane(16, 16, Image::filled(16, 16, 3, 0.5));
        let layers = depth_layers(&scene, 16).unwrap();
        let r = DepthRange::default();
        for (i, z) in layers.iter().enumerate() {
            assert!((r.disparity_of(*z) - i as f64 / 15.0).abs() < 1e-9);
        }
        let two = depth_layers(&scene, 2).unwrap();
        assert!((two[0] - r.far_mm).abs() < 1e-6 && (two[1] - r.near_mm).abs() < 1e-6);
        assert!(depth_layers(&scene, 1).is_err());
    }

    #[test]
    fn constant_depth_replicates_layer() {
        let scene = Scene::from_disparity(
            Image::filled(8, 8, 3, 0.2),
            Image::filled(8, 8, 1, 0.4),
            &DepthRange::default(),
        )
        .unwrap();
        let l = depth_layers(&scene, 16).unwrap();
        assert_eq!(l.len(), 16);
        assert!(l.iter().all(|z| *z == l[0]));
    }

    #[test]
    fn in_focus_plane_passes_through() {
        let color = textured(24, 20);
        let scene = Scene::from_disparity(color.clone(), Image::filled(24, 20, 1, 0.3), &DepthRange::default()).unwrap();
        let z = scene.depth.get(0, 0, 0) as f64;
        let out = render_refocused(&scene, &LensConfig::default(), z).unwrap();
        assert_eq!(out, color);
    }

    #[test]
    fn constant_colour_is_conserved_at_every_slice() {
        let scene = two_plane(40, 40, Image::filled(40, 40, 3, 0.7));
        let plan = plan_stack(&scene, &LensConfig::default(), 31.0, &StackConfig::default()).unwrap();
        let stack = render_stack(&scene, &plan, 0).unwrap();
        for s in &stack.slices {
            for v in s.data() {
                assert!((v - 0.7).abs() < 1e-4, "{v}");
            }
        }
    }

    #[test]
    fn foreground_over_focused_background_has_no_halo() {
        let (w, h) = (48, 48);
        let color = Image::from_fn(w, h, 3, |x, y, _| {
            if (w / 4..3 * w / 4).contains(&x) && (h / 4..3 * h / 4).contains(&y) {
                1.0
            } else {
                0.2
            }
        });
        let scene = two_plane(w, h, color);
        let plan = plan_stack(&scene, &LensConfig::default(), 21.0, &StackConfig::default()).unwrap();
        let far = plan.layer_depths_mm[0];
        let out = render_layers(&scene, &plan.lens, far, &plan.layer_depths_mm, 31.0).unwrap();
        // normalized compositing weights sum to one: a white scene stays white
        let white = Scene::new(Image::filled(w, h, 3, 1.0), scene.depth.clone(), scene.disparity.clone()).unwrap();
        let total = render_layers(&white, &plan.lens, far, &plan.layer_depths_mm, 31.0).unwrap();
        for v in total.image.data() {
            assert!((v - 1.0).abs() < 1e-4, "{v}");
        }
        assert!(out.alpha.data().iter().all(|&a| a > 0.0));
        for v in out.image.data() {
            assert!((0.2 - 1e-4..=1.0 + 1e-4).contains(v), "{v}");
        }
        // the blurred foreground spreads over the background ring
        assert!(out.image.get(w / 4 - 3, h / 2, 0) > 0.25);
    }

    #[test]
    fn focused_slice_is_sharpest() {
        let (w, h) = (32, 32);
        let scene = Scene::from_disparity(textured(w, h), Image::filled(w, h, 1, 0.0), &DepthRange::default()).unwrap();
        // constant disparity would collapse the layers, so span the range with one near pixel
        let mut disp = scene.disparity.clone();
        disp.set(0, 0, 0, 1.0);
        let scene = Scene::from_disparity(scene.color, disp, &DepthRange::default()).unwrap();
        let plan = plan_stack(&scene, &LensConfig::default(), 31.0, &StackConfig::default()).unwrap();
        let stack = render_stack(&scene, &plan, 0).unwrap();
        let variance = |img: &Image| {
            let g = img.to_gray();
            let inner: Vec<f64> = (8..24)
                .flat_map(|y| (8..24).map(move |x| (x, y)))
                .map(|(x, y)| g.get(x, y, 0) as f64)
                .collect();
            let m = inner.iter().sum::<f64>() / inner.len() as f64;
            inner.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        };
        let v0 = variance(&stack.slices[0]);
        for s in &stack.slices[1..] {
            assert!(v0 > variance(s));
        }
    }

    #[test]
    fn stack_is_deterministic_and_capped() {
        let scene = two_plane(32, 32, textured(32, 32));
        let a = synth_focal_stack(&scene, &LensConfig::default(), &mut stream(5, 0)).unwrap();
        let b = synth_focal_stack(&scene, &LensConfig::default(), &mut stream(5, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
        assert!(a.max_coc_px <= 31.0 && a.max_coc_px >= 7.0);
        let mut worst = 0.0f64;
        for &zf in &a.focus_depths {
            for c in layer_cocs(&a.lens, zf, &a.focus_depths).unwrap() {
                worst = worst.max(c);
            }
        }
        assert!((worst - a.max_coc_px).abs() < 1e-9);
    }

    #[test]
    fn cap_above_31_is_a_config_error() {
        let cfg = StackConfig {
            max_coc_px: 40.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = two_plane(16, 16, textured(16, 16));
        let stack = synth_focal_stack(&scene, &LensConfig::default(), &mut stream(6, 0)).unwrap();
        stack.write(dir.path()).unwrap();
        let back = FocalStack::read(dir.path()).unwrap();
        assert_eq!(back.focus_depths, stack.focus_depths);
        assert_eq!(back.lens, stack.lens);
        for (a, b) in back.slices.iter().zip(&stack.slices) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
        }
    }
}
