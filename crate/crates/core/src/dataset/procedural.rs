//! Procedural rectified stereo scenes: textured fronto-parallel shapes over a
//! backdrop, with integer pixel disparities so both views are exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::optics::scene::{DepthRange, Scene};
use crate::rng::{splitmix, stream};

/// Largest supported pixel disparity between the two views.
pub const MAX_DISPARITY_LIMIT: u32 = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureSource {
    Noise,
    Checker,
    Gradient,
    #[default]
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub objects: usize,
    pub depth_range: DepthRange,
    /// Pixel shift between the views at normalized disparity 1.
    pub max_disparity_px: u32,
    pub texture: TextureSource,
    /// Backdrop disparity grows row by row instead of staying at zero.
    pub ramp_background: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            width: 192,
            height: 192,
            objects: 4,
            depth_range: DepthRange::default(),
            max_disparity_px: 24,
            texture: TextureSource::Mixed,
            ramp_background: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 || self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(Error::Config(format!(
                "scene size {}x{} must be a positive multiple of 8",
                self.width, self.height
            )));
        }
        if self.max_disparity_px == 0 || self.max_disparity_px > MAX_DISPARITY_LIMIT {
            return Err(Error::Config(format!(
                "max disparity {} px outside 1..={MAX_DISPARITY_LIMIT}",
                self.max_disparity_px
            )));
        }
        self.depth_range.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pattern {
    Noise { cell: f32 },
    Checker { cell: i64 },
    Gradient { dir: (f32, f32), span: f32 },
}

#[derive(Clone, Debug, PartialEq)]
struct Texture {
    seed: u64,
    pattern: Pattern,
    base: [f32; 3],
    alt: [f32; 3],
    grain: f32,
}

fn unit_hash(seed: u64, x: i64, y: i64) -> f32 {
    let h = splitmix(seed ^ splitmix((x as u64).wrapping_mul(0x9E37_79B9) ^ (y as u64).rotate_left(32)));
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn value_noise(seed: u64, x: i64, y: i64, cell: f32) -> f32 {
    let (fx, fy) = (x as f32 / cell, y as f32 / cell);
    let (x0, y0) = (fx.floor(), fy.floor());
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(fx - x0), smooth(fy - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v = |dx, dy| unit_hash(seed, ix + dx, iy + dy);
    let top = v(0, 0) * (1.0 - tx) + v(1, 0) * tx;
    let bottom = v(0, 1) * (1.0 - tx) + v(1, 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

impl Texture {
    fn random<R: Rng>(rng: &mut R, source: TextureSource) -> Self {
        let kind = match source {
            TextureSource::Mixed => [TextureSource::Noise, TextureSource::Checker, TextureSource::Gradient][rng.random_range(0..3)],
            s => s,
        };
        let pattern = match kind {
            TextureSource::Checker => Pattern::Checker {
                cell: rng.random_range(3..9),
            },
            TextureSource::Gradient => {
                let a: f32 = rng.random_range(0.0..std::f32::consts::TAU);
                Pattern::Gradient {
                    dir: (a.cos(), a.sin()),
                    span: rng.random_range(40.0..160.0),
                }
            }
            _ => Pattern::Noise {
                cell: rng.random_range(2.0..6.0),
            },
        };
        let base = [0; 3].map(|_| rng.random_range(0.1..0.9));
        let alt = base.map(|b: f32| if b > 0.5 { b - rng.random_range(0.3..0.5) } else { b + rng.random_range(0.3..0.5) });
        Texture {
            seed: rng.random(),
            pattern,
            base,
            alt,
            grain: if matches!(pattern, Pattern::Gradient { .. }) { 0.25 } else { 0.12 },
        }
    }

    fn eval(&self, x: i64, y: i64) -> [f32; 3] {
        let t = match self.pattern {
            Pattern::Noise { cell } => {
                0.5 * value_noise(self.seed, x, y, cell)
                    + 0.3 * value_noise(self.seed ^ 1, x, y, cell * 2.5)
                    + 0.2 * value_noise(self.seed ^ 2, x, y, cell * 6.0)
            }
            Pattern::Checker { cell } => ((x.div_euclid(cell) + y.div_euclid(cell)).rem_euclid(2)) as f32,
            Pattern::Gradient { dir, span } => ((x as f32 * dir.0 + y as f32 * dir.1) / span).rem_euclid(1.0),
        };
        let g = (unit_hash(self.seed ^ 0xabc, x, y) - 0.5) * self.grain;
        [0, 1, 2].map(|c| (self.base[c] + (self.alt[c] - self.base[c]) * t + g).clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Object {
    shape: Shape,
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
    disparity: u32,
    texture: Texture,
}

impl Object {
    fn contains(&self, x: i64, y: i64) -> bool {
        let (dx, dy) = ((x as f32 - self.cx) / self.rx, (y as f32 - self.cy) / self.ry);
        match self.shape {
            Shape::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            Shape::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

/// One view plus per-pixel surface labels (0 = backdrop, `j + 1` = object
/// `j`) and integer pixel disparities.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub scene: Scene,
    pub labels: Vec<u16>,
    pub disparity_px: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoScene {
    pub left: View,
    pub right: View,
    pub max_disparity_px: u32,
}

struct Layout {
    objects: Vec<Object>,
    backdrop: Texture,
    ramp_max: u32,
    height: usize,
}

impl Layout {
    fn backdrop_disparity(&self, y: i64) -> u32 {
        (self.ramp_max as u64 * y as u64 / self.height as u64) as u32
    }

    /// Visible surface at left-view coordinates, or, for the right view, at
    /// right-view coordinates shifted by each surface's own disparity.
    fn hit(&self, x: i64, y: i64, right: bool) -> (u16, u32, [f32; 3]) {
        for (j, o) in self.objects.iter().enumerate() {
            let xl = if right { x + o.disparity as i64 } else { x };
            if o.contains(xl, y) {
                return (j as u16 + 1, o.disparity, o.texture.eval(xl, y));
            }
        }
        let d = self.backdrop_disparity(y);
        let xl = if right { x + d as i64 } else { x };
        (0, d, self.backdrop.eval(xl, y))
    }
}

/// Left and right views of a random scene. The nearest object sits at the
/// full pixel disparity and the backdrop reaches zero, so normalized
/// disparity spans [0, 1].
pub fn gen_scene(spec: &SceneSpec) -> Result<StereoScene> {
    spec.validate()?;
    let mut rng = stream(spec.seed, 0x5ce7e);
    let (w, h) = (spec.width, spec.height);
    let max = spec.max_disparity_px;
    let ramp_max = if spec.ramp_background && max > 4 { rng.random_range(0..=max / 4) } else { 0 };
    if spec.objects == 0 {
        log::warn!("scene {} has no objects; backdrop only", spec.seed);
    }
    let mut objects: Vec<Object> = (0..spec.objects)
        .map(|j| {
            let disparity = if j == 0 || ramp_max + 1 >= max { max } else { rng.random_range(ramp_max + 1..=max) };
            let shape = if rng.random_bool(0.5) { Shape::Rect } else { Shape::Ellipse };
            Object {
                shape,
                cx: rng.random_range(0.1..0.9) * w as f32,
                cy: rng.random_range(0.1..0.9) * h as f32,
                rx: rng.random_range(0.08..0.25) * w as f32,
                ry: rng.random_range(0.08..0.25) * h as f32,
                disparity,
                texture: Texture::random(&mut rng, spec.texture),
            }
        })
        .collect();
    // the nearest object must stay visible in the left view
    if let Some(o) = objects.first_mut() {
        o.rx = o.rx.max(0.12 * w as f32);
        o.ry = o.ry.max(0.12 * h as f32);
    }
    objects.sort_by(|a, b| b.disparity.cmp(&a.disparity));
    let layout = Layout {
        objects,
        backdrop: Texture::random(&mut rng, spec.texture),
        ramp_max,
        height: h,
    };

    let view = |right: bool| -> Result<View> {
        let mut color = Image::new(w, h, 3);
        let mut labels = Vec::with_capacity(w * h);
        let mut disparity_px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (label, d, c) = layout.hit(x as i64, y as i64, right);
                for (k, v) in c.iter().enumerate() {
                    color.set(x, y, k, *v);
                }
                labels.push(label);
                disparity_px.push(d);
            }
        }
        let norm = Image::from_vec(w, h, 1, disparity_px.iter().map(|&d| d as f32 / max as f32).collect())?;
        Ok(View {
            scene: Scene::from_disparity(color, norm, &spec.depth_range)?,
            labels,
            disparity_px,
        })
    };
    Ok(StereoScene {
        left: view(false)?,
        right: view(true)?,
        max_disparity_px: max,
    })
}
