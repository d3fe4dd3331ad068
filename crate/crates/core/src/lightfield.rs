//! Shift-and-add refocusing of 4-D light fields and a classical
//! depth-from-focus baseline.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::optics::{FocalStack, LensConfig};

/// `U×V` sub-aperture images; view `(u, v)` is stored at `v·U + u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LightField {
    pub u: usize,
    pub v: usize,
    pub views: Vec<Image>,
    /// Physical baseline between neighbouring views, in millimetres.
    pub baseline_mm: f64,
}

pub const DESCRIPTOR: &str = "lightfield.json";

/// On-disk layout of a decoded light field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightFieldDescriptor {
    pub grid: [usize; 2],
    pub baseline_mm: f64,
    /// File name pattern with `{u}` and `{v}` placeholders.
    pub pattern: String,
}

impl Default for LightFieldDescriptor {
    fn default() -> Self {
        LightFieldDescriptor {
            grid: [1, 1],
            baseline_mm: 1.0,
            pattern: "view_{v}_{u}.png".into(),
        }
    }
}

impl LightFieldDescriptor {
    pub fn file_name(&self, u: usize, v: usize) -> String {
        self.pattern.replace("{u}", &u.to_string()).replace("{v}", &v.to_string())
    }
}

impl LightField {
    pub fn new(u: usize, v: usize, views: Vec<Image>, baseline_mm: f64) -> Result<Self> {
        if u == 0 || v == 0 {
            return Err(Error::Usage("empty light field".into()));
        }
        if views.len() != u * v {
            return Err(Error::Shape(format!("{u}x{v} grid needs {} views, got {}", u * v, views.len())));
        }
        let (w, h, c) = (views[0].width(), views[0].height(), views[0].channels());
        if w == 0 || h == 0 {
            return Err(Error::Usage("empty light field".into()));
        }
        if let Some(bad) = views.iter().position(|im| (im.width(), im.height(), im.channels()) != (w, h, c)) {
            return Err(Error::Shape(format!(
                "view {bad} is {}x{}x{}, expected {w}x{h}x{c}",
                views[bad].width(),
                views[bad].height(),
                views[bad].channels()
            )));
        }
        Ok(LightField { u, v, views, baseline_mm })
    }

    pub fn view(&self, u: usize, v: usize) -> &Image {
        &self.views[v * self.u + u]
    }

    pub fn width(&self) -> usize {
        self.views[0].width()
    }

    pub fn height(&self) -> usize {
        self.views[0].height()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DESCRIPTOR);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let desc: LightFieldDescriptor = serde_json::from_str(&text)?;
        let [gu, gv] = desc.grid;
        let mut views = Vec::with_capacity(gu * gv);
        for v in 0..gv {
            for u in 0..gu {
                views.push(Image::read_png(&dir.join(desc.file_name(u, v)))?);
            }
        }
        LightField::new(gu, gv, views, desc.baseline_mm)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let desc = LightFieldDescriptor {
            grid: [self.u, self.v],
            baseline_mm: self.baseline_mm,
            ..Default::default()
        };
        for v in 0..self.v {
            for u in 0..self.u {
                self.view(u, v).write_png(&dir.join(desc.file_name(u, v)))?;
            }
        }
        let path = dir.join(DESCRIPTOR);
        fs::write(&path, serde_json::to_vec_pretty(&desc)?).map_err(|e| Error::io(&path, e))
    }
}

/// Bilinear sample with coordinates clamped to the image.
fn bilinear(im: &Image, x: f64, y: f64, c: usize) -> f32 {
    let (w, h) = (im.width(), im.height());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
    let top = im.get(x0, y0, c) * (1.0 - fx) + im.get(x1, y0, c) * fx;
    let bottom = im.get(x0, y1, c) * (1.0 - fx) + im.get(x1, y1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Average of all views, view `(u, v)` sampled at
/// `(x + slope·(u − u₀), y + slope·(v − v₀))` about the grid centre.
pub fn shift_and_add(lf: &LightField, slope: f64) -> Result<Image> {
    if !slope.is_finite() {
        return Err(Error::Domain(format!("slope must be finite, got {slope}")));
    }
    let (w, h, ch) = (lf.width(), lf.height(), lf.views[0].channels());
    let (u0, v0) = ((lf.u - 1) as f64 / 2.0, (lf.v - 1) as f64 / 2.0);
    let inv = 1.0 / lf.views.len() as f32;
    let mut data = vec![0.0f32; w * h * ch];
    data.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for v in 0..lf.v {
            let dy = slope * (v as f64 - v0);
            for u in 0..lf.u {
                let dx = slope * (u as f64 - u0);
                let im = lf.view(u, v);
                for x in 0..w {
                    for c in 0..ch {
                        row[x * ch + c] += bilinear(im, x as f64 + dx, y as f64 + dy, c);
                    }
                }
            }
        }
        row.iter_mut().for_each(|p| *p *= inv);
    });
    Image::from_vec(w, h, ch, data)
}

/// One refocused slice per slope. `focus_depths` of the returned stack holds
/// the slopes, since a light field carries no metric focus distance.
pub fn refocus_stack_from_lf(lf: &LightField, slopes: &[f64]) -> Result<FocalStack> {
    if slopes.is_empty() {
        return Err(Error::Usage("no slopes given".into()));
    }
    let increasing = slopes.windows(2).all(|p| p[0] < p[1]);
    let decreasing = slopes.windows(2).all(|p| p[0] > p[1]);
    if !(increasing || decreasing) {
        return Err(Error::Usage("slopes must be strictly ordered".into()));
    }
    let slices = slopes
        .iter()
        .map(|&s| shift_and_add(lf, s))
        .collect::<Result<Vec<_>>>()?;
    let spread = (lf.u.max(lf.v) - 1) as f64;
    Ok(FocalStack {
        slices,
        focus_depths: slopes.to_vec(),
        max_coc_px: slopes.iter().map(|s| s.abs() * spread).fold(0.0, f64::max),
        lens: LensConfig::default(),
        noise_peak: None,
        seed: 0,
    })
}

/// `n` evenly spaced slopes from `a` to `b` inclusive.
pub fn slope_range(a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !a.is_finite() || !b.is_finite() || a == b {
        return Err(Error::Usage(format!("invalid slope range {a}:{b}:{n}")));
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}

/// Parses `a:b:n`.
pub fn parse_slope_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Usage(format!("expected slopes as a:b:n, got `{spec}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    slope_range(a, b, n)
}

/// Side of the focus-measure aggregation window.
pub const FOCUS_WINDOW: usize = 9;

/// Per-pixel, per-slice focus scores; slice-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FocusMeasureMap {
    pub width: usize,
    pub height: usize,
    pub slices: usize,
    pub scores: Vec<f32>,
}

impl FocusMeasureMap {
    pub fn score(&self, slice: usize, x: usize, y: usize) -> f32 {
        self.scores[(slice * self.height + y) * self.width + x]
    }
}

fn luminance(im: &Image) -> Vec<f32> {
    if im.channels() == 1 {
        im.data().to_vec()
    } else {
        im.to_gray().into_data()
    }
}

/// Modified Laplacian `|2I − I(x−1) − I(x+1)| + |2I − I(y−1) − I(y+1)|` with
/// replicated borders.
pub fn modified_laplacian(gray: &[f32], w: usize, h: usize) -> Vec<f32> {
    let at = |x: usize, y: usize| gray[y * w + x];
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let c = 2.0 * at(x, y);
            out[y * w + x] = (c - at(xm, y) - at(xp, y)).abs() + (c - at(x, ym) - at(x, yp)).abs();
        }
    }
    out
}

/// Sum over a `k×k` window clipped to the image, via a summed-area table.
pub fn box_sum(values: &[f32], w: usize, h: usize, k: usize) -> Vec<f32> {
    let r = k / 2;
    let mut sat = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0f64;
        for x in 0..w {
            row += values[y * w + x] as f64;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
            out[y * w + x] = s.max(0.0) as f32;
        }
    }
    out
}

/// Modified Laplacian of each slice's luminance summed over a 9×9 window.
pub fn focus_measure(slices: &[Image]) -> Result<FocusMeasureMap> {
    let first = slices.first().ok_or_else(|| Error::Usage("empty focal stack".into()))?;
    let (w, h) = (first.width(), first.height());
    if slices.iter().any(|s| s.width() != w || s.height() != h) {
        return Err(Error::Shape("focal stack slices differ in size".into()));
    }
    let per_slice: Vec<Vec<f32>> = slices
        .par_iter()
        .map(|s| box_sum(&modified_laplacian(&luminance(s), w, h), w, h, FOCUS_WINDOW))
        .collect();
    Ok(FocusMeasureMap {
        width: w,
        height: h,
        slices: slices.len(),
        scores: per_slice.concat(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DffResult {
    pub width: usize,
    pub height: usize,
    /// Index of the sharpest slice; the first one wins ties.
    pub index: Vec<usize>,
    /// `(max − second max) / max`, zero where every score is zero.
    pub confidence: Vec<f32>,
    pub measure: FocusMeasureMap,
}

impl DffResult {
    /// Index map scaled to `[0, 1]` (slice 0 → 0).
    pub fn normalized(&self) -> Vec<f32> {
        let top = (self.measure.slices - 1).max(1) as f32;
        self.index.iter().map(|&i| i as f32 / top).collect()
    }
}

/// Depth-from-focus: for every pixel, the slice with the largest focus measure.
pub fn classical_dff(slices: &[Image]) -> Result<DffResult> {
    if slices.len() < 2 {
        return Err(Error::Usage(format!("depth from focus needs at least 2 slices, got {}", slices.len())));
    }
    let measure = focus_measure(slices)?;
    let (w, h, n) = (measure.width, measure.height, measure.slices);
    let plane = w * h;
    let mut index = vec![0usize; plane];
    let mut confidence = vec![0.0f32; plane];
    for p in 0..plane {
        let (mut best, mut first, mut second) = (0usize, f32::NEG_INFINITY, f32::NEG_INFINITY);
        for k in 0..n {
            let s = measure.scores[k * plane + p];
            if s > first {
                second = first;
                first = s;
                best = k;
            } else if s > second {
                second = s;
            }
        }
        index[p] = best;
        confidence[p] = if first > 0.0 { (first - second) / first } else { 0.0 };
    }
    Ok(DffResult {
        width: w,
        height: h,
        index,
        confidence,
        measure,
    })
}

/// Variance of the 4-neighbour Laplacian of the luminance over interior pixels.
pub fn variance_of_laplacian(im: &Image) -> f64 {
    let (w, h) = (im.width(), im.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    let g = luminance(im);
    let at = |x: usize, y: usize| g[y * w + x] as f64;
    let mut vals = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            vals.push(at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y));
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texture(x: f64, y: f64) -> f32 {
        (0.5 + 0.25 * (0.9 * x).sin() * (0.7 * y).cos() + 0.2 * (2.3 * x + 1.1 * y).sin()) as f32
    }

    /// Fronto-parallel plane: a point at `x` in the centre view sits at
    /// `x + k·(u − u₀)` in view `u`.
    pub(crate) fn plane_lf(n: usize, k: f64, w: usize, h: usize) -> LightField {
        let c = (n - 1) as f64 / 2.0;
        let mut views = vec![];
        for v in 0..n {
            for u in 0..n {
                let (dx, dy) = (k * (u as f64 - c), k * (v as f64 - c));
                views.push(Image::from_fn(w, h, 3, |x, y, ch| {
                    texture(x as f64 - dx + ch as f64, y as f64 - dy)
                }));
            }
        }
        LightField::new(n, n, views, 1.0).unwrap()
    }

    #[test]
    fn single_view_is_identity() {
        let im = Image::from_fn(12, 9, 3, |x, y, c| texture(x as f64, (y + c) as f64));
        let lf = LightField::new(1, 1, vec![im.clone()], 1.0).unwrap();
        for s in [-2.0, 0.0, 0.7, 3.0] {
            assert_eq!(shift_and_add(&lf, s).unwrap(), im);
        }
    }

    #[test]
    fn constant_field_stays_constant() {
        let views = vec![Image::filled(10, 8, 3, 0.375); 9];
        let lf = LightField::new(3, 3, views, 1.0).unwrap();
        for s in [-1.5, 0.0, 0.25, 2.0] {
            assert!(shift_and_add(&lf, s).unwrap().data().iter().all(|&v| (v - 0.375).abs() < 1e-6));
        }
    }

    #[test]
    fn zero_slope_is_plain_average() {
        let lf = plane_lf(3, 1.0, 16, 16);
        let out = shift_and_add(&lf, 0.0).unwrap();
        let x = (5, 7, 1);
        let avg: f32 = lf.views.iter().map(|v| v.get(x.0, x.1, x.2)).sum::<f32>() / 9.0;
        assert!((out.get(x.0, x.1, x.2) - avg).abs() < 1e-6);
    }

    #[test]
    fn sharpness_peaks_at_true_slope() {
        let lf = plane_lf(5, 1.5, 48, 48);
        let slopes = slope_range(0.0, 3.0, 13).unwrap();
        let scores: Vec<f64> = slopes
            .iter()
            .map(|&s| variance_of_laplacian(&shift_and_add(&lf, s).unwrap()))
            .collect();
        let best = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        assert!((slopes[best] - 1.5).abs() <= 0.25, "{:?}", slopes[best]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(LightField::new(0, 1, vec![], 1.0).is_err());
        let im = Image::filled(4, 4, 3, 0.0);
        assert!(LightField::new(2, 1, vec![im.clone(), Image::filled(5, 4, 3, 0.0)], 1.0).is_err());
        let lf = LightField::new(1, 1, vec![im], 1.0).unwrap();
        assert!(shift_and_add(&lf, f64::NAN).is_err());
        assert!(refocus_stack_from_lf(&lf, &[1.0, 0.5, 2.0]).is_err());
        assert!(parse_slope_range("0:1").is_err());
        assert_eq!(parse_slope_range("0:1.5:4").unwrap(), vec![0.0, 0.5, 1.0, 1.5]);
    }

    #[test]
    fn refocus_stack_counts_and_determinism() {
        let lf = plane_lf(3, 1.0, 24, 24);
        let slopes = slope_range(-1.0, 2.0, 16).unwrap();
        let a = refocus_stack_from_lf(&lf, &slopes).unwrap();
        let b = refocus_stack_from_lf(&lf, &slopes).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, b);
    }

    #[test]
    fn dff_on_refocused_plane_finds_its_slope() {
        let k = 1.0;
        let lf = plane_lf(5, k, 40, 40);
        let slopes = slope_range(-1.0, 2.0, 16).unwrap();
        let stack = refocus_stack_from_lf(&lf, &slopes).unwrap();
        let dff = classical_dff(&stack.slices).unwrap();
        let truth = slopes.iter().position(|&s| (s - k).abs() < 1e-9).unwrap();
        let hits = dff.index.iter().filter(|&&i| i == truth).count();
        assert!(hits as f64 >= 0.95 * dff.index.len() as f64, "{hits}");
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let views: Vec<Image> = (0..6)
            .map(|i| Image::from_fn(5, 4, 3, |x, y, c| ((x + y + c + i) % 5 * 51) as f32 / 255.0))
            .collect();
        let lf = LightField::new(3, 2, views, 0.5).unwrap();
        lf.save(dir.path()).unwrap();
        assert_eq!(LightField::load(dir.path()).unwrap(), lf);
    }

    #[test]
    fn constant_stack_has_zero_confidence() {
        let stack = vec![Image::filled(12, 12, 3, 0.4); 4];
        let dff = classical_dff(&stack).unwrap();
        assert!(dff.confidence.iter().all(|&c| c == 0.0));
        assert!(dff.index.iter().all(|&i| i == 0));
    }

    #[test]
    fn single_slice_is_rejected() {
        assert!(classical_dff(&[Image::filled(4, 4, 3, 0.0)]).is_err());
    }

    #[test]
    fn sharp_slice_wins() {
        let sharp = Image::from_fn(32, 32, 3, |x, y, _| if (x / 2 + y / 2) % 2 == 0 { 0.9 } else { 0.1 });
        let blur = |im: &Image| {
            Image::from_fn(32, 32, 3, |x, y, c| {
                let mut s = 0.0;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let xx = (x as i32 + dx).clamp(0, 31) as usize;
                        let yy = (y as i32 + dy).clamp(0, 31) as usize;
                        s += im.get(xx, yy, c);
                    }
                }
                s / 9.0
            })
        };
        let soft = blur(&sharp);
        let softer = blur(&soft);
        for j in 0..3 {
            let mut stack = vec![softer.clone(), soft.clone(), softer.clone()];
            stack[j] = sharp.clone();
            let dff = classical_dff(&stack).unwrap();
            assert!(dff.index.iter().all(|&i| i == j));
        }
    }

    #[test]
    fn box_sum_matches_direct_sum() {
        let (w, h) = (11, 7);
        let v: Vec<f32> = (0..w * h).map(|i| ((i * 13) % 7) as f32).collect();
        let s = box_sum(&v, w, h, 9);
        for y in 0..h {
            for x in 0..w {
                let mut d = 0.0;
                for yy in y.saturating_sub(4)..(y + 5).min(h) {
                    for xx in x.saturating_sub(4)..(x + 5).min(w) {
                        d += v[yy * w + xx];
                    }
                }
                assert!((s[y * w + x] - d).abs() < 1e-3);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn shift_and_add_is_linear(seed in 0u32..1000, slope in -2.0f64..2.0) {
            let mk = |off: u32| -> LightField {
                let views = (0..4)
                    .map(|i| Image::from_fn(9, 7, 3, |x, y, c| {
                        (((x * 31 + y * 17 + c * 7 + i * 5) as u32).wrapping_mul(2654435761u32).wrapping_add(seed + off) % 1000) as f32 / 1000.0
                    }))
                    .collect();
                LightField::new(2, 2, views, 1.0).unwrap()
            };
            let (a, b) = (mk(0), mk(77));
            let sum = LightField::new(2, 2, a.views.iter().zip(&b.views).map(|(p, q)| {
                Image::from_vec(9, 7, 3, p.data().iter().zip(q.data()).map(|(x, y)| x + y).collect()).unwrap()
            }).collect(), 1.0).unwrap();
            let lhs = shift_and_add(&sum, slope).unwrap();
            let ra = shift_and_add(&a, slope).unwrap();
            let rb = shift_and_add(&b, slope).unwrap();
            for ((l, x), y) in lhs.data().iter().zip(ra.data()).zip(rb.data()) {
                prop_assert!((l - (x + y)).abs() < 1e-6);
            }
        }

        #[test]
        fn dff_invariant_to_positive_scaling(seed in 0u64..500, exp in -2i32..3) {
            let scale = 2f32.powi(exp);
            let slices: Vec<Image> = (0..3)
                .map(|k| Image::from_fn(16, 16, 3, |x, y, _| {
                    let h = (x as u64 * 73 + y as u64 * 151 + k * 997 + seed).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
                    (h % 1000) as f32 / 1000.0 * (1.0 + k as f32) / 3.0
                }))
                .collect();
            let scaled: Vec<Image> = slices.iter().map(|s| s.map(|v| v * scale)).collect();
            let a = classical_dff(&slices).unwrap();
            let b = classical_dff(&scaled).unwrap();
            prop_assert_eq!(a.index, b.index);
        }
    }
}
