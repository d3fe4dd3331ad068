//! Registered colour, metric depth and normalized disparity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Depth interval mapped affinely (in inverse depth) onto disparity [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub near_mm: f64,
    pub far_mm: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        DepthRange {
            near_mm: 800.0,
            far_mm: 8000.0,
        }
    }
}

impl DepthRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.near_mm > 0.0 && self.near_mm < self.far_mm && self.far_mm.is_finite()) {
            return Err(Error::Config(format!(
                "depth range needs 0 < near < far, got [{}, {}]",
                self.near_mm, self.far_mm
            )));
        }
        Ok(())
    }

    /// Depth of normalized disparity `d` (0 = far, 1 = near).
    pub fn depth_of(&self, d: f64) -> f64 {
        let inv = 1.0 / self.far_mm + d * (1.0 / self.near_mm - 1.0 / self.far_mm);
        1.0 / inv
    }

    /// Normalized disparity of depth `z`, clamped to [0, 1].
    pub fn disparity_of(&self, z: f64) -> f64 {
        ((1.0 / z - 1.0 / self.far_mm) / (1.0 / self.near_mm - 1.0 / self.far_mm)).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// H×W×3 in [0, 1].
    pub color: Image,
    /// H×W×1 in millimetres.
    pub depth: Image,
    /// H×W×1 in [0, 1].
    pub disparity: Image,
}

impl Scene {
    pub fn new(color: Image, depth: Image, disparity: Image) -> Result<Self> {
        let (w, h) = (color.width(), color.height());
        if color.channels() != 3 {
            return Err(Error::Shape(format!("scene colour needs 3 channels, got {}", color.channels())));
        }
        for (what, m) in [("depth", &depth), ("disparity", &disparity)] {
            if (m.width(), m.height(), m.channels()) != (w, h, 1) {
                return Err(Error::Shape(format!(
                    "scene {what} is {}x{}x{}, colour is {w}x{h}",
                    m.width(),
                    m.height(),
                    m.channels()
                )));
            }
        }
        if let Some(z) = depth.data().iter().find(|z| !(z.is_finite() && **z > 0.0)) {
            return Err(Error::Domain(format!("scene depth must be finite and positive, found {z}")));
        }
        if let Some(d) = disparity.data().iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::Domain(format!("normalized disparity outside [0, 1]: {d}")));
        }
        Ok(Scene {
            color,
            depth,
            disparity,
        })
    }

    /// Builds depth from a normalized disparity map.
    pub fn from_disparity(color: Image, disparity: Image, range: &DepthRange) -> Result<Self> {
        range.validate()?;
        let depth = disparity.map(|d| range.depth_of(d as f64) as f32);
        Scene::new(color, depth, disparity)
    }

    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    /// Smallest and largest depth present.
    pub fn depth_extent(&self) -> (f64, f64) {
        self.depth
            .data()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &z| (lo.min(z as f64), hi.max(z as f64)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_round_trip() {
        let r = DepthRange::default();
        assert!((r.depth_of(0.0) - r.far_mm).abs() < 1e-9);
        assert!((r.depth_of(1.0) - r.near_mm).abs() < 1e-9);
        assert!((r.disparity_of(r.depth_of(0.37)) - 0.37).abs() < 1e-12);
        assert_eq!(r.disparity_of(1.0), 1.0);
    }

    #[test]
    fn scene_validation() {
        let c = Image::filled(4, 4, 3, 0.5);
        let d = Image::filled(4, 4, 1, 0.5);
        assert!(Scene::from_disparity(c.clone(), d.clone(), &DepthRange::default()).is_ok());
        assert!(Scene::new(c.clone(), Image::filled(4, 4, 1, -1.0), d.clone()).is_err());
        assert!(Scene::new(c, Image::filled(4, 3, 1, 1.0), d).is_err());
    }
}
