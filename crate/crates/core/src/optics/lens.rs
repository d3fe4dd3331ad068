//! Thin-lens circle of confusion and the stereo disparity relation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thin lens with lengths in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LensConfig {
    pub focal_length_mm: f64,
    pub aperture_mm: f64,
    pub sensor_distance_mm: f64,
    pub pixel_pitch_mm: f64,
}

impl Default for LensConfig {
    fn default() -> Self {
        LensConfig {
            focal_length_mm: 50.0,
            aperture_mm: 10.0,
            sensor_distance_mm: 51.28,
            pixel_pitch_mm: 0.01,
        }
    }
}

impl LensConfig {
    pub fn new(focal_length_mm: f64, aperture_mm: f64, sensor_distance_mm: f64, pixel_pitch_mm: f64) -> Result<Self> {
        let lens = LensConfig {
            focal_length_mm,
            aperture_mm,
            sensor_distance_mm,
            pixel_pitch_mm,
        };
        lens.validate()?;
        Ok(lens)
    }

    pub fn validate(&self) -> Result<()> {
        let LensConfig {
            focal_length_mm: f,
            aperture_mm: d,
            sensor_distance_mm: s,
            pixel_pitch_mm: p,
        } = *self;
        if !(f > 0.0 && f < s && s.is_finite()) {
            return Err(Error::Config(format!("lens needs 0 < f < s, got f={f} s={s}")));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Config(format!("aperture must be positive, got {d}")));
        }
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Config(format!("pixel pitch must be positive, got {p}")));
        }
        Ok(())
    }

    /// Object distance in focus, `(1/f − 1/s)⁻¹`.
    pub fn focus_distance(&self) -> f64 {
        1.0 / (1.0 / self.focal_length_mm - 1.0 / self.sensor_distance_mm)
    }

    /// The same lens with the sensor moved so that `z` is in focus.
    pub fn focused_at(&self, z: f64) -> Result<Self> {
        if !(z > self.focal_length_mm && z.is_finite()) {
            return Err(Error::Domain(format!(
                "cannot focus at {z} mm with f = {} mm",
                self.focal_length_mm
            )));
        }
        Ok(LensConfig {
            sensor_distance_mm: 1.0 / (1.0 / self.focal_length_mm - 1.0 / z),
            ..*self
        })
    }

    pub fn with_aperture(&self, aperture_mm: f64) -> Result<Self> {
        let lens = LensConfig { aperture_mm, ..*self };
        lens.validate()?;
        Ok(lens)
    }
}

/// Blur-circle diameter in pixels of a point at depth `z_p` (mm).
pub fn coc_diameter(lens: &LensConfig, z_p: f64) -> Result<f64> {
    if !(z_p > lens.focal_length_mm) || !z_p.is_finite() {
        return Err(Error::Domain(format!(
            "depth {z_p} mm is not beyond the focal length {} mm",
            lens.focal_length_mm
        )));
    }
    let z_s = lens.focus_distance();
    let c_mm = lens.sensor_distance_mm * lens.aperture_mm * (1.0 / z_p - 1.0 / z_s).abs();
    Ok(c_mm / lens.pixel_pitch_mm)
}

/// Two identical lenses side by side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub baseline_mm: f64,
    pub lens: LensConfig,
}

impl StereoRig {
    pub fn new(baseline_mm: f64, lens: LensConfig) -> Result<Self> {
        if !(baseline_mm > 0.0 && baseline_mm.is_finite()) {
            return Err(Error::Config(format!("baseline must be positive, got {baseline_mm}")));
        }
        lens.validate()?;
        Ok(StereoRig { baseline_mm, lens })
    }

    /// Disparity in pixels relative to the plane in focus.
    pub fn disparity_px(&self, z: f64) -> Result<f64> {
        disparity_from_coc(self, coc_diameter(&self.lens, z)?)
    }
}

/// Disparity `c·l/D` matching a blur circle of `c` pixels.
pub fn disparity_from_coc(rig: &StereoRig, c: f64) -> Result<f64> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::Domain(format!("circle of confusion must be nonnegative, got {c}")));
    }
    Ok(c * rig.baseline_mm / rig.lens.aperture_mm)
}
