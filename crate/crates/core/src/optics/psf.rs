//! Anti-aliased circular aperture kernels.

use crate::error::{Error, Result};

/// Sub-pixel samples per axis used for rim coverage.
pub const SUBSAMPLES: usize = 4;

/// Square, odd-sized, normalized kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub weights: Vec<f32>,
}

impl Kernel {
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn at(&self, dx: isize, dy: isize) -> f32 {
        let r = self.radius() as isize;
        self.weights[((dy + r) as usize) * self.size + (dx + r) as usize]
    }

    /// Nonzero span of each row as `(dy, first dx, weights)`.
    pub fn row_spans(&self) -> Vec<(isize, isize, Vec<f32>)> {
        let r = self.radius() as isize;
        let mut out = vec![];
        for (j, row) in self.weights.chunks_exact(self.size).enumerate() {
            let Some(first) = row.iter().position(|&w| w > 0.0) else {
                continue;
            };
            let last = row.iter().rposition(|&w| w > 0.0).unwrap();
            out.push((j as isize - r, first as isize - r, row[first..=last].to_vec()));
        }
        out
    }
}

/// Disc of the given diameter with partial-coverage rim weights from a
/// 4×4 sub-pixel grid. Diameters below one pixel give the identity.
pub fn disc_psf(diameter_px: f64) -> Result<Kernel> {
    if !(diameter_px >= 0.0) || !diameter_px.is_finite() {
        return Err(Error::Domain(format!("disc diameter must be nonnegative, got {diameter_px}")));
    }
    if diameter_px < 1.0 {
        return Ok(Kernel {
            size: 1,
            weights: vec![1.0],
        });
    }
    let r = diameter_px / 2.0;
    let half = (r - 0.5).ceil().max(0.0) as usize;
    let size = 2 * half + 1;
    let r2 = r * r;
    let n = SUBSAMPLES as f64;
    let mut cover = vec![0.0f64; size * size];
    for j in 0..size {
        for i in 0..size {
            let (cx, cy) = (i as f64 - half as f64, j as f64 - half as f64);
            let mut hits = 0usize;
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    let x = cx + (sx as f64 + 0.5) / n - 0.5;
                    let y = cy + (sy as f64 + 0.5) / n - 0.5;
                    if x * x + y * y <= r2 {
                        hits += 1;
                    }
                }
            }
            cover[j * size + i] = hits as f64;
        }
    }
    let total: f64 = cover.iter().sum();
    Ok(Kernel {
        size,
        weights: cover.iter().map(|&c| (c / total) as f32).collect(),
    })
}
