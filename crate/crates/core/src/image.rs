//! Interleaved floating-point images with PNG and PFM I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image with values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "image {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Rec. 601 luma for colour images, a copy otherwise.
    pub fn to_gray(&self) -> Image {
        if self.channels != 3 {
            return Image::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, 0));
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Image::from_vec(width, height, c, data)
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.get(self.width - 1 - x, y, c)
        })
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.get(x, self.height - 1 - y, c)
        })
    }

    /// Planar copy: channel-major, then rows.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + i] = *v;
            }
        }
        out
    }

    pub fn from_planar(width: usize, height: usize, channels: usize, planar: &[f32]) -> Result<Image> {
        let plane = width * height;
        if planar.len() != plane * channels {
            return Err(Error::Shape(format!(
                "planar buffer of {} values for {width}x{height}x{channels}",
                planar.len()
            )));
        }
        let mut data = vec![0.0; plane * channels];
        for c in 0..channels {
            for i in 0..plane {
                data[i * channels + c] = planar[c * plane + i];
            }
        }
        Image::from_vec(width, height, channels, data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn quantize_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
        Image::from_vec(width, height, channels, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn read_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img.color().channel_count() {
            1 | 2 => Image::from_u8(w, h, 1, img.to_luma8().as_raw()),
            _ => Image::from_u8(w, h, 3, img.to_rgb8().as_raw()),
        }
    }

    /// 8-bit PNG; values are clamped to [0, 1] and rounded.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::Shape(format!("cannot write {c}-channel PNG"))),
        };
        image::save_buffer(path, &self.quantize_u8(), self.width as u32, self.height as u32, color)?;
        Ok(())
    }

    /// Portable float map, little-endian, rows stored bottom-up.
    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let tag = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => return Err(Error::Shape(format!("cannot write {c}-channel PFM"))),
        };
        let mut out = Vec::with_capacity(32 + self.data.len() * 4);
        write!(out, "{tag}\n{} {}\n-1.0\n", self.width, self.height).expect("in-memory write");
        let row = self.width * self.channels;
        for y in (0..self.height).rev() {
            for v in &self.data[y * row..(y + 1) * row] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_pfm(path: &Path) -> Result<Image> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut header = Vec::new();
        let mut line = String::new();
        while header.len() < 4 {
            line.clear();
            if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
                return Err(bad("truncated header"));
            }
            header.extend(line.split_whitespace().map(str::to_string));
        }
        let channels = match header[0].as_str() {
            "Pf" => 1,
            "PF" => 3,
            _ => return Err(bad("missing Pf/PF tag")),
        };
        let width: usize = header[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = header[2].parse().map_err(|_| bad("bad height"))?;
        let scale: f32 = header[3].parse().map_err(|_| bad("bad scale"))?;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
        let n = width * height * channels;
        if raw.len() != n * 4 {
            return Err(bad("payload size does not match header"));
        }
        let little = scale < 0.0;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| {
                let b: [u8; 4] = b.try_into().unwrap();
                if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                }
            })
            .collect();
        let row = width * channels;
        let mut data = Vec::with_capacity(n);
        for y in (0..height).rev() {
            data.extend_from_slice(&values[y * row..(y + 1) * row]);
        }
        Image::from_vec(width, height, channels, data)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}
