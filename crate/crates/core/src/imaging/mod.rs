//! Image buffers and the image-space operations used by the losses.
//!
//! Pixel `(i, j)` of an image is stored at continuous coordinate `(i, j)`;
//! bilinear lookups are defined on `[0, width-1] x [0, height-1]`.

mod io;
mod mask;
mod patch;
mod smooth;
mod ssim;

pub use io::{read_pfm, read_png, write_pfm, write_png, Pfm};
pub use mask::{mask_rect_from_matches, MaskRect};
pub use patch::{sample_patch, sample_subpixel_patch, PatchSampling, SubPixelPatch};
pub use smooth::depth_smooth_term;
pub use ssim::{ssim, SSIM_C1, SSIM_C2};

use crate::error::{Error, Result};

/// Up to three channels; unused channels are zero.
pub type Color = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!("unsupported channel count {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch("image has zero extent".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::ShapeMismatch(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from colors laid out row-major, clamping each value into `[0, 1]`.
    pub fn from_colors(width: usize, height: usize, channels: usize, colors: &[Color]) -> Result<Self> {
        if colors.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} colors for a {width}x{height} image",
                colors.len()
            )));
        }
        let mut data = Vec::with_capacity(width * height * channels);
        for c in colors {
            data.extend(c[..channels].iter().map(|v| v.clamp(0.0, 1.0)));
        }
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, color: Color) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self::new(width, height, 3, data).expect("filled image")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn color(&self, x: usize, y: usize) -> Color {
        let mut c = [0.0; 3];
        c[..self.channels].copy_from_slice(self.pixel(x, y));
        c
    }

    #[inline]
    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation of the four neighbours of `(x, y)`.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Result<Color> {
        if !self.in_bounds(x, y) {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.sample_unchecked(x, y))
    }

    /// The four neighbours of `(x, y)` and their weights, top-left first.
    pub fn bilinear_weights(&self, x: f64, y: f64) -> [(usize, usize, f64); 4] {
        let (x0, fx) = cell(x, self.width);
        let (y0, fy) = cell(y, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ]
    }

    pub(crate) fn sample_unchecked(&self, x: f64, y: f64) -> Color {
        let mut out = [0.0; 3];
        for (px, py, w) in self.bilinear_weights(x, y) {
            for (o, v) in out.iter_mut().zip(self.pixel(px, py)) {
                *o += w * v;
            }
        }
        out
    }

    /// Partial derivatives of the bilinear interpolant w.r.t. `x` and `y`.
    pub(crate) fn sample_gradient(&self, x: f64, y: f64) -> (Color, Color) {
        let (x0, fx) = cell(x, self.width);
        let (y0, fy) = cell(y, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (p00, p10, p01, p11) = (
            self.pixel(x0, y0),
            self.pixel(x1, y0),
            self.pixel(x0, y1),
            self.pixel(x1, y1),
        );
        let mut dx = [0.0; 3];
        let mut dy = [0.0; 3];
        for c in 0..self.channels {
            dx[c] = (1.0 - fy) * (p10[c] - p00[c]) + fy * (p11[c] - p01[c]);
            dy[c] = (1.0 - fx) * (p01[c] - p00[c]) + fx * (p11[c] - p10[c]);
        }
        (dx, dy)
    }

    /// Copies the `w x h` window starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::ShapeMismatch("crop window exceeds image".into()));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                data.extend_from_slice(self.pixel(x, y));
            }
        }
        Self::new(w, h, self.channels, data)
    }
}

/// Integer cell and fractional offset along one axis of length `n`.
#[inline]
fn cell(v: f64, n: usize) -> (usize, f64) {
    if n < 2 {
        return (0, 0.0);
    }
    let i = (v.floor() as usize).min(n - 2);
    (i, v - i as f64)
}

/// Scalar grid such as an expected-depth map.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} depth map",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}
