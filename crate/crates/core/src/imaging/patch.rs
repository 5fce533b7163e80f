use rand::Rng;

use super::{Color, Image};
use crate::error::{Error, Result};

/// How patch coordinates are placed inside their pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchSampling {
    /// One independent offset in `(0, 1)` per pixel and axis.
    SubPixel,
    /// Plain integer pixel positions.
    Integer,
}

/// A square block of continuous pixel coordinates and their ground-truth colors.
#[derive(Clone, Debug)]
pub struct SubPixelPatch {
    pub origin: (usize, usize),
    pub size: usize,
    /// Row-major: entry `j * size + i` belongs to patch column `i`, row `j`.
    pub coords: Vec<[f64; 2]>,
    pub colors: Vec<Color>,
}

impl SubPixelPatch {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// The patch colors as a `size x size` image.
    pub fn to_image(&self, channels: usize) -> Image {
        Image::from_colors(self.size, self.size, channels, &self.colors).expect("patch image")
    }
}

pub fn sample_subpixel_patch(img: &Image, patch_size: usize, rng: &mut impl Rng) -> Result<SubPixelPatch> {
    sample_patch(img, patch_size, PatchSampling::SubPixel, rng)
}

/// Draws a uniformly placed patch; colors come from bilinear lookups.
pub fn sample_patch(
    img: &Image,
    patch_size: usize,
    mode: PatchSampling,
    rng: &mut impl Rng,
) -> Result<SubPixelPatch> {
    let limit = match mode {
        PatchSampling::SubPixel => img.width().min(img.height()).saturating_sub(1),
        PatchSampling::Integer => img.width().min(img.height()),
    };
    if patch_size == 0 || patch_size > limit {
        return Err(Error::Config(format!(
            "patch size {patch_size} does not fit a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    // Sub-pixel patches need one spare column/row so that x + offset stays inside.
    let spare = usize::from(mode == PatchSampling::SubPixel);
    let ox = rng.gen_range(0..=img.width() - patch_size - spare);
    let oy = rng.gen_range(0..=img.height() - patch_size - spare);

    let n = patch_size * patch_size;
    let mut coords = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for j in 0..patch_size {
        for i in 0..patch_size {
            let (dx, dy) = match mode {
                PatchSampling::SubPixel => (open_unit(rng), open_unit(rng)),
                PatchSampling::Integer => (0.0, 0.0),
            };
            let p = [(ox + i) as f64 + dx, (oy + j) as f64 + dy];
            colors.push(img.bilinear_sample(p[0], p[1])?);
            coords.push(p);
        }
    }
    Ok(SubPixelPatch {
        origin: (ox, oy),
        size: patch_size,
        coords,
        colors,
    })
}

/// Uniform draw from the open interval `(0, 1)`.
fn open_unit(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}
