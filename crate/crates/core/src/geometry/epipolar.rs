use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Largest possible Euclidean distance between two RGB colors in `[0, 1]^3`.
pub const MAX_COLOR_DISTANCE: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Debug)]
pub struct EpipolarCandidateSet {
    /// `(a, b, c)` with `a x + b y + c = 0` in the other image.
    pub line: Vector3<f64>,
    pub candidates: Vec<[f64; 2]>,
    pub color_threshold: f64,
}

impl EpipolarCandidateSet {
    /// Perpendicular pixel distance of `p` from the line.
    pub fn line_distance(&self, p: [f64; 2]) -> f64 {
        let l = &self.line;
        (l.x * p[0] + l.y * p[1] + l.z).abs() / (l.x * l.x + l.y * l.y).sqrt()
    }
}

/// Walks the epipolar line of `p_ref` across `other` in one-pixel steps along the
/// line's dominant axis and keeps the points whose color is within `threshold`
/// of the reference color. A threshold of [`MAX_COLOR_DISTANCE`] keeps every
/// in-bounds point.
pub fn epipolar_candidates(
    p_ref: [f64; 2],
    ref_img: &Image,
    other: &Image,
    f: &Matrix3<f64>,
    threshold: f64,
) -> Result<EpipolarCandidateSet> {
    if !(0.0..=MAX_COLOR_DISTANCE).contains(&threshold) {
        return Err(Error::Config(format!(
            "color threshold {threshold} outside [0, sqrt(3)]"
        )));
    }
    let ref_color = ref_img.bilinear_sample(p_ref[0], p_ref[1])?;
    let line = f * Vector3::new(p_ref[0], p_ref[1], 1.0);
    let mut out = EpipolarCandidateSet {
        line,
        candidates: Vec::new(),
        color_threshold: threshold,
    };
    let (a, b, c) = (line.x, line.y, line.z);
    if a.abs() < 1e-300 && b.abs() < 1e-300 {
        return Ok(out);
    }
    let disabled = threshold >= MAX_COLOR_DISTANCE;
    let channels = ref_img.channels().min(other.channels());
    let mut keep = |x: f64, y: f64| {
        if !other.in_bounds(x, y) {
            return;
        }
        let col = other.sample_unchecked(x, y);
        let dist = (0..channels)
            .map(|k| (col[k] - ref_color[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        if disabled || dist < threshold {
            out.candidates.push([x, y]);
        }
    };
    if b.abs() >= a.abs() {
        for xi in 0..other.width() {
            let x = xi as f64;
            keep(x, -(a * x + c) / b);
        }
    } else {
        for yi in 0..other.height() {
            let y = yi as f64;
            keep(-(b * y + c) / a, y);
        }
    }
    Ok(out)
}
