use crate::error::{Error, Result};

/// Inclusive integer rectangle covering every matched feature of a reference image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskRect {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl MaskRect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min as f64
            && p[0] <= self.x_max as f64
            && p[1] >= self.y_min as f64
            && p[1] <= self.y_max as f64
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x_min: 0,
            y_min: 0,
            x_max: width as i64 - 1,
            y_max: height as i64 - 1,
        }
    }
}

/// Tight bounding rectangle of `matches`, clipped to a `width x height` image.
pub fn mask_rect_from_matches(matches: &[[f64; 2]], width: usize, height: usize) -> Result<MaskRect> {
    if matches.is_empty() {
        return Err(Error::Empty("no matches to bound".into()));
    }
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in matches {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let clip = |v: f64, n: usize| (v as i64).clamp(0, n as i64 - 1);
    Ok(MaskRect {
        x_min: clip(x0.floor(), width),
        y_min: clip(y0.floor(), height),
        x_max: clip(x1.ceil(), width),
        y_max: clip(y1.ceil(), height),
    })
}
