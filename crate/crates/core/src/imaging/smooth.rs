use super::{DepthMap, Image};
use crate::error::{Error, Result};

/// Edge-aware L1 depth smoothness: `sum |dD| * exp(-|dI|)` over horizontal and
/// vertical forward differences, with `|dI|` averaged over channels.
pub fn depth_smooth_term(depth: &DepthMap, color: &Image) -> Result<f64> {
    if depth.width != color.width() || depth.height != color.height() {
        return Err(Error::ShapeMismatch(format!(
            "depth {}x{} vs color {}x{}",
            depth.width,
            depth.height,
            color.width(),
            color.height()
        )));
    }
    let (w, h) = (depth.width, depth.height);
    let c = color.channels() as f64;
    let color_step = |(x0, y0): (usize, usize), (x1, y1): (usize, usize)| -> f64 {
        let a = color.pixel(x0, y0);
        let b = color.pixel(x1, y1);
        a.iter().zip(b).map(|(p, q)| (q - p).abs()).sum::<f64>() / c
    };
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            let dd = (depth.at(x + 1, y) - depth.at(x, y)).abs();
            total += dd * (-color_step((x, y), (x + 1, y))).exp();
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            let dd = (depth.at(x, y + 1) - depth.at(x, y)).abs();
            total += dd * (-color_step((x, y), (x, y + 1))).exp();
        }
    }
    Ok(total)
}
