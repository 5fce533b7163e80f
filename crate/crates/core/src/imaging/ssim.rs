use super::Image;
use crate::error::{Error, Result};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean SSIM over all fully covered 3x3 uniform windows and all channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::ShapeMismatch(format!(
            "ssim of {}x{}x{} and {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let (w, h, c) = (a.width(), a.height(), a.channels());
    if w < 3 || h < 3 {
        return Err(Error::ShapeMismatch("ssim needs at least 3x3 pixels".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..h - 2 {
        for x in 0..w - 2 {
            for ch in 0..c {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..3 {
                    for dx in 0..3 {
                        let va = a.pixel(x + dx, y + dy)[ch];
                        let vb = b.pixel(x + dx, y + dy)[ch];
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                total += ssim_from_moments(sa / 9.0, sb / 9.0, saa / 9.0, sbb / 9.0, sab / 9.0);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// SSIM of one window from its raw first and second moments.
pub(crate) fn ssim_from_moments(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
    let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
    num / den
}
