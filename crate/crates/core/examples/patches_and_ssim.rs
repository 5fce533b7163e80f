//! Sub-pixel patch sampling, bilinear colors and the SSIM metric on a
//! synthetic view.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfmnerf::data::{synthesize, Preset};
use sfmnerf::imaging::{depth_smooth_term, sample_patch, ssim, Image, PatchSampling};

fn main() -> sfmnerf::Result<()> {
    let (ds, _) = synthesize(Preset::TexturedBox, 0)?;
    let img = &ds.images[0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    for mode in [PatchSampling::Integer, PatchSampling::SubPixel] {
        let p = sample_patch(img, 8, mode, &mut rng)?;
        println!("{mode:?} patch at {:?}; first coords {:?}", p.origin, &p.coords[..3]);
        let crop = img.crop(p.origin.0, p.origin.1, p.size, p.size)?;
        let patch = p.to_image(3);
        println!("  ssim against the integer crop {:.4}", ssim(&patch, &crop)?);
    }

    let flat = Image::filled(img.width(), img.height(), [0.5; 3]);
    println!("ssim(view, view) = {:.4}", ssim(img, img)?);
    println!("ssim(view, gray) = {:.4}", ssim(img, &flat)?);
    let next = &ds.images[1];
    println!("ssim(view 0, view 1) = {:.4}", ssim(img, next)?);

    if let Some(depths) = &ds.depths {
        println!("edge-aware depth smoothness of view 0: {:.3}", depth_smooth_term(&depths[0], img)?);
    }
    Ok(())
}
