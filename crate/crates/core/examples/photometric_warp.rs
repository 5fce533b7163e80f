//! Warps a reference view into its two triplet partners with the exact
//! first-surface points and reports the photometric error that remains: the interpolation
//! floor the photometric loss sees when geometry is perfect. Surfaces hidden
//! in a partner view have nothing to match there; they are reported
//! separately.

use std::sync::Arc;

use sfmnerf::autodiff::{Tape, Tensor};
use sfmnerf::data::{build_triplets, synthesize, Preset};
use sfmnerf::field::pixel_ray;
use sfmnerf::geometry::relative_pose;
use sfmnerf::losses::{photometric_reconstruction_loss, to_camera, warp_points, WarpView, Warped};

fn main() -> sfmnerf::Result<()> {
    let preset: Preset = std::env::args().nth(1).as_deref().unwrap_or("two-spheres").parse()?;
    let (ds, scene) = synthesize(preset, 0)?;
    let (triplets, _) = build_triplets(&ds, &ds.match_blocks);

    for t in &triplets {
        let [r, i, j] = t.indices();
        let (cam, pose) = ds.cameras[r];
        let (mut pts, mut colors, mut in_mask) = (Vec::new(), Vec::new(), Vec::new());
        let mut world = Vec::new();
        for y in 0..cam.height {
            for x in 0..cam.width {
                let ray = pixel_ray([x as f64, y as f64], &cam, &pose, ds.config.near, ds.config.far)?;
                let hit = scene.first_hit(&ray.origin, &ray.dir, ds.config.near).filter(|t| *t < ds.config.far);
                let p = ray.at(hit.unwrap_or(ds.config.near));
                world.push(p);
                pts.extend(p.iter());
                colors.extend(ds.images[r].pixel(x, y).iter());
                in_mask.push(hit.is_some() && t.mask_rect.contains([x as f64, y as f64]));
            }
        }
        let n = in_mask.len();
        let mut tape = Tape::new();
        let xw = tape.constant(Tensor::from_vec(n, 3, pts));
        let xc = to_camera(&mut tape, xw, &pose);
        let (mut warped, mut visible) = (Vec::new(), Vec::new());
        for k in [i, j] {
            let view = WarpView {
                image: Arc::clone(&ds.images[k]),
                cam: ds.cameras[k].0,
                rel: relative_pose(&pose, &ds.cameras[k].1)?,
            };
            let w = warp_points(&mut tape, xc, &view);
            let seen = w.valid.iter().zip(&world).map(|(v, p)| *v && scene.visible_from(p, &ds.cameras[k].1)).collect();
            visible.push(Warped { colors: w.colors, valid: seen });
            warped.push(w);
        }
        let colors = Tensor::from_vec(n, 3, colors);
        let (_, all) = photometric_reconstruction_loss(&mut tape, &colors, &in_mask, &warped);
        let (_, vis) = photometric_reconstruction_loss(&mut tape, &colors, &in_mask, &visible);
        println!(
            "ref {r} -> {i},{j}: mean |error| per channel {:.4} over {} pixel-views, {:.4} over the {} visible ones ({} masked, {} leave the image)",
            all.mean_abs_per_channel(),
            all.counted,
            vis.mean_abs_per_channel(),
            vis.counted,
            all.masked_pixels,
            all.invalid_warps
        );
    }
    Ok(())
}
