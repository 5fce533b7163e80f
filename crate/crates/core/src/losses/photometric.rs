use std::sync::Arc;

use crate::autodiff::{GridAxis, Tape, Tensor, Var};
use crate::geometry::{Intrinsics, Pose, MIN_DEPTH};
use crate::imaging::{Image, SSIM_C1, SSIM_C2};

/// Another view of a triplet as seen from the reference camera.
#[derive(Clone, Debug)]
pub struct WarpView {
    pub image: Arc<Image>,
    pub cam: Intrinsics,
    /// Reference-camera to this-camera transform.
    pub rel: Pose,
}

/// Colors fetched from a warped view, `n x C`, with per-pixel validity.
#[derive(Clone, Debug)]
pub struct Warped {
    pub colors: Var,
    pub valid: Vec<bool>,
}

impl Warped {
    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }
}

/// Rows `x` (`n x 3`) mapped by `x -> r x + t`.
fn rigid(tape: &mut Tape, x: Var, pose: &Pose) -> Var {
    // column-major iteration of r is r^T in row-major order
    let m = tape.constant(Tensor::from_vec(3, 3, pose.r.iter().copied().collect()));
    let b = tape.constant(Tensor::from_vec(1, 3, pose.t.iter().copied().collect()));
    let y = tape.matmul(x, m);
    tape.add_bias(y, b)
}

/// World points into the frame of a camera with camera-to-world `pose`.
pub fn to_camera(tape: &mut Tape, x_world: Var, pose: &Pose) -> Var {
    let inv = Pose {
        r: pose.r.transpose(),
        t: -(pose.r.transpose() * pose.t),
    };
    rigid(tape, x_world, &inv)
}

/// Projects reference-camera points into `view` and samples its image.
pub fn warp_points(tape: &mut Tape, x_ref_cam: Var, view: &WarpView) -> Warped {
    let xc = rigid(tape, x_ref_cam, &view.rel);
    let x = tape.slice_cols(xc, 0, 1);
    let y = tape.slice_cols(xc, 1, 2);
    let z_raw = tape.slice_cols(xc, 2, 3);
    let in_front: Vec<bool> = tape.value(z_raw).data().iter().map(|z| *z > MIN_DEPTH).collect();
    let z = tape.clamp_min(z_raw, MIN_DEPTH);
    let xn = tape.div(x, z);
    let yn = tape.div(y, z);
    let u = tape.scale(xn, view.cam.fx);
    let u = tape.add_scalar(u, view.cam.cx);
    let v = tape.scale(yn, view.cam.fy);
    let v = tape.add_scalar(v, view.cam.cy);
    let (colors, inside) = tape.bilinear_sample(&view.image, u, v);
    let valid = inside.iter().zip(&in_front).map(|(a, b)| *a && *b).collect();
    Warped { colors, valid }
}

/// Counters from one evaluation of the photometric reconstruction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrStats {
    /// Pixel-view pairs that contributed.
    pub counted: usize,
    pub masked_pixels: usize,
    pub invalid_warps: usize,
    pub channels: usize,
    pub abs_sum: f64,
}

impl PrStats {
    /// Mean absolute color error per channel over the contributing pairs.
    pub fn mean_abs_per_channel(&self) -> f64 {
        if self.counted == 0 {
            0.0
        } else {
            self.abs_sum / (self.counted * self.channels) as f64
        }
    }
}

/// Sum over unmasked patch pixels and both views of the L1 color difference
/// between the reference colors (`n x C`) and the warped colors.
/// Invalid warps contribute zero.
pub fn photometric_reconstruction_loss(
    tape: &mut Tape,
    ref_colors: &Tensor,
    in_mask: &[bool],
    warped: &[Warped],
) -> (Var, PrStats) {
    let (n, c) = ref_colors.shape();
    assert_eq!(in_mask.len(), n);
    let mut stats = PrStats {
        channels: c,
        masked_pixels: in_mask.iter().filter(|m| !**m).count(),
        ..Default::default()
    };
    let target = tape.constant(ref_colors.clone());
    let mut acc: Option<Var> = None;
    for w in warped {
        assert_eq!(w.valid.len(), n);
        let mut keep = Tensor::zeros(n, c);
        for k in 0..n {
            if !in_mask[k] {
                continue;
            }
            if w.valid[k] {
                stats.counted += 1;
                keep.data_mut()[k * c..(k + 1) * c].fill(1.0);
            } else {
                stats.invalid_warps += 1;
            }
        }
        let d = tape.sub(target, w.colors);
        let a = tape.abs(d);
        let kv = tape.constant(keep);
        let m = tape.mul(a, kv);
        let s = tape.sum(m);
        acc = Some(match acc {
            Some(p) => tape.add(p, s),
            None => s,
        });
    }
    let loss = acc.unwrap_or_else(|| tape.scalar(0.0));
    stats.abs_sum = tape.value(loss).item();
    (loss, stats)
}

/// Mean SSIM of two `side x side` grids over 3x3 windows and channels.
fn ssim_on_tape(tape: &mut Tape, a: Var, b: Var, side: usize) -> Var {
    let aa = tape.mul(a, a);
    let bb = tape.mul(b, b);
    let ab = tape.mul(a, b);
    let mu_a = tape.box3(a, side);
    let mu_b = tape.box3(b, side);
    let e_aa = tape.box3(aa, side);
    let e_bb = tape.box3(bb, side);
    let e_ab = tape.box3(ab, side);
    let ma2 = tape.mul(mu_a, mu_a);
    let mb2 = tape.mul(mu_b, mu_b);
    let mab = tape.mul(mu_a, mu_b);
    let var_a = tape.sub(e_aa, ma2);
    let var_b = tape.sub(e_bb, mb2);
    let cov = tape.sub(e_ab, mab);
    let n1 = tape.scale(mab, 2.0);
    let n1 = tape.add_scalar(n1, SSIM_C1);
    let n2 = tape.scale(cov, 2.0);
    let n2 = tape.add_scalar(n2, SSIM_C2);
    let num = tape.mul(n1, n2);
    let d1 = tape.add(ma2, mb2);
    let d1 = tape.add_scalar(d1, SSIM_C1);
    let d2 = tape.add(var_a, var_b);
    let d2 = tape.add_scalar(d2, SSIM_C2);
    let den = tape.mul(d1, d2);
    let map = tape.div(num, den);
    tape.mean(map)
}

/// `1/2 M ((1 - SSIM_i)/2 + (1 - SSIM_j)/2)` on a `side x side` patch.
/// Invalid warped pixels take the reference color so they neither help nor
/// hurt the structural comparison.
pub fn ssim_loss(tape: &mut Tape, ref_colors: &Tensor, warped: &[Warped], side: usize, inside_mask: bool) -> Var {
    if !inside_mask || warped.is_empty() {
        return tape.scalar(0.0);
    }
    let (n, c) = ref_colors.shape();
    assert_eq!(n, side * side);
    let target = tape.constant(ref_colors.clone());
    let mut acc: Option<Var> = None;
    for w in warped {
        let mut keep = Tensor::zeros(n, c);
        let mut fill = Tensor::zeros(n, c);
        for k in 0..n {
            let row = k * c..(k + 1) * c;
            if w.valid[k] {
                keep.data_mut()[row].fill(1.0);
            } else {
                fill.data_mut()[row.clone()].copy_from_slice(&ref_colors.data()[row]);
            }
        }
        let kv = tape.constant(keep);
        let fv = tape.constant(fill);
        let kept = tape.mul(w.colors, kv);
        let b = tape.add(kept, fv);
        let s = ssim_on_tape(tape, target, b, side);
        let one_minus = tape.neg(s);
        let one_minus = tape.add_scalar(one_minus, 1.0);
        acc = Some(match acc {
            Some(p) => tape.add(p, one_minus),
            None => one_minus,
        });
    }
    tape.scale(acc.unwrap(), 0.25)
}

/// `sum |dD| exp(-mean_c |dI|)` over horizontal and vertical neighbours of a
/// `side x side` patch. `depth` is `n x 1`; the color weights are constants.
pub fn depth_smooth_loss(tape: &mut Tape, depth: Var, ref_colors: &Tensor, side: usize) -> Var {
    let c = ref_colors.cols();
    let mut parts = Vec::with_capacity(2);
    for axis in [GridAxis::Horizontal, GridAxis::Vertical] {
        let (w, h) = match axis {
            GridAxis::Horizontal => (side - 1, side),
            GridAxis::Vertical => (side, side - 1),
        };
        let mut weights = Tensor::zeros(w * h, 1);
        for y in 0..h {
            for x in 0..w {
                let p0 = ref_colors.row(y * side + x);
                let p1 = match axis {
                    GridAxis::Horizontal => ref_colors.row(y * side + x + 1),
                    GridAxis::Vertical => ref_colors.row((y + 1) * side + x),
                };
                let step = p0.iter().zip(p1).map(|(a, b)| (b - a).abs()).sum::<f64>() / c as f64;
                weights.data_mut()[y * w + x] = (-step).exp();
            }
        }
        let d = tape.grid_diff(depth, side, axis);
        let a = tape.abs(d);
        let wv = tape.constant(weights);
        let m = tape.mul(a, wv);
        parts.push(tape.sum(m));
    }
    tape.add(parts[0], parts[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, relative_pose};
    use crate::imaging::{depth_smooth_term, ssim, DepthMap};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    fn random_colors(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(n, 3, (0..n * 3).map(|_| rng.gen()).collect())
    }

    fn views() -> (Pose, Pose, Intrinsics) {
        let cam = Intrinsics::centered(40.0, 32, 32).unwrap();
        let up = Vector3::new(0.0, -1.0, 0.0);
        let a = Pose::look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), up).unwrap();
        let b = Pose::look_at(Vector3::new(0.6, 0.2, -4.0), Vector3::zeros(), up).unwrap();
        (a, b, cam)
    }

    #[test]
    fn warp_matches_direct_projection() {
        let (a, b, cam) = views();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Arc::new(random_image(32, 32, &mut rng));
        let view = WarpView {
            image: img.clone(),
            cam,
            rel: relative_pose(&a, &b).unwrap(),
        };
        let pts: Vec<[f64; 3]> = (0..20)
            .map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)])
            .collect();
        let mut tape = Tape::new();
        let xw = tape.constant(Tensor::from_rows(&pts));
        let xr = to_camera(&mut tape, xw, &a);
        let w = warp_points(&mut tape, xr, &view);
        for (k, p) in pts.iter().enumerate() {
            let uv = project(&Vector3::from(*p), &cam, &b).unwrap();
            let expect = img.bilinear_sample(uv.x, uv.y);
            match expect {
                Ok(col) => {
                    assert!(w.valid[k]);
                    for ch in 0..3 {
                        assert!((tape.value(w.colors).get(k, ch) - col[ch]).abs() < 1e-10);
                    }
                }
                Err(_) => assert!(!w.valid[k]),
            }
        }
    }

    #[test]
    fn points_behind_the_camera_are_invalid() {
        let (a, b, cam) = views();
        let view = WarpView {
            image: Arc::new(Image::filled(32, 32, [0.5; 3])),
            cam,
            rel: relative_pose(&a, &b).unwrap(),
        };
        let mut tape = Tape::new();
        // on the optical axis behind both cameras
        let xw = tape.constant(Tensor::from_rows(&[[0.0, 0.0, -10.0]]));
        let xr = to_camera(&mut tape, xw, &a);
        let w = warp_points(&mut tape, xr, &view);
        assert_eq!(w.valid, vec![false]);
    }

    #[test]
    fn pr_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 9;
        let colors = random_colors(n, &mut rng);
        let other = random_colors(n, &mut rng);
        let mut tape = Tape::new();
        let wv = tape.constant(other.clone());
        let w = Warped {
            colors: wv,
            valid: vec![true; n],
        };
        let (l, st) = photometric_reconstruction_loss(&mut tape, &colors, &vec![false; n], &[w.clone(), w.clone()]);
        assert_eq!(tape.value(l).item(), 0.0);
        assert_eq!(st.masked_pixels, n);

        let mut brute = 0.0;
        for k in 0..n {
            if k % 3 != 0 {
                brute += (0..3).map(|c| (colors.get(k, c) - other.get(k, c)).abs()).sum::<f64>();
            }
        }
        let mask: Vec<bool> = (0..n).map(|k| k % 3 != 0).collect();
        let mut w2 = w.clone();
        w2.valid[1] = false;
        let brute_j = brute - (0..3).map(|c| (colors.get(1, c) - other.get(1, c)).abs()).sum::<f64>();
        let (l, st) = photometric_reconstruction_loss(&mut tape, &colors, &mask, &[w, w2]);
        assert!((tape.value(l).item() - (brute + brute_j)).abs() < 1e-12);
        assert_eq!(st.invalid_warps, 1);
        assert_eq!(st.counted, 6 + 5);
    }

    #[test]
    fn constant_images_give_zero_photometric_loss() {
        let (a, b, cam) = views();
        let view = WarpView {
            image: Arc::new(Image::filled(32, 32, [0.3, 0.6, 0.1])),
            cam,
            rel: relative_pose(&a, &b).unwrap(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<[f64; 3]> = (0..16).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let mut tape = Tape::new();
        let xw = tape.param(Tensor::from_rows(&pts));
        let xr = to_camera(&mut tape, xw, &a);
        let w = warp_points(&mut tape, xr, &view);
        let refc = Tensor::from_rows(&vec![[0.3, 0.6, 0.1]; 16]);
        let (l, _) = photometric_reconstruction_loss(&mut tape, &refc, &[true; 16], &[w]);
        assert!(tape.value(l).item() < 1e-12);
    }

    #[test]
    fn tape_ssim_matches_image_ssim() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let side = 6;
        let a = random_colors(side * side, &mut rng);
        let b = random_colors(side * side, &mut rng);
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let s = ssim_on_tape(&mut tape, av, bv, side);
        let ia = Image::new(side, side, 3, a.data().to_vec()).unwrap();
        let ib = Image::new(side, side, 3, b.data().to_vec()).unwrap();
        assert!((tape.value(s).item() - ssim(&ia, &ib).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let side = 5;
        let a = random_colors(side * side, &mut rng);
        let mut tape = Tape::new();
        let same = Warped {
            colors: tape.constant(a.clone()),
            valid: vec![true; side * side],
        };
        let l = ssim_loss(&mut tape, &a, &[same.clone(), same.clone()], side, true);
        assert!(tape.value(l).item().abs() < 1e-12);
        let l0 = ssim_loss(&mut tape, &a, &[same.clone(), same], side, false);
        assert_eq!(tape.value(l0).item(), 0.0);

        // all warps invalid: filled with the reference, so SSIM = 1
        let junk = Warped {
            colors: tape.constant(random_colors(side * side, &mut rng)),
            valid: vec![false; side * side],
        };
        let l = ssim_loss(&mut tape, &a, &[junk.clone(), junk], side, true);
        assert!(tape.value(l).item().abs() < 1e-12);
    }

    #[test]
    fn ssim_loss_is_half_mean_dissimilarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let side = 5;
        let a = random_colors(side * side, &mut rng);
        let bi = random_colors(side * side, &mut rng);
        let bj = random_colors(side * side, &mut rng);
        let img = |t: &Tensor| Image::new(side, side, 3, t.data().to_vec()).unwrap();
        let si = ssim(&img(&a), &img(&bi)).unwrap();
        let sj = ssim(&img(&a), &img(&bj)).unwrap();
        let mut tape = Tape::new();
        let wi = Warped {
            colors: tape.constant(bi),
            valid: vec![true; side * side],
        };
        let wj = Warped {
            colors: tape.constant(bj),
            valid: vec![true; side * side],
        };
        let l = ssim_loss(&mut tape, &a, &[wi, wj], side, true);
        let expect = 0.5 * ((1.0 - si) / 2.0 + (1.0 - sj) / 2.0);
        assert!((tape.value(l).item() - expect).abs() < 1e-12);
        assert!(tape.value(l).item() >= 0.0);
    }

    #[test]
    fn depth_smooth_matches_image_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let side = 7;
        let colors = random_colors(side * side, &mut rng);
        let depth: Vec<f64> = (0..side * side).map(|_| rng.gen_range(1.0..3.0)).collect();
        let mut tape = Tape::new();
        let d = tape.param(Tensor::from_vec(side * side, 1, depth.clone()));
        let l = depth_smooth_loss(&mut tape, d, &colors, side);
        let oracle = depth_smooth_term(
            &DepthMap::new(side, side, depth).unwrap(),
            &Image::new(side, side, 3, colors.data().to_vec()).unwrap(),
        )
        .unwrap();
        assert!((tape.value(l).item() - oracle).abs() < 1e-12);
    }

    #[test]
    fn photometric_gradient_matches_finite_differences() {
        let (a, b, cam) = views();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // smooth image so the bilinear kinks are small relative to the slope
        let img = Image::new(
            32,
            32,
            3,
            (0..32 * 32 * 3)
                .map(|i| {
                    let p = i / 3;
                    let (x, y) = ((p % 32) as f64, (p / 32) as f64);
                    0.5 + 0.4 * (0.21 * x + 0.1 * (i % 3) as f64).sin() * (0.17 * y).cos()
                })
                .collect(),
        )
        .unwrap();
        let view = WarpView {
            image: Arc::new(img),
            cam,
            rel: relative_pose(&a, &b).unwrap(),
        };
        let pts: Vec<[f64; 3]> = (0..6).map(|_| [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)]).collect();
        let refc = random_colors(6, &mut rng);
        let eval = |p: &Tensor, grad: bool| {
            let mut tape = Tape::new();
            let xw = tape.param(p.clone());
            let xr = to_camera(&mut tape, xw, &a);
            let w = warp_points(&mut tape, xr, &view);
            let (l, _) = photometric_reconstruction_loss(&mut tape, &refc, &[true; 6], &[w]);
            let g = grad.then(|| tape.backward(l).unwrap().get(xw));
            (tape.value(l).item(), g)
        };
        let p0 = Tensor::from_rows(&pts);
        let g = eval(&p0, true).1.unwrap();
        let h = 1e-7;
        for i in 0..p0.len() {
            let mut pp = p0.clone();
            pp.data_mut()[i] += h;
            let mut pm = p0.clone();
            pm.data_mut()[i] -= h;
            let fd = (eval(&pp, false).0 - eval(&pm, false).0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-4 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g.data()[i]);
        }
    }
}
