//! One optimization step on one triplet.
//!
//! A step is split into a random draw ([`StepDraw`]) and a forward pass
//! ([`forward_step`]). The forward pass returns the sample plans and epipolar
//! choices it used ([`FrozenPlans`]); passing them back in re-evaluates the
//! exact same function of the weights, which is what finite-difference checks need.

use std::sync::Arc;

use nalgebra::Matrix3;
use rand::seq::index::sample;
use rand::{Rng, RngCore};

use super::TrainConfig;
use crate::autodiff::{AdamState, MlpWeights, Tape, Tensor, Var};
use crate::data::{SceneDataset, TrainTriplet};
use crate::error::Result;
use crate::field::{render_hierarchical, render_values, render_with_plans, FieldPair, RayBatch, SamplePlan, MIN_WEIGHT_SUM};
use crate::geometry::{epipolar_candidates, fundamental_matrix_between, relative_pose, Intrinsics, Pose};
use crate::imaging::{sample_patch, Image, PatchSampling, SubPixelPatch};
use crate::losses::{
    depth_smooth_loss, epipolar_loss, matched_features_loss, photometric_reconstruction_loss, rendering_loss, ssim_loss,
    to_camera, total_loss, warp_points, LossParts, LossReport, PrStats, SkipCounts, Term, WarpView,
};

/// A triplet with its images and the geometry the losses need.
#[derive(Clone, Debug)]
pub struct TripletView {
    pub triplet: TrainTriplet,
    pub ref_image: Arc<Image>,
    pub ref_cam: Intrinsics,
    pub ref_pose: Pose,
    pub other_poses: [Pose; 2],
    pub others: [WarpView; 2],
    /// Reference to other view; `None` without a baseline.
    pub fundamental: [Option<Matrix3<f64>>; 2],
    pub near: f64,
    pub far: f64,
}

impl TripletView {
    pub fn new(ds: &SceneDataset, triplet: TrainTriplet) -> Result<Self> {
        let [r, i, j] = triplet.indices();
        let (ref_cam, ref_pose) = ds.cameras[r];
        let mk = |k: usize| -> Result<(WarpView, Pose, Option<Matrix3<f64>>)> {
            let (cam, pose) = ds.cameras[k];
            let rel = relative_pose(&ref_pose, &pose)?;
            let f = fundamental_matrix_between(&ref_cam, &cam, &rel).ok();
            Ok((
                WarpView {
                    image: Arc::clone(&ds.images[k]),
                    cam,
                    rel,
                },
                pose,
                f,
            ))
        };
        let (wi, pi, fi) = mk(i)?;
        let (wj, pj, fj) = mk(j)?;
        Ok(Self {
            ref_image: Arc::clone(&ds.images[r]),
            ref_cam,
            ref_pose,
            other_poses: [pi, pj],
            others: [wi, wj],
            fundamental: [fi, fj],
            near: ds.config.near,
            far: ds.config.far,
            triplet,
        })
    }
}

/// The random choices of a step, drawn before any rendering.
#[derive(Clone, Debug)]
pub struct StepDraw {
    pub patch: SubPixelPatch,
    /// Indices into the triplet's matches.
    pub matches: Vec<usize>,
    /// `(position in matches, other view 0 or 1)` pairs with an epipolar term.
    pub epi: Vec<(usize, usize)>,
}

pub fn draw_step(tv: &TripletView, cfg: &TrainConfig, patch_size: usize, rng: &mut impl Rng) -> Result<StepDraw> {
    let mode = if cfg.subpixel { PatchSampling::SubPixel } else { PatchSampling::Integer };
    let patch = sample_patch(&tv.ref_image, patch_size, mode, rng)?;
    let total = tv.triplet.matches.len();
    let m = if cfg.matches_per_step == 0 { total } else { cfg.matches_per_step.min(total) };
    let mut matches = sample(rng, total, m).into_vec();
    matches.sort_unstable();
    let e = cfg.epi_matches.min(m);
    let mut epi: Vec<(usize, usize)> = sample(rng, m, e).into_iter().map(|q| (q, rng.gen_range(0..2))).collect();
    epi.sort_unstable();
    Ok(StepDraw { patch, matches, epi })
}

/// One epipolar term: the chosen candidate pixel in the other view and the
/// fine samples that rendered it.
#[derive(Clone, Debug, PartialEq)]
pub struct EpiPick {
    pub query: usize,
    pub view: usize,
    pub pixel: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct FrozenPlans {
    pub main_coarse: SamplePlan,
    pub main_fine: SamplePlan,
    pub epi: Vec<EpiPick>,
    pub epi_coarse: SamplePlan,
    pub epi_fine: SamplePlan,
}

pub struct StepOutput {
    pub loss: Var,
    pub report: LossReport,
    pub frozen: FrozenPlans,
    pub pr_stats: Option<PrStats>,
}

fn concat_rays(parts: &[RayBatch]) -> RayBatch {
    let mut out = RayBatch {
        origins: Vec::new(),
        dirs: Vec::new(),
        t_near: parts[0].t_near,
        t_far: parts[0].t_far,
    };
    for p in parts {
        out.origins.extend_from_slice(&p.origins);
        out.dirs.extend_from_slice(&p.dirs);
    }
    out
}

/// Evenly spaced subset of at most `k` items (all when `k == 0`).
fn thin<T: Copy>(items: &[T], k: usize) -> Vec<T> {
    if k == 0 || items.len() <= k {
        return items.to_vec();
    }
    (0..k).map(|i| items[i * items.len() / k]).collect()
}

/// Builds every enabled loss term on `tape`. Terms with zero weight are not
/// evaluated. With `frozen`, sampling and epipolar choices are replayed.
pub fn forward_step(
    tape: &mut Tape,
    nets: &FieldPair,
    tv: &TripletView,
    draw: &StepDraw,
    cfg: &TrainConfig,
    frozen: Option<&FrozenPlans>,
    rng: &mut dyn RngCore,
) -> Result<StepOutput> {
    let w = &cfg.weights;
    let side = draw.patch.size;
    let n_p = draw.patch.len();
    let need_matches = w.three_d > 0.0 || w.epi > 0.0;
    let need_patch_geometry = w.pr > 0.0 || w.ssim > 0.0 || w.ds > 0.0;
    let m = if need_matches { draw.matches.len() } else { 0 };
    let tri = &tv.triplet;

    let mut ref_px = draw.patch.coords.clone();
    ref_px.extend(draw.matches.iter().take(m).map(|&k| tri.matches[k][0]));
    let mut parts = vec![RayBatch::from_pixels(&ref_px, &tv.ref_cam, &tv.ref_pose, tv.near, tv.far)?];
    if m > 0 {
        for v in 0..2 {
            let px: Vec<[f64; 2]> = draw.matches.iter().map(|&k| tri.matches[k][v + 1]).collect();
            parts.push(RayBatch::from_pixels(&px, &tv.others[v].cam, &tv.other_poses[v], tv.near, tv.far)?);
        }
    }
    let rays = concat_rays(&parts);
    let main = match frozen {
        Some(f) => render_with_plans(tape, nets, &rays, &f.main_coarse, &f.main_fine)?,
        None => render_hierarchical(tape, nets, &rays, cfg.n_coarse, cfg.n_fine, Some(rng))?,
    };
    let ws: Vec<f64> = tape.value(main.fine.weight_sum).data().to_vec();

    let mut lp = LossParts::default();
    let mut skips = SkipCounts::default();
    let mut pr_stats = None;

    let target = Tensor::from_vec(n_p, 3, draw.patch.colors.iter().flatten().copied().collect());
    if w.ren > 0.0 {
        let c = tape.slice_rows(main.coarse.color, 0, n_p);
        let f = tape.slice_rows(main.fine.color, 0, n_p);
        let lc = rendering_loss(tape, c, &target);
        let lf = rendering_loss(tape, f, &target);
        lp.set(Term::Ren, Some(tape.add(lc, lf)));
    }

    if w.three_d > 0.0 && m > 0 {
        let kept: Vec<usize> = (0..m)
            .filter(|&q| (0..3).all(|v| ws[n_p + v * m + q] >= MIN_WEIGHT_SUM))
            .collect();
        skips.degenerate_rays += m - kept.len();
        let rows = |v: usize| kept.iter().map(|q| n_p + v * m + q).collect::<Vec<_>>();
        let (xr, xi, xj) = (
            tape.gather_rows(main.fine.point, &rows(0)),
            tape.gather_rows(main.fine.point, &rows(1)),
            tape.gather_rows(main.fine.point, &rows(2)),
        );
        lp.set(Term::ThreeD, matched_features_loss(tape, xr, xi, xj));
    }

    if need_patch_geometry {
        let pts = tape.slice_rows(main.fine.point, 0, n_p);
        let depth = tape.slice_rows(main.fine.depth, 0, n_p);
        if w.pr > 0.0 || w.ssim > 0.0 {
            let rect = &tri.mask_rect;
            let mut in_mask = Vec::with_capacity(n_p);
            for (k, c) in draw.patch.coords.iter().enumerate() {
                let ok = ws[k] >= MIN_WEIGHT_SUM;
                if !ok {
                    skips.degenerate_rays += 1;
                }
                in_mask.push(ok && rect.contains(*c));
            }
            let x_cam = to_camera(tape, pts, &tv.ref_pose);
            let warped = [warp_points(tape, x_cam, &tv.others[0]), warp_points(tape, x_cam, &tv.others[1])];
            if w.pr > 0.0 {
                let (l, st) = photometric_reconstruction_loss(tape, &target, &in_mask, &warped);
                skips.masked_pixels += st.masked_pixels;
                skips.invalid_warps += st.invalid_warps;
                pr_stats = Some(st);
                lp.set(Term::Pr, Some(l));
            }
            if w.ssim > 0.0 {
                let inside = draw.patch.coords.iter().all(|c| rect.contains(*c));
                lp.set(Term::Ssim, Some(ssim_loss(tape, &target, &warped, side, inside)));
            }
        }
        if w.ds > 0.0 {
            lp.set(Term::Ds, Some(depth_smooth_loss(tape, depth, &target, side)));
        }
    }

    let (picks, epi_coarse, epi_fine) = if w.epi > 0.0 && m > 0 {
        match frozen {
            Some(f) => (f.epi.clone(), f.epi_coarse.clone(), f.epi_fine.clone()),
            None => choose_epipolar(tape, nets, tv, draw, cfg, &main.fine.point, n_p, &ws, &mut skips)?,
        }
    } else {
        (Vec::new(), SamplePlan { n_samples: 0, t: vec![] }, SamplePlan { n_samples: 0, t: vec![] })
    };
    if !picks.is_empty() {
        let mut ray_parts = Vec::new();
        for p in &picks {
            ray_parts.push(RayBatch::from_pixels(&[p.pixel], &tv.others[p.view].cam, &tv.other_poses[p.view], tv.near, tv.far)?);
        }
        let epi_rays = concat_rays(&ray_parts);
        let r = render_with_plans(tape, nets, &epi_rays, &epi_coarse, &epi_fine)?;
        let mut acc: Option<Var> = None;
        for (k, p) in picks.iter().enumerate() {
            let x_ref = tape.slice_rows(main.fine.point, n_p + p.query, n_p + p.query + 1);
            let cand = tape.slice_rows(r.fine.point, k, k + 1);
            let l = epipolar_loss(tape, x_ref, cand).expect("one candidate");
            acc = Some(match acc {
                Some(a) => tape.add(a, l),
                None => l,
            });
        }
        let s = acc.expect("nonempty picks");
        lp.set(Term::Epi, Some(tape.scale(s, 1.0 / picks.len() as f64)));
    }

    let (loss, report) = total_loss(tape, &lp, w, skips);
    Ok(StepOutput {
        loss,
        report,
        frozen: FrozenPlans {
            main_coarse: main.coarse_plan,
            main_fine: main.fine_plan,
            epi: picks,
            epi_coarse,
            epi_fine,
        },
        pr_stats,
    })
}

/// For each epipolar query, renders the (thinned) candidate pixels without a
/// tape and keeps the one whose expected point is nearest to the reference point.
#[allow(clippy::too_many_arguments)]
fn choose_epipolar(
    tape: &Tape,
    nets: &FieldPair,
    tv: &TripletView,
    draw: &StepDraw,
    cfg: &TrainConfig,
    points: &Var,
    n_p: usize,
    ws: &[f64],
    skips: &mut SkipCounts,
) -> Result<(Vec<EpiPick>, SamplePlan, SamplePlan)> {
    let tri = &tv.triplet;
    let pts = tape.value(*points);
    let mut queries: Vec<(usize, usize, Vec<[f64; 2]>)> = Vec::new();
    let mut rays = Vec::new();
    for &(q, v) in &draw.epi {
        if ws[n_p + q] < MIN_WEIGHT_SUM {
            skips.degenerate_rays += 1;
            continue;
        }
        let Some(f) = tv.fundamental[v] else {
            skips.empty_epipolar += 1;
            continue;
        };
        let p_ref = tri.matches[draw.matches[q]][0];
        let set = epipolar_candidates(p_ref, &tv.ref_image, &tv.others[v].image, &f, cfg.epipolar_threshold)?;
        let cands = thin(&set.candidates, cfg.epi_candidates);
        if cands.is_empty() {
            skips.empty_epipolar += 1;
            continue;
        }
        rays.push(RayBatch::from_pixels(&cands, &tv.others[v].cam, &tv.other_poses[v], tv.near, tv.far)?);
        queries.push((q, v, cands));
    }
    let empty = SamplePlan { n_samples: 0, t: vec![] };
    if queries.is_empty() {
        return Ok((Vec::new(), empty.clone(), empty));
    }
    let all = concat_rays(&rays);
    let (res, fine_plan) = render_values(nets.coarse, nets.fine, &all, cfg.n_coarse, cfg.n_fine, None)?;
    let mut picks = Vec::with_capacity(queries.len());
    let mut rows = Vec::with_capacity(queries.len());
    let mut offset = 0;
    for (q, v, cands) in queries {
        let x = pts.row(n_p + q);
        let best = (0..cands.len())
            .map(|c| {
                let p = res[offset + c].point;
                (c, (x[0] - p.x).powi(2) + (x[1] - p.y).powi(2) + (x[2] - p.z).powi(2))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c)
            .expect("nonempty");
        rows.push(offset + best);
        picks.push(EpiPick {
            query: q,
            view: v,
            pixel: cands[best],
        });
        offset += cands.len();
    }
    let sel = all.select(&rows);
    let coarse = SamplePlan::stratified(&sel, cfg.n_coarse, None);
    let fine = fine_plan.select(&rows);
    Ok((picks, coarse, fine))
}

/// Parameters and optimizer state of the coarse and fine networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub coarse: MlpWeights,
    pub fine: MlpWeights,
    pub adam_coarse: AdamState,
    pub adam_fine: AdamState,
}

impl Networks {
    pub fn init(cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let coarse = MlpWeights::init(cfg.net, rng)?;
        let fine = MlpWeights::init(cfg.net, rng)?;
        Ok(Self {
            adam_coarse: AdamState::with_lr(&coarse.params, cfg.lr),
            adam_fine: AdamState::with_lr(&fine.params, cfg.lr),
            coarse,
            fine,
        })
    }
}

/// Draws, evaluates, back-propagates and applies one Adam update. A step
/// where every term is skipped leaves the networks unchanged.
pub fn train_step(
    nets: &mut Networks,
    tv: &TripletView,
    cfg: &TrainConfig,
    patch_size: usize,
    rng: &mut (impl Rng + RngCore),
) -> Result<(LossReport, Option<PrStats>)> {
    let draw = draw_step(tv, cfg, patch_size, rng)?;
    let mut tape = Tape::new();
    let cv = nets.coarse.register(&mut tape);
    let fv = nets.fine.register(&mut tape);
    let pair = FieldPair {
        coarse: &nets.coarse,
        coarse_vars: &cv,
        fine: &nets.fine,
        fine_vars: &fv,
    };
    let out = forward_step(&mut tape, &pair, tv, &draw, cfg, None, rng)?;
    if out.report.skipped_terms.iter().all(|s| *s) {
        return Ok((out.report, out.pr_stats));
    }
    let grads = tape.backward(out.loss)?;
    let gc = nets.coarse.collect_grads(&grads, &cv);
    let gf = nets.fine.collect_grads(&grads, &fv);
    nets.adam_coarse.step(&mut nets.coarse.params, &gc)?;
    nets.adam_fine.step(&mut nets.fine.params, &gf)?;
    nets.coarse.quantize();
    nets.fine.quantize();
    nets.adam_coarse.quantize();
    nets.adam_fine.quantize();
    Ok((out.report, out.pr_stats))
}
