use nalgebra::Vector3;
use rand::RngCore;

use super::{importance_samples, pixel_ray, reborrow, stratified, Ray, RenderResult, DEPTH_EPS};
use crate::autodiff::{MlpWeights, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::imaging::{DepthMap, Image};

/// Rays sharing one `[t_near, t_far]` interval.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub origins: Vec<Vector3<f64>>,
    pub dirs: Vec<Vector3<f64>>,
    pub t_near: f64,
    pub t_far: f64,
}

impl RayBatch {
    pub fn from_pixels(pixels: &[[f64; 2]], cam: &Intrinsics, pose: &Pose, t_near: f64, t_far: f64) -> Result<Self> {
        let mut origins = Vec::with_capacity(pixels.len());
        let mut dirs = Vec::with_capacity(pixels.len());
        for p in pixels {
            let r = pixel_ray(*p, cam, pose, t_near, t_far)?;
            origins.push(r.origin);
            dirs.push(r.dir);
        }
        Ok(Self {
            origins,
            dirs,
            t_near,
            t_far,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn ray(&self, i: usize) -> Ray {
        Ray {
            origin: self.origins[i],
            dir: self.dirs[i],
            t_near: self.t_near,
            t_far: self.t_far,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            origins: idx.iter().map(|&i| self.origins[i]).collect(),
            dirs: idx.iter().map(|&i| self.dirs[i]).collect(),
            t_near: self.t_near,
            t_far: self.t_far,
        }
    }
}

/// Sorted sample depths, `n_samples` per ray, row-major by ray.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub n_samples: usize,
    pub t: Vec<f64>,
}

impl SamplePlan {
    pub fn stratified(rays: &RayBatch, n: usize, mut rng: Option<&mut dyn RngCore>) -> Self {
        let mut t = Vec::with_capacity(rays.len() * n);
        for _ in 0..rays.len() {
            t.extend(stratified(rays.t_near, rays.t_far, n, reborrow(&mut rng)));
        }
        Self { n_samples: n, t }
    }

    /// Coarse depths plus `n_fine` importance draws per ray from `weights` (`R x S`).
    pub fn refine(&self, rays: &RayBatch, weights: &Tensor, n_fine: usize, mut rng: Option<&mut dyn RngCore>) -> Self {
        let s = self.n_samples;
        let mut t = Vec::with_capacity(rays.len() * (s + n_fine));
        for r in 0..rays.len() {
            t.extend(importance_samples(
                &rays.ray(r),
                self.ray_t(r),
                weights.row(r),
                n_fine,
                reborrow(&mut rng),
            ));
        }
        Self { n_samples: s + n_fine, t }
    }

    pub fn num_rays(&self) -> usize {
        if self.n_samples == 0 {
            0
        } else {
            self.t.len() / self.n_samples
        }
    }

    pub fn ray_t(&self, r: usize) -> &[f64] {
        &self.t[r * self.n_samples..(r + 1) * self.n_samples]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut t = Vec::with_capacity(idx.len() * self.n_samples);
        for &i in idx {
            t.extend_from_slice(self.ray_t(i));
        }
        Self {
            n_samples: self.n_samples,
            t,
        }
    }
}

/// Differentiable per-ray outputs.
#[derive(Clone, Copy, Debug)]
pub struct TapeRender {
    /// `R x 3`
    pub color: Var,
    /// `R x 1`, expected depth normalized by accumulated weight.
    pub depth: Var,
    /// `R x 3`, expected point `x_s`.
    pub point: Var,
    /// `R x 1`
    pub weight_sum: Var,
    /// `R x S`
    pub weights: Var,
}

/// Renders `rays` through `net` at the depths in `plan`.
pub fn render_on_tape(tape: &mut Tape, net: &MlpWeights, vars: &[Var], rays: &RayBatch, plan: &SamplePlan) -> Result<TapeRender> {
    let (r_n, s_n) = (rays.len(), plan.n_samples);
    if plan.num_rays() != r_n || r_n == 0 || s_n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{r_n} rays, plan for {} rays x {s_n} samples",
            plan.num_rays()
        )));
    }
    let cfg = &net.config;
    let mut pts = Vec::with_capacity(r_n * s_n);
    let mut dirs = Vec::with_capacity(r_n * s_n);
    let mut deltas = Vec::with_capacity(r_n * s_n);
    for r in 0..r_n {
        let (o, d) = (rays.origins[r], rays.dirs[r]);
        let ts = plan.ray_t(r);
        for (j, &t) in ts.iter().enumerate() {
            let x = o + d * t;
            pts.push([x.x, x.y, x.z]);
            dirs.push([d.x, d.y, d.z]);
            let next = if j + 1 < s_n { ts[j + 1] } else { rays.t_far };
            deltas.push(next - t);
        }
    }
    let x_enc = tape.constant(cfg.pos_encoding().encode_rows(&pts));
    let d_enc = tape.constant(cfg.dir_encoding().encode_rows(&dirs));
    let (rgb, sigma) = net.forward(tape, vars, x_enc, d_enc)?;

    let sigma = tape.reshape(sigma, r_n, s_n);
    let delta = tape.constant(Tensor::from_vec(r_n, s_n, deltas));
    let sd = tape.mul(sigma, delta);
    let neg = tape.scale(sd, -1.0);
    let keep = tape.exp(neg);
    let one_minus = tape.scale(keep, -1.0);
    let alpha = tape.add_scalar(one_minus, 1.0);
    let acc = tape.cumsum_exclusive(sd);
    let neg_acc = tape.scale(acc, -1.0);
    let trans = tape.exp(neg_acc);
    let weights = tape.mul(trans, alpha);

    let color = tape.weighted_row_sum(weights, rgb);
    let weight_sum = tape.sum_rows(weights);
    let tv = tape.constant(Tensor::from_vec(r_n, s_n, plan.t.clone()));
    let wt_each = tape.mul(weights, tv);
    let wt = tape.sum_rows(wt_each);
    let o = tape.constant(vec3_rows(&rays.origins));
    let d = tape.constant(vec3_rows(&rays.dirs));
    let po = tape.scale_rows(weight_sum, o);
    let pd = tape.scale_rows(wt, d);
    let point = tape.add(po, pd);
    let norm = tape.clamp_min(weight_sum, DEPTH_EPS);
    let depth = tape.div(wt, norm);
    Ok(TapeRender {
        color,
        depth,
        point,
        weight_sum,
        weights,
    })
}

fn vec3_rows(v: &[Vector3<f64>]) -> Tensor {
    Tensor::from_vec(v.len(), 3, v.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
}

/// Coarse and fine networks with their tape handles.
#[derive(Clone, Copy)]
pub struct FieldPair<'a> {
    pub coarse: &'a MlpWeights,
    pub coarse_vars: &'a [Var],
    pub fine: &'a MlpWeights,
    pub fine_vars: &'a [Var],
}

#[derive(Clone, Debug)]
pub struct HierarchicalRender {
    pub coarse: TapeRender,
    pub fine: TapeRender,
    pub coarse_plan: SamplePlan,
    pub fine_plan: SamplePlan,
}

/// Coarse pass on stratified depths, then a fine pass on the coarse depths
/// merged with importance draws. No gradient flows through the sampling.
pub fn render_hierarchical(
    tape: &mut Tape,
    nets: &FieldPair,
    rays: &RayBatch,
    n_coarse: usize,
    n_fine: usize,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<HierarchicalRender> {
    let coarse_plan = SamplePlan::stratified(rays, n_coarse, reborrow(&mut rng));
    let coarse = render_on_tape(tape, nets.coarse, nets.coarse_vars, rays, &coarse_plan)?;
    let fine_plan = coarse_plan.refine(rays, tape.value(coarse.weights), n_fine, rng);
    let fine = render_on_tape(tape, nets.fine, nets.fine_vars, rays, &fine_plan)?;
    Ok(HierarchicalRender {
        coarse,
        fine,
        coarse_plan,
        fine_plan,
    })
}

/// Like [`render_hierarchical`] with both sample plans given.
pub fn render_with_plans(
    tape: &mut Tape,
    nets: &FieldPair,
    rays: &RayBatch,
    coarse_plan: &SamplePlan,
    fine_plan: &SamplePlan,
) -> Result<HierarchicalRender> {
    let coarse = render_on_tape(tape, nets.coarse, nets.coarse_vars, rays, coarse_plan)?;
    let fine = render_on_tape(tape, nets.fine, nets.fine_vars, rays, fine_plan)?;
    Ok(HierarchicalRender {
        coarse,
        fine,
        coarse_plan: coarse_plan.clone(),
        fine_plan: fine_plan.clone(),
    })
}

/// Forward-only hierarchical render of the fine outputs, chunked.
/// Also returns the fine sample plan that produced them.
pub fn render_values(
    coarse: &MlpWeights,
    fine: &MlpWeights,
    rays: &RayBatch,
    n_coarse: usize,
    n_fine: usize,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<(Vec<RenderResult>, SamplePlan)> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(rays.len());
    let mut plan_t = Vec::new();
    let idx: Vec<usize> = (0..rays.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let sub = rays.select(chunk);
        let mut tape = Tape::new();
        let cv = coarse.register_frozen(&mut tape);
        let fv = fine.register_frozen(&mut tape);
        let nets = FieldPair {
            coarse,
            coarse_vars: &cv,
            fine,
            fine_vars: &fv,
        };
        let h = render_hierarchical(&mut tape, &nets, &sub, n_coarse, n_fine, reborrow(&mut rng))?;
        let (c, d, p, w) = (
            tape.value(h.fine.color),
            tape.value(h.fine.depth),
            tape.value(h.fine.point),
            tape.value(h.fine.weight_sum),
        );
        for r in 0..sub.len() {
            out.push(RenderResult {
                color: [c.get(r, 0), c.get(r, 1), c.get(r, 2)],
                point: Vector3::new(p.get(r, 0), p.get(r, 1), p.get(r, 2)),
                depth: d.get(r, 0),
                weight_sum: w.get(r, 0),
            });
        }
        plan_t.extend_from_slice(&h.fine_plan.t);
    }
    Ok((
        out,
        SamplePlan {
            n_samples: n_coarse + n_fine,
            t: plan_t,
        },
    ))
}

/// Full-image render at integer pixel positions.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
}

impl RenderedView {
    pub fn image(&self) -> Image {
        Image::from_colors(self.width, self.height, 3, &self.color).expect("view dimensions")
    }

    pub fn depth_map(&self) -> DepthMap {
        DepthMap::new(self.width, self.height, self.depth.clone()).expect("view dimensions")
    }
}

/// Deterministic render (bin midpoints, fixed quantiles) of every pixel.
pub fn render_view(
    coarse: &MlpWeights,
    fine: &MlpWeights,
    cam: &Intrinsics,
    pose: &Pose,
    t_near: f64,
    t_far: f64,
    n_coarse: usize,
    n_fine: usize,
) -> Result<RenderedView> {
    let pixels: Vec<[f64; 2]> = (0..cam.height)
        .flat_map(|y| (0..cam.width).map(move |x| [x as f64, y as f64]))
        .collect();
    let rays = RayBatch::from_pixels(&pixels, cam, pose, t_near, t_far)?;
    let (res, _) = render_values(coarse, fine, &rays, n_coarse, n_fine, None)?;
    Ok(RenderedView {
        width: cam.width,
        height: cam.height,
        color: res.iter().map(|r| r.color).collect(),
        depth: res.iter().map(|r| r.depth).collect(),
        opacity: res.iter().map(|r| r.weight_sum).collect(),
    })
}
