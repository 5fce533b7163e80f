//! Rays, hierarchical sampling and alpha compositing.
//!
//! Plain `f64` versions live here; the differentiable versions used in
//! training are in [`render`].

mod render;

pub use render::{
    render_hierarchical, render_on_tape, render_values, render_view, render_with_plans, FieldPair, HierarchicalRender,
    RayBatch, RenderedView, SamplePlan, TapeRender,
};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};

/// Accumulated opacity below which a ray has no meaningful expected point.
pub const MIN_WEIGHT_SUM: f64 = 1e-6;
/// Floor on the normalizer of the expected depth.
pub const DEPTH_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub dir: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

/// Ray from the camera center through continuous pixel `p`.
pub fn pixel_ray(p: [f64; 2], cam: &Intrinsics, pose: &Pose, t_near: f64, t_far: f64) -> Result<Ray> {
    if !cam.contains(Vector2::new(p[0], p[1])) {
        return Err(Error::OutOfBounds {
            x: p[0],
            y: p[1],
            width: cam.width,
            height: cam.height,
        });
    }
    if !(t_near >= 0.0 && t_far > t_near) {
        return Err(Error::Config(format!("bad ray bounds [{t_near}, {t_far}]")));
    }
    let d_cam = Vector3::new((p[0] - cam.cx) / cam.fx, (p[1] - cam.cy) / cam.fy, 1.0);
    Ok(Ray {
        origin: pose.center(),
        dir: (pose.r * d_cam).normalize(),
        t_near,
        t_far,
    })
}

/// Shortens the borrow of an optional RNG so it can be passed on repeatedly.
pub(crate) fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// One draw per equal bin of `[t_near, t_far]`; bin midpoints when `rng` is `None`.
pub fn stratified_samples(ray: &Ray, n: usize, rng: Option<&mut dyn RngCore>) -> Vec<f64> {
    stratified(ray.t_near, ray.t_far, n, rng)
}

pub(crate) fn stratified(t_near: f64, t_far: f64, n: usize, mut rng: Option<&mut dyn RngCore>) -> Vec<f64> {
    assert!(n >= 1, "need at least one sample");
    let h = (t_far - t_near) / n as f64;
    (0..n)
        .map(|j| {
            let u = match reborrow(&mut rng) {
                Some(r) => r.gen::<f64>(),
                None => 0.5,
            };
            t_near + (j as f64 + u) * h
        })
        .collect()
}

/// Inverse-CDF draws from the piecewise-constant density that puts mass
/// `weights[j]` on `[t_vals[j], t_vals[j+1]]` (the last bin ends at `t_far`),
/// merged with `t_vals` and sorted. Without `rng` the quantiles `(k + 0.5) / n`
/// are used. All-zero weights fall back to stratified sampling.
pub fn importance_samples(
    ray: &Ray,
    t_vals: &[f64],
    weights: &[f64],
    n: usize,
    mut rng: Option<&mut dyn RngCore>,
) -> Vec<f64> {
    assert_eq!(t_vals.len(), weights.len());
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let mut out = Vec::with_capacity(t_vals.len() + n);
    out.extend_from_slice(t_vals);
    if !(total > 0.0) || !total.is_finite() {
        out.extend(stratified(ray.t_near, ray.t_far, n, rng));
    } else {
        let m = t_vals.len();
        let mut cdf = Vec::with_capacity(m + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for w in weights {
            acc += w.max(0.0) / total;
            cdf.push(acc);
        }
        cdf[m] = 1.0;
        for k in 0..n {
            let u = match reborrow(&mut rng) {
                Some(r) => r.gen::<f64>(),
                None => (k as f64 + 0.5) / n as f64,
            };
            // first bin whose upper cdf exceeds u, skipping empty bins
            let j = cdf[1..].partition_point(|&c| c <= u).min(m - 1);
            let lo = t_vals[j];
            let hi = if j + 1 < m { t_vals[j + 1] } else { ray.t_far };
            let mass = cdf[j + 1] - cdf[j];
            let frac = if mass > 0.0 { ((u - cdf[j]) / mass).clamp(0.0, 1.0) } else { 0.5 };
            out.push(lo + frac * (hi - lo));
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Per-sample quantities along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleBatch {
    pub t_vals: Vec<f64>,
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
}

impl RaySampleBatch {
    /// Quadrature weights `w_j = T_j (1 - exp(-sigma_j delta_j))` with
    /// `T_j = exp(-sum_{k<j} sigma_k delta_k)` and `delta_N = t_far - t_N`.
    pub fn new(t_vals: Vec<f64>, sigmas: Vec<f64>, colors: Vec<[f64; 3]>, t_far: f64) -> Result<Self> {
        let n = t_vals.len();
        if n == 0 || sigmas.len() != n || colors.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} samples, {} densities, {} colors",
                sigmas.len(),
                colors.len()
            )));
        }
        let deltas: Vec<f64> = (0..n)
            .map(|j| if j + 1 < n { t_vals[j + 1] - t_vals[j] } else { t_far - t_vals[j] })
            .collect();
        let mut transmittance = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut acc = 0.0f64;
        for j in 0..n {
            let sd = sigmas[j] * deltas[j];
            let t = (-acc).exp();
            transmittance.push(t);
            weights.push(t * (1.0 - (-sd).exp()));
            acc += sd;
        }
        Ok(Self {
            t_vals,
            deltas,
            sigmas,
            colors,
            weights,
            transmittance,
        })
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderResult {
    pub color: [f64; 3],
    pub point: Vector3<f64>,
    pub depth: f64,
    pub weight_sum: f64,
}

pub fn composite(batch: &RaySampleBatch, ray: &Ray) -> RenderResult {
    let mut color = [0.0; 3];
    let (mut ws, mut wt) = (0.0, 0.0);
    for ((w, c), t) in batch.weights.iter().zip(&batch.colors).zip(&batch.t_vals) {
        for k in 0..3 {
            color[k] += w * c[k];
        }
        ws += w;
        wt += w * t;
    }
    RenderResult {
        color,
        point: ray.origin * ws + ray.dir * wt,
        depth: wt / ws.max(DEPTH_EPS),
        weight_sum: ws,
    }
}

/// `x_s = sum_j w_j (o + t_j d)`; `None` when the ray is (nearly) empty.
pub fn expected_point(batch: &RaySampleBatch, ray: &Ray) -> Option<Vector3<f64>> {
    let r = composite(batch, ray);
    (r.weight_sum >= MIN_WEIGHT_SUM).then_some(r.point)
}
