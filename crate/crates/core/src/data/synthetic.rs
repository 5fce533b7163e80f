use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::{pixel_ray, Ray, MIN_WEIGHT_SUM};
use crate::geometry::{project, Intrinsics, Pose};
use crate::imaging::{Color, DepthMap, Image};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Axis-aligned box.
    Cuboid { min: Vector3<f64>, max: Vector3<f64> },
}

impl Shape {
    /// Parameter interval `[t0, t1]` where the line `o + t d` is inside.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.dot(d);
                let b = oc.dot(d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some(((-b - s) / a, (-b + s) / a))
            }
            Shape::Cuboid { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k] == 0.0 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - o[k]) / d[k];
                    let b = (max[k] - o[k]) / d[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t1 > t0).then_some((t0, t1))
            }
        }
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        match *self {
            Shape::Sphere { center, radius } => (x - center).norm() <= radius,
            Shape::Cuboid { min, max } => (0..3).all(|k| x[k] >= min[k] && x[k] <= max[k]),
        }
    }
}

/// Emitted color as a function of world position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Texture {
    Solid(Color),
    /// Channel `k` is `base[k] + amp[k] * sin(freq[k] . x + phase[k])`.
    Waves {
        base: Color,
        amp: Color,
        freq: [Vector3<f64>; 3],
        phase: Color,
    },
}

impl Texture {
    pub fn color_at(&self, x: &Vector3<f64>) -> Color {
        match self {
            Texture::Solid(c) => *c,
            Texture::Waves { base, amp, freq, phase } => {
                std::array::from_fn(|k| base[k] + amp[k] * (freq[k].dot(x) + phase[k]).sin())
            }
        }
    }

    fn in_unit_range(&self) -> bool {
        let ok = |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi);
        match self {
            Texture::Solid(c) => c.iter().all(|v| ok(*v, *v)),
            Texture::Waves { base, amp, freq, phase } => {
                (0..3).all(|k| ok(base[k] - amp[k].abs(), base[k] + amp[k].abs()))
                    && freq.iter().all(|f| f.iter().all(|v| v.is_finite()))
                    && phase.iter().all(|v| v.is_finite())
            }
        }
    }
}

/// A region of constant density. Textured primitives are opaque surfaces in
/// practice: a ray takes the color at the point where it enters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub sigma: f64,
    pub texture: Texture,
}

/// Closed-form rendering of one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthSample {
    pub color: Color,
    /// Expected depth normalized by the accumulated opacity; `None` for empty rays.
    pub depth: Option<f64>,
    pub weight_sum: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthView {
    pub image: Image,
    /// Zero where the ray is empty.
    pub depth: DepthMap,
    pub opacity: Vec<f64>,
}

/// Analytic primitives with `sigma = 0` outside all of them.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub near: f64,
    pub far: f64,
}

impl SyntheticScene {
    pub fn new(primitives: Vec<Primitive>, near: f64, far: f64) -> Result<Self> {
        if !(near >= 0.0 && far > near) {
            return Err(Error::Config(format!("bad scene bounds [{near}, {far}]")));
        }
        for p in &primitives {
            if !(p.sigma >= 0.0 && p.sigma.is_finite()) || !p.texture.in_unit_range() {
                return Err(Error::Config(format!("bad primitive {p:?}")));
            }
        }
        Ok(Self { primitives, near, far })
    }

    /// Diagonal of the bounding box of all primitives.
    pub fn diameter(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.primitives {
            let (a, b) = match p.shape {
                Shape::Sphere { center, radius } => (center.add_scalar(-radius), center.add_scalar(radius)),
                Shape::Cuboid { min, max } => (min, max),
            };
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
        if self.primitives.is_empty() {
            0.0
        } else {
            (hi - lo).norm()
        }
    }

    pub fn density(&self, x: &Vector3<f64>) -> (f64, Color) {
        let mut sigma = 0.0;
        let mut c = [0.0; 3];
        for p in &self.primitives {
            if p.shape.contains(x) {
                sigma += p.sigma;
                let col = p.texture.color_at(x);
                for k in 0..3 {
                    c[k] += p.sigma * col[k];
                }
            }
        }
        if sigma > 0.0 {
            c.iter_mut().for_each(|v| *v /= sigma);
        }
        (sigma, c)
    }

    /// Exact volume rendering integral over `[t_near, t_far]` for
    /// piecewise-constant density, with each primitive's color held at its
    /// value where the ray enters it. Overlapping primitives add densities and
    /// mix colors in proportion to density.
    pub fn render_ray(&self, ray: &Ray) -> GroundTruthSample {
        let mut spans: Vec<(f64, f64, usize, Color)> = Vec::new();
        let mut cuts = vec![ray.t_near, ray.t_far];
        for (k, p) in self.primitives.iter().enumerate() {
            if let Some((a, b)) = p.shape.intersect(&ray.origin, &ray.dir) {
                let (a, b) = (a.max(ray.t_near), b.min(ray.t_far));
                if b > a {
                    spans.push((a, b, k, p.texture.color_at(&ray.at(a))));
                    cuts.push(a);
                    cuts.push(b);
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut color = [0.0; 3];
        let (mut trans, mut ws, mut wt) = (1.0f64, 0.0, 0.0);
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let mid = 0.5 * (a + b);
            let mut sigma = 0.0;
            let mut c = [0.0; 3];
            for &(s0, s1, k, col) in &spans {
                if s0 <= mid && mid <= s1 {
                    let p = &self.primitives[k];
                    sigma += p.sigma;
                    for ch in 0..3 {
                        c[ch] += p.sigma * col[ch];
                    }
                }
            }
            if sigma <= 0.0 {
                continue;
            }
            let len = b - a;
            let e = (-sigma * len).exp();
            let w = trans * (1.0 - e);
            for ch in 0..3 {
                color[ch] += w * c[ch] / sigma;
            }
            // integral of sigma e^{-sigma s} (a + s) over [0, len]
            ws += w;
            wt += trans * (a * (1.0 - e) + (1.0 - e) / sigma - len * e);
            trans *= e;
        }
        GroundTruthSample {
            color,
            depth: (ws >= MIN_WEIGHT_SUM).then(|| wt / ws),
            weight_sum: ws,
        }
    }

    /// Distance along the ray to the first primitive surface at `t > t_min`.
    pub fn first_hit(&self, o: &Vector3<f64>, d: &Vector3<f64>, t_min: f64) -> Option<f64> {
        self.primitives
            .iter()
            .filter(|p| p.sigma > 0.0)
            .filter_map(|p| p.shape.intersect(o, d))
            .filter_map(|(a, b)| {
                if a > t_min {
                    Some(a)
                } else if b > t_min {
                    Some(t_min)
                } else {
                    None
                }
            })
            .min_by(f64::total_cmp)
    }

    /// Per-pixel closed-form color, expected depth and opacity at integer pixels.
    pub fn render_ground_truth(&self, cam: &Intrinsics, pose: &Pose) -> Result<GroundTruthView> {
        let (w, h) = (cam.width, cam.height);
        let mut colors = Vec::with_capacity(w * h);
        let mut depth = Vec::with_capacity(w * h);
        let mut opacity = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let ray = pixel_ray([x as f64, y as f64], cam, pose, self.near, self.far)?;
                let s = self.render_ray(&ray);
                colors.push(s.color);
                depth.push(s.depth.unwrap_or(0.0));
                opacity.push(s.weight_sum);
            }
        }
        Ok(GroundTruthView {
            image: Image::from_colors(w, h, 3, &colors)?,
            depth: DepthMap::new(w, h, depth)?,
            opacity,
        })
    }

    /// Whether world point `x` is the first surface seen from the camera.
    pub fn visible_from(&self, x: &Vector3<f64>, pose: &Pose) -> bool {
        let o = pose.center();
        let v = x - o;
        let dist = v.norm();
        let d = v / dist;
        match self.first_hit(&o, &d, 0.0) {
            Some(t) => t >= dist - 1e-7 * (1.0 + dist),
            None => true,
        }
    }
}

/// Stand-in for a feature matcher: rays through random reference pixels are
/// intersected with the scene; surface points that are in bounds and
/// unoccluded in all three cameras are projected, then perturbed by Gaussian
/// noise of `sigma_px`. At most `n_points` triples are returned.
pub fn toy_match(
    scene: &SyntheticScene,
    cams: &[(Intrinsics, Pose); 3],
    n_points: usize,
    sigma_px: f64,
    rng: &mut impl Rng,
) -> Vec<[[f64; 2]; 3]> {
    let noise = Normal::new(0.0, sigma_px.max(0.0)).expect("finite sigma");
    let (ref_cam, ref_pose) = &cams[0];
    let mut out = Vec::new();
    'points: for _ in 0..n_points {
        let px = [
            rng.gen::<f64>() * (ref_cam.width - 1) as f64,
            rng.gen::<f64>() * (ref_cam.height - 1) as f64,
        ];
        let Ok(ray) = pixel_ray(px, ref_cam, ref_pose, 0.0, 1.0) else { continue };
        let Some(t) = scene.first_hit(&ray.origin, &ray.dir, 0.0) else { continue };
        let x = ray.at(t);
        let mut triple = [[0.0; 2]; 3];
        for (slot, (cam, pose)) in triple.iter_mut().zip(cams) {
            let Ok(p) = project(&x, cam, pose) else { continue 'points };
            if !cam.contains(p) || !scene.visible_from(&x, pose) {
                continue 'points;
            }
            *slot = [p.x, p.y];
        }
        if sigma_px > 0.0 {
            for (slot, (cam, _)) in triple.iter_mut().zip(cams) {
                let q = [slot[0] + noise.sample(rng), slot[1] + noise.sample(rng)];
                if !cam.contains(nalgebra::Vector2::new(q[0], q[1])) {
                    continue 'points;
                }
                *slot = q;
            }
        }
        out.push(triple);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    TwoSpheres,
    TexturedBox,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-spheres" => Ok(Preset::TwoSpheres),
            "textured-box" => Ok(Preset::TexturedBox),
            _ => Err(Error::Config(format!("unknown preset {s:?}; expected two-spheres or textured-box"))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::TwoSpheres => "two-spheres",
            Preset::TexturedBox => "textured-box",
        }
    }
}

/// Scene plus cameras of a preset, in dataset order.
#[derive(Clone, Debug)]
pub struct PresetScene {
    pub scene: SyntheticScene,
    pub cameras: Vec<(Intrinsics, Pose)>,
}

pub const PRESET_SIZE: usize = 64;
const PRESET_FOCAL: f64 = 80.0;

/// Nine cameras on a 3x3 grid in the plane facing `target`; the central one is
/// placed at index 7 so that the every-8th hold-out picks it.
fn grid_cameras(eye: Vector3<f64>, target: Vector3<f64>, spacing: f64) -> Result<Vec<(Intrinsics, Pose)>> {
    let cam = Intrinsics::centered(PRESET_FOCAL, PRESET_SIZE, PRESET_SIZE)?;
    let up = Vector3::new(0.0, -1.0, 0.0);
    let base = Pose::look_at(eye, target, up)?;
    let right = base.r.column(0).into_owned();
    let down = base.r.column(1).into_owned();
    let mut offsets: Vec<(f64, f64)> = Vec::new();
    for gy in [-1.0, 0.0, 1.0] {
        for gx in [-1.0, 0.0, 1.0] {
            if gx != 0.0 || gy != 0.0 {
                offsets.push((gx, gy));
            }
        }
    }
    offsets.insert(7, (0.0, 0.0));
    offsets
        .into_iter()
        .map(|(gx, gy)| {
            let e = eye + right * (gx * spacing) + down * (gy * spacing);
            Ok((cam, Pose::look_at(e, target, up)?))
        })
        .collect()
}

fn waves(base: Color, amp: f64, freq: [[f64; 3]; 3], phase: Color) -> Texture {
    Texture::Waves {
        base,
        amp: [amp; 3],
        freq: freq.map(|f| Vector3::new(f[0], f[1], f[2])),
        phase,
    }
}

/// A slab facing the cameras at depth `z`, `2 half` wide.
fn wall(z: f64, half: f64, sigma: f64, texture: Texture) -> Primitive {
    Primitive {
        shape: Shape::Cuboid {
            min: Vector3::new(-half, -half, z),
            max: Vector3::new(half, half, z + 0.2),
        },
        sigma,
        texture,
    }
}

// Textures vary over a few pixels at the preset resolution, slowly enough for
// bilinear interpolation to reproduce them; object outlines are the only
// hard edges.
pub fn preset(p: Preset) -> Result<PresetScene> {
    let sigma = 100.0;
    match p {
        Preset::TwoSpheres => {
            let prims = vec![
                Primitive {
                    shape: Shape::Sphere {
                        center: Vector3::new(-0.45, 0.1, 0.0),
                        radius: 0.45,
                    },
                    sigma,
                    texture: waves([0.75, 0.3, 0.2], 0.15, [[6.0, 3.0, 0.0], [0.0, 7.0, 2.0], [3.0, 0.0, 6.0]], [0.0, 1.0, 2.0]),
                },
                Primitive {
                    shape: Shape::Sphere {
                        center: Vector3::new(0.5, -0.15, -0.3),
                        radius: 0.35,
                    },
                    sigma,
                    texture: waves([0.2, 0.45, 0.75], 0.15, [[0.0, 6.0, 3.0], [7.0, 0.0, 2.0], [4.0, 5.0, 0.0]], [0.5, 2.5, 1.0]),
                },
                wall(
                    1.0,
                    3.0,
                    sigma,
                    waves([0.5, 0.5, 0.5], 0.3, [[3.5, 1.2, 0.0], [-1.0, 3.8, 0.0], [2.6, -2.6, 0.0]], [0.3, 1.7, 4.0]),
                ),
            ];
            let scene = SyntheticScene::new(prims, 2.0, 6.5)?;
            let cameras = grid_cameras(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), 0.4)?;
            Ok(PresetScene { scene, cameras })
        }
        Preset::TexturedBox => {
            let prims = vec![
                Primitive {
                    shape: Shape::Cuboid {
                        min: Vector3::repeat(-0.6),
                        max: Vector3::repeat(0.6),
                    },
                    sigma,
                    texture: waves([0.55, 0.45, 0.5], 0.3, [[5.0, 2.0, 3.0], [-2.0, 5.0, 3.5], [3.0, -3.0, 4.5]], [0.0, 2.0, 4.0]),
                },
                wall(
                    1.6,
                    4.0,
                    sigma,
                    waves([0.45, 0.55, 0.45], 0.25, [[2.5, 1.0, 0.0], [-1.0, 2.8, 0.0], [2.0, 2.0, 0.0]], [1.0, 0.0, 3.0]),
                ),
            ];
            let scene = SyntheticScene::new(prims, 2.0, 7.5)?;
            let cameras = grid_cameras(Vector3::new(1.6, -1.4, -3.2), Vector3::zeros(), 0.4)?;
            Ok(PresetScene { scene, cameras })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{composite, stratified_samples, RaySampleBatch};
    use crate::geometry::{fundamental_matrix_between, relative_pose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(center: Vector3<f64>, radius: f64, sigma: f64, color: Color) -> Primitive {
        Primitive {
            shape: Shape::Sphere { center, radius },
            sigma,
            texture: Texture::Solid(color),
        }
    }

    fn z_ray(near: f64, far: f64) -> Ray {
        Ray {
            origin: Vector3::zeros(),
            dir: Vector3::z(),
            t_near: near,
            t_far: far,
        }
    }

    #[test]
    fn empty_scene_is_black_with_invalid_depth() {
        let scene = SyntheticScene::new(vec![], 1.0, 5.0).unwrap();
        let s = scene.render_ray(&z_ray(1.0, 5.0));
        assert_eq!(s.color, [0.0; 3]);
        assert_eq!(s.depth, None);
        assert_eq!(s.weight_sum, 0.0);
    }

    #[test]
    fn opaque_sphere_through_center() {
        let scene = SyntheticScene::new(vec![sphere(Vector3::new(0.0, 0.0, 4.0), 1.0, 1e12, [0.2, 0.5, 0.7])], 1.0, 8.0).unwrap();
        let s = scene.render_ray(&z_ray(1.0, 8.0));
        for k in 0..3 {
            assert!((s.color[k] - [0.2, 0.5, 0.7][k]).abs() < 1e-12);
        }
        assert!((s.depth.unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn slab_transmits_exp_minus_two() {
        let slab = Primitive {
            shape: Shape::Cuboid {
                min: Vector3::new(-5.0, -5.0, 2.0),
                max: Vector3::new(5.0, 5.0, 4.0),
            },
            sigma: 1.0,
            texture: Texture::Solid([1.0; 3]),
        };
        let scene = SyntheticScene::new(vec![slab], 0.5, 10.0).unwrap();
        let s = scene.render_ray(&z_ray(0.5, 10.0));
        assert!((1.0 - s.weight_sum - (-2.0f64).exp()).abs() < 1e-14);
        // expected depth of an exponential truncated to [2, 4]
        let e = (-2.0f64).exp();
        let mean = 2.0 + (1.0 - e - 2.0 * e) / (1.0 - e);
        assert!((s.depth.unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn closed_form_agrees_with_quadrature() {
        let scene = SyntheticScene::new(
            vec![
                sphere(Vector3::new(0.1, 0.0, 3.0), 0.8, 1.5, [0.9, 0.2, 0.1]),
                sphere(Vector3::new(-0.1, 0.1, 3.6), 0.6, 3.0, [0.1, 0.8, 0.3]),
            ],
            1.0,
            6.0,
        )
        .unwrap();
        let ray = z_ray(1.0, 6.0);
        let exact = scene.render_ray(&ray);
        let t = stratified_samples(&ray, 2048, None);
        let (sig, col): (Vec<f64>, Vec<Color>) = t.iter().map(|t| scene.density(&ray.at(*t))).unzip();
        let batch = RaySampleBatch::new(t, sig, col, ray.t_far).unwrap();
        let q = composite(&batch, &ray);
        for k in 0..3 {
            assert!((q.color[k] - exact.color[k]).abs() < 2e-3, "{:?} vs {:?}", q.color, exact.color);
        }
    }

    #[test]
    fn presets_are_valid_and_every_camera_sees_something() {
        for p in [Preset::TwoSpheres, Preset::TexturedBox] {
            let ps = preset(p).unwrap();
            assert_eq!(ps.cameras.len(), 9);
            for (cam, pose) in &ps.cameras {
                let gt = ps.scene.render_ground_truth(cam, pose).unwrap();
                assert!(gt.opacity.iter().filter(|o| **o > 0.5).count() > 100);
                assert!(gt.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("cube".parse::<Preset>().is_err());
    }

    #[test]
    fn toy_matches_are_epipolar_exact_and_in_bounds() {
        let ps = preset(Preset::TwoSpheres).unwrap();
        let cams = [ps.cameras[0], ps.cameras[4], ps.cameras[8]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = toy_match(&ps.scene, &cams, 500, 0.0, &mut rng);
        assert!(m.len() > 100);
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let rel = relative_pose(&cams[a].1, &cams[b].1).unwrap();
            let f = fundamental_matrix_between(&cams[a].0, &cams[b].0, &rel).unwrap();
            for t in &m {
                let pa = nalgebra::Vector3::new(t[a][0], t[a][1], 1.0);
                let pb = nalgebra::Vector3::new(t[b][0], t[b][1], 1.0);
                assert!((pb.transpose() * f * pa)[0].abs() < 1e-9);
            }
        }
        for t in &m {
            for (p, (cam, _)) in t.iter().zip(&cams) {
                assert!(cam.contains(nalgebra::Vector2::new(p[0], p[1])));
            }
        }
    }

    #[test]
    fn occluded_points_are_never_matched() {
        // small sphere hidden behind a big one as seen from the cameras
        let scene = SyntheticScene::new(
            vec![
                sphere(Vector3::new(0.0, 0.0, 0.0), 1.0, 100.0, [0.5; 3]),
                sphere(Vector3::new(0.0, 0.0, 2.0), 0.2, 100.0, [0.9, 0.1, 0.1]),
            ],
            1.0,
            10.0,
        )
        .unwrap();
        let cam = Intrinsics::centered(60.0, 64, 64).unwrap();
        let up = Vector3::new(0.0, -1.0, 0.0);
        let mk = |x: f64| (cam, Pose::look_at(Vector3::new(x, 0.0, -4.0), Vector3::zeros(), up).unwrap());
        let cams = [mk(0.0), mk(0.1), mk(-0.1)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = toy_match(&scene, &cams, 2000, 0.0, &mut rng);
        assert!(!m.is_empty());
        for t in &m {
            let ray = pixel_ray(t[0], &cam, &cams[0].1, 0.0, 10.0).unwrap();
            let hit = scene.first_hit(&ray.origin, &ray.dir, 0.0).unwrap();
            // every emitted point lies on the big sphere's visible side
            assert!((ray.at(hit).norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn noisy_matches_move_pixels() {
        let ps = preset(Preset::TexturedBox).unwrap();
        let cams = [ps.cameras[0], ps.cameras[1], ps.cameras[2]];
        let clean = toy_match(&ps.scene, &cams, 200, 0.0, &mut ChaCha8Rng::seed_from_u64(3));
        let noisy = toy_match(&ps.scene, &cams, 200, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(!noisy.is_empty());
        assert_ne!(clean.first(), noisy.first());
    }
}
