//! Alpha compositing against the closed-form integral of a homogeneous slab,
//! then a full ground-truth render of a preset compared with the quadrature.

use nalgebra::Vector3;
use sfmnerf::data::{preset, Preset};
use sfmnerf::field::{composite, stratified_samples, Ray, RaySampleBatch};

fn main() -> sfmnerf::Result<()> {
    let (sigma, color, t_near, t_far) = (1.5, [0.9, 0.4, 0.1], 0.5, 2.5);
    let ray = Ray {
        origin: Vector3::zeros(),
        dir: Vector3::z(),
        t_near,
        t_far,
    };
    let exact = 1.0 - (-sigma * (t_far - t_near)).exp();
    println!("homogeneous medium, sigma {sigma}: closed-form opacity {exact:.6}");
    for n in [16, 64, 128, 256, 512, 1024] {
        let t = stratified_samples(&ray, n, None);
        let b = RaySampleBatch::new(t, vec![sigma; n], vec![color; n], t_far)?;
        let r = composite(&b, &ray);
        let err = (0..3).map(|k| (r.color[k] - color[k] * exact).abs()).fold(0.0, f64::max);
        println!("  {n:5} samples  color error {err:.3e}  weight sum {:.6}", r.weight_sum);
    }

    // the same compositing along a pixel ray of a synthetic scene
    let ps = preset(Preset::TwoSpheres)?;
    let (cam, pose) = ps.cameras[7];
    let ray = sfmnerf::field::pixel_ray([32.0, 30.0], &cam, &pose, ps.scene.near, ps.scene.far)?;
    let gt = ps.scene.render_ray(&ray);
    println!("two-spheres center pixel: exact color {:?} depth {:?}", gt.color, gt.depth);
    for n in [64, 256, 1024] {
        let t = stratified_samples(&ray, n, None);
        let (sig, col): (Vec<f64>, Vec<[f64; 3]>) = t.iter().map(|&s| ps.scene.density(&ray.at(s))).unzip();
        let r = composite(&RaySampleBatch::new(t, sig, col, ray.t_far)?, &ray);
        println!("  {n:5} samples  color {:.4?}  depth {:.4}", r.color, r.depth);
    }
    Ok(())
}
