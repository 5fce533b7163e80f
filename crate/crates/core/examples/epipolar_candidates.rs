//! Exact matches from a synthetic scene: epipolar residuals and the
//! color-filtered candidate search that the epipolar loss draws from.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfmnerf::data::{synthesize, toy_match, Preset};
use sfmnerf::geometry::{epipolar_candidates, fundamental_matrix_between, relative_pose};

fn main() -> sfmnerf::Result<()> {
    let (ds, scene) = synthesize(Preset::TexturedBox, 0)?;
    let views = [ds.cameras[7], ds.cameras[1], ds.cameras[5]];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let matches = toy_match(&scene, &views, 200, 0.0, &mut rng);
    println!("{} noiseless matches between views 7, 1, 5", matches.len());

    let rel = relative_pose(&views[0].1, &views[1].1)?;
    let f = fundamental_matrix_between(&views[0].0, &views[1].0, &rel)?;
    let worst = matches
        .iter()
        .map(|m| {
            let p = Vector3::new(m[0][0], m[0][1], 1.0);
            let q = Vector3::new(m[1][0], m[1][1], 1.0);
            (q.transpose() * f * p)[0].abs()
        })
        .fold(0.0, f64::max);
    println!("largest |p'^T F p| = {worst:.2e}");

    for threshold in [0.02, 0.05, 0.2, sfmnerf::geometry::MAX_COLOR_DISTANCE] {
        let (mut found, mut total) = (0usize, 0usize);
        for m in &matches {
            let set = epipolar_candidates(m[0], &ds.images[7], &ds.images[1], &f, threshold)?;
            total += set.candidates.len();
            if set.candidates.iter().any(|c| (c[0] - m[1][0]).hypot(c[1] - m[1][1]) <= 1.0) {
                found += 1;
            }
        }
        println!(
            "threshold {threshold:.3}: true match kept for {found}/{} points, {:.1} candidates per line",
            matches.len(),
            total as f64 / matches.len() as f64
        );
    }
    Ok(())
}
