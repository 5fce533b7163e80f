//! Renders every camera of a trained run (or an untrained network when no
//! checkpoint is given) and prints per-view PSNR against the dataset.
//!
//! cargo run --release --example render_checkpoint -- run/checkpoint.ckpt /tmp/renders

use std::path::PathBuf;

use sfmnerf::data::{load_dataset, synthesize, Preset};
use sfmnerf::trainer::{load_run, metrics_for, render_index, write_rendered, Networks, TrainConfig};

fn main() -> sfmnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().map(PathBuf::from);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "/tmp/sfmnerf-renders".into()));

    let (coarse, fine, ds, n_c, n_f) = match ckpt {
        Some(p) => {
            let run = load_run(&p)?;
            let ds = load_dataset(&run.state.data_dir)?;
            (run.coarse, run.fine, ds, run.state.config.n_coarse, run.state.config.n_fine)
        }
        None => {
            let cfg = TrainConfig::desk();
            let nets = Networks::init(&cfg, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
            (nets.coarse, nets.fine, synthesize(Preset::TwoSpheres, 0)?.0, cfg.n_coarse, cfg.n_fine)
        }
    };
    for k in 0..ds.len() {
        let view = render_index(&coarse, &fine, &ds, k, n_c, n_f)?;
        let m = metrics_for(k, &view, &ds.images[k], ds.depths.as_ref().map(|d| &d[k]))?;
        write_rendered(&view, &out, &format!("view_{k:03}"))?;
        let split = if ds.test.contains(&k) { "test" } else { "train" };
        println!("{k:3} {split:5} psnr {:6.2}  ssim {:.3}", m.psnr, m.ssim);
    }
    println!("renders in {}", out.display());
    Ok(())
}
