//! The loss ablation ladder at a reduced step count. Each rung adds terms to
//! the previous one; the table shows held-out PSNR for every rung.
//!
//! cargo run --release --example ablation -- 1500

use sfmnerf::data::{synthesize, Preset};
use sfmnerf::losses::LossWeights;
use sfmnerf::trainer::{TrainConfig, Trainer};

fn main() -> sfmnerf::Result<()> {
    let steps: u64 = std::env::args().nth(1).map(|s| s.parse().expect("step count")).unwrap_or(1500);
    let (ds, _) = synthesize(Preset::TwoSpheres, 0)?;
    let full = LossWeights::default();
    let mut w = LossWeights::basic();
    let mut rungs = Vec::new();
    rungs.push(("basic", w, false));
    w.three_d = full.three_d;
    rungs.push(("+3d", w, false));
    w.ds = full.ds;
    w.pr = full.pr;
    w.ssim = full.ssim;
    rungs.push(("+ds+pr+ssim", w, false));
    rungs.push(("+sub-pixel", w, true));
    w.epi = full.epi;
    rungs.push(("+epi", w, true));

    let mut prev: Option<f64> = None;
    for (name, weights, subpixel) in rungs {
        let cfg = TrainConfig {
            weights,
            subpixel,
            max_steps: steps,
            ..TrainConfig::desk()
        };
        let mut t = Trainer::new(cfg, ds.clone(), std::path::Path::new("."))?;
        while t.step < steps {
            t.step()?;
        }
        let ev = t.evaluate()?;
        let delta = prev.map(|p| format!("{:+.2}", ev.mean_psnr - p)).unwrap_or_default();
        println!("{name:12} psnr {:.2} dB {delta:>7}  ssim {:.3}", ev.mean_psnr, ev.mean_ssim);
        prev = Some(ev.mean_psnr);
    }
    Ok(())
}
