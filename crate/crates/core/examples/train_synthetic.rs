//! Trains the desk configuration on a synthetic preset, renders the held-out
//! view and leaves a checkpoint that `render_checkpoint` and the CLI can load.
//!
//! cargo run --release --example train_synthetic -- two-spheres 2000 /tmp/run

use std::path::PathBuf;
use std::time::Instant;

use sfmnerf::data::{synthesize, Preset};
use sfmnerf::trainer::{render_index, write_rendered, TrainConfig, Trainer, CHECKPOINT_FILE};

fn main() -> sfmnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset: Preset = args.next().as_deref().unwrap_or("two-spheres").parse()?;
    let steps: u64 = args.next().map(|s| s.parse().expect("step count")).unwrap_or(2000);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "/tmp/sfmnerf-run".into()));

    let (ds, scene) = synthesize(preset, 0)?;
    let cfg = TrainConfig {
        max_steps: steps,
        ..TrainConfig::desk()
    };
    let data = out.join("data");
    ds.write(&data)?;
    let mut t = Trainer::new(cfg, ds, &data)?;
    println!("{} triplets, patch {}, diameter {:.3}", t.views.len(), t.patch_size, scene.diameter());

    let start = Instant::now();
    while t.step < steps {
        let (report, _) = t.step()?;
        if t.step % 100 == 0 {
            println!("step {:5}  total {:.4e}  ren {:.4e}  {:.1}s", t.step, report.total, report.raw[0], start.elapsed().as_secs_f64());
        }
        if t.step % 500 == 0 || t.step == steps {
            println!("{}", t.evaluate()?.log_line(t.step));
        }
    }
    t.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
    for &k in &t.ds.test {
        let view = render_index(&t.nets.coarse, &t.nets.fine, &t.ds, k, t.cfg.n_coarse, t.cfg.n_fine)?;
        for p in write_rendered(&view, &out, &format!("test_{k:03}"))? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
