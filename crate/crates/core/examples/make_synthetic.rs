//! Writes a synthetic dataset to disk and checks that it loads back.
//!
//! cargo run --release --example make_synthetic -- two-spheres /tmp/two-spheres

use std::path::PathBuf;

use sfmnerf::data::{build_triplets, load_dataset, synthesize, Preset};

fn main() -> sfmnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset: Preset = args.next().as_deref().unwrap_or("two-spheres").parse()?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| format!("/tmp/{}", preset.name())));

    let (ds, scene) = synthesize(preset, 0)?;
    ds.write(&out)?;
    let back = load_dataset(&out)?;
    let (triplets, warnings) = build_triplets(&back, &back.match_blocks);

    println!("{} -> {}", preset.name(), out.display());
    println!("  images {} (train {:?}, test {:?})", back.len(), back.train, back.test);
    println!("  near {} far {} diameter {:.3}", back.config.near, back.config.far, scene.diameter());
    println!("  match blocks {}, triplets {}, warnings {}", back.match_blocks.len(), triplets.len(), warnings.len());
    for t in &triplets {
        let [r, i, j] = t.indices();
        println!("    ref {r} with {i},{j}: {} matches", t.matches.len());
    }
    Ok(())
}
