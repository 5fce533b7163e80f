use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sfmnerf::data::{load_dataset, synthesize, Preset};
use sfmnerf::trainer::{evaluate, load_run, render_index, run_training, write_rendered, TrainConfig};

#[derive(Parser)]
#[command(name = "sfmnerf", about = "Radiance fields trained with structure-from-motion supervision")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a dataset directory; resumes if OUT already holds a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Report PSNR, SSIM and depth RMSE on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Render one dataset camera to PNG plus depth and opacity PFMs.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        camera: usize,
        #[arg(long)]
        out: PathBuf,
        /// Dataset to take the camera from; defaults to the one the run trained on.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a synthetic dataset with exact poses, depths and matches.
    MakeSynthetic {
        #[arg(long)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> sfmnerf::Result<()> {
    match cli.cmd {
        Cmd::Train { data, config, seed, out } => {
            let mut cfg = TrainConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let summary = run_training(cfg, &data, &out, |msg| eprintln!("{msg}"))?;
            println!("trained {} steps; checkpoint in {}", summary.steps, out.display());
            if let Some(ev) = summary.final_eval {
                println!("{}", ev.log_line(summary.steps));
            }
        }
        Cmd::Eval { data, ckpt } => {
            let ds = load_dataset(&data)?;
            let saved = load_run(&ckpt)?;
            let cfg = &saved.state.config;
            let ev = evaluate(&saved.coarse, &saved.fine, &ds, cfg.n_coarse, cfg.n_fine)?;
            for m in &ev.images {
                let depth = m.depth_rmse.map(|d| format!(" depth_rmse={d:.6}")).unwrap_or_default();
                println!("{} psnr={:.4} ssim={:.4}{depth}", ds.names[m.index], m.psnr, m.ssim);
            }
            println!("{}", ev.log_line(saved.state.step));
        }
        Cmd::Render { ckpt, camera, out, data } => {
            let saved = load_run(&ckpt)?;
            let ds = load_dataset(data.as_ref().unwrap_or(&saved.state.data_dir))?;
            let cfg = &saved.state.config;
            let view = render_index(&saved.coarse, &saved.fine, &ds, camera, cfg.n_coarse, cfg.n_fine)?;
            for p in write_rendered(&view, &out, &format!("view_{camera:03}"))? {
                println!("{}", p.display());
            }
        }
        Cmd::MakeSynthetic { preset, out, seed } => {
            let (ds, _) = synthesize(preset, seed)?;
            ds.write(&out)?;
            println!(
                "{}: {} images ({} train, {} test) in {}",
                preset.name(),
                ds.len(),
                ds.train.len(),
                ds.test.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
