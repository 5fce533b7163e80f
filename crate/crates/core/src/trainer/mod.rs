//! Training loop: configuration, per-step losses, evaluation and checkpointed runs.

mod config;
mod eval;
mod run;
mod step;

pub use config::{TrainConfig, DEFAULT_PATCH_SIZE};
pub use eval::{depth_rmse, evaluate, metrics_for, psnr, render_index, summarize, EvalReport, ImageMetrics};
pub use run::{
    load_run, run_training, write_rendered, RunSummary, SavedRun, Trainer, TrainerState, CHECKPOINT_FILE, METRICS_FILE};
pub use step::{
    draw_step, forward_step, train_step, EpiPick, FrozenPlans, Networks, StepDraw, StepOutput,
    TripletView,
};
