use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::{evaluate, EvalReport};
use super::step::{train_step, Networks, TripletView};
use super::{TrainConfig, DEFAULT_PATCH_SIZE};
use crate::autodiff::{Checkpoint, MlpWeights};
use crate::data::{build_triplets, load_dataset, SceneDataset};
use crate::error::{Error, Result};
use crate::field::RenderedView;
use crate::imaging::{write_pfm, write_png};
use crate::losses::{LossReport, PrStats};

const STATE_MAGIC: &[u8; 8] = b"TRAINST1";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.log";

/// Networks, optimizer, RNG and triplet schedule of a run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub data_dir: PathBuf,
    pub ds: SceneDataset,
    pub views: Vec<TripletView>,
    pub warnings: Vec<String>,
    pub nets: Networks,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub order: Vec<usize>,
    pub cursor: usize,
    pub patch_size: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, ds: SceneDataset, data_dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let (triplets, warnings) = build_triplets(&ds, &ds.match_blocks);
        if triplets.is_empty() {
            return Err(Error::Dataset(format!("no training triplets ({} warnings)", warnings.len())));
        }
        let views = triplets
            .into_iter()
            .map(|t| TripletView::new(&ds, t))
            .collect::<Result<Vec<_>>>()?;
        let patch_size = cfg.patch_size.or(ds.config.patch_size).unwrap_or(DEFAULT_PATCH_SIZE);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let nets = Networks::init(&cfg, &mut rng)?;
        let mut order: Vec<usize> = (0..views.len()).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            cfg,
            data_dir: data_dir.to_path_buf(),
            ds,
            views,
            warnings,
            nets,
            step: 0,
            rng,
            order,
            cursor: 0,
            patch_size,
        })
    }

    /// One optimization step on the next triplet of the shuffled schedule.
    pub fn step(&mut self) -> Result<(LossReport, Option<PrStats>)> {
        let tv = &self.views[self.order[self.cursor]];
        let lr = self.cfg.lr_at(self.step);
        self.nets.adam_coarse.lr = lr;
        self.nets.adam_fine.lr = lr;
        let out = train_step(&mut self.nets, tv, &self.cfg, self.patch_size, &mut self.rng)?;
        self.cursor += 1;
        if self.cursor == self.order.len() {
            self.cursor = 0;
            self.order.shuffle(&mut self.rng);
        }
        self.step += 1;
        Ok(out)
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate(&self.nets.coarse, &self.nets.fine, &self.ds, self.cfg.n_coarse, self.cfg.n_fine)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut x = Vec::new();
        x.extend_from_slice(STATE_MAGIC);
        x.extend_from_slice(&self.step.to_le_bytes());
        x.extend_from_slice(&self.rng.get_seed());
        x.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        x.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        x.extend_from_slice(&(self.cursor as u64).to_le_bytes());
        x.extend_from_slice(&(self.order.len() as u64).to_le_bytes());
        for o in &self.order {
            x.extend_from_slice(&(*o as u64).to_le_bytes());
        }
        x.extend_from_slice(&(self.patch_size as u64).to_le_bytes());
        put_str(&mut x, &self.cfg.to_text());
        put_str(&mut x, &self.data_dir.to_string_lossy());
        Checkpoint {
            networks: vec![
                (self.nets.coarse.clone(), self.nets.adam_coarse.clone()),
                (self.nets.fine.clone(), self.nets.adam_fine.clone()),
            ],
            extra: x,
        }
    }

    /// Rebuilds a trainer from a checkpoint and its dataset. `cfg` replaces the
    /// stored configuration when given; the network shape must agree.
    pub fn from_checkpoint(ck: &Checkpoint, ds: SceneDataset, cfg: Option<TrainConfig>) -> Result<Self> {
        let st = TrainerState::decode(&ck.extra)?;
        let cfg = cfg.unwrap_or(st.config.clone());
        if ck.networks.len() != 2 || ck.networks[0].0.config != cfg.net {
            return Err(Error::Checkpoint("network shape differs from the configuration".into()));
        }
        let mut t = Trainer::new(cfg, ds, &st.data_dir)?;
        if st.order.len() != t.views.len() || st.order.iter().any(|o| *o >= t.views.len()) {
            return Err(Error::Checkpoint("triplet schedule does not match the dataset".into()));
        }
        t.nets = Networks {
            coarse: ck.networks[0].0.clone(),
            adam_coarse: ck.networks[0].1.clone(),
            fine: ck.networks[1].0.clone(),
            adam_fine: ck.networks[1].1.clone(),
        };
        t.step = st.step;
        t.rng = ChaCha8Rng::from_seed(st.rng_seed);
        t.rng.set_stream(st.rng_stream);
        t.rng.set_word_pos(st.rng_word_pos);
        t.order = st.order;
        t.cursor = st.cursor;
        t.patch_size = st.patch_size;
        Ok(t)
    }
}

fn put_str(x: &mut Vec<u8>, s: &str) {
    x.extend_from_slice(&(s.len() as u64).to_le_bytes());
    x.extend_from_slice(s.as_bytes());
}

/// Trainer fields stored in the checkpoint trailer.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub cursor: usize,
    pub order: Vec<usize>,
    pub patch_size: usize,
    pub config: TrainConfig,
    pub data_dir: PathBuf,
}

impl TrainerState {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Checkpoint("truncated trainer state".into());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
            pos += n;
            Ok(s)
        };
        if take(8)? != STATE_MAGIC {
            return Err(Error::Checkpoint("missing trainer state".into()));
        }
        let u64_of = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let step = u64_of(take(8)?);
        let rng_seed: [u8; 32] = take(32)?.try_into().expect("32 bytes");
        let rng_stream = u64_of(take(8)?);
        let rng_word_pos = u128::from_le_bytes(take(16)?.try_into().expect("16 bytes"));
        let cursor = u64_of(take(8)?) as usize;
        let n = u64_of(take(8)?) as usize;
        if n > bytes.len() {
            return Err(bad());
        }
        let mut order = Vec::with_capacity(n);
        for _ in 0..n {
            order.push(u64_of(take(8)?) as usize);
        }
        let patch_size = u64_of(take(8)?) as usize;
        let mut string = || -> Result<String> {
            let len = u64_of(take(8)?) as usize;
            String::from_utf8(take(len)?.to_vec()).map_err(|_| Error::Checkpoint("bad text in trainer state".into()))
        };
        let cfg_text = string()?;
        let data_dir = PathBuf::from(string()?);
        let config = TrainConfig::parse(&cfg_text, Path::new("<checkpoint>"))?;
        if cursor >= order.len().max(1) {
            return Err(Error::Checkpoint("bad schedule cursor".into()));
        }
        Ok(Self {
            step,
            rng_seed,
            rng_stream,
            rng_word_pos,
            cursor,
            order,
            patch_size,
            config,
            data_dir,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: u64,
    pub final_eval: Option<EvalReport>,
    pub last_loss: Option<LossReport>,
}

/// Keeps the log lines at or before `step` (a resumed run rewrites the rest).
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = String::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let s = line
            .split_whitespace()
            .find_map(|f| f.strip_prefix("step="))
            .and_then(|v| v.parse::<u64>().ok());
        if s.is_some_and(|s| s <= step) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept)?;
    Ok(())
}

/// Trains on the dataset at `data_dir`, writing `metrics.log` and
/// `checkpoint.ckpt` into `out_dir`. An existing checkpoint there is resumed.
/// `progress` receives human-oriented status lines.
pub fn run_training(cfg: TrainConfig, data_dir: &Path, out_dir: &Path, mut progress: impl FnMut(&str)) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let ds = load_dataset(data_dir)?;
    let ck_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(METRICS_FILE);
    let mut trainer = if ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        let t = Trainer::from_checkpoint(&ck, ds, Some(cfg))?;
        truncate_log(&log_path, t.step)?;
        progress(&format!("resuming from step {}", t.step));
        t
    } else {
        if log_path.exists() {
            std::fs::remove_file(&log_path)?;
        }
        Trainer::new(cfg, ds, data_dir)?
    };
    for w in &trainer.warnings {
        progress(&format!("warning: {w}"));
    }
    let mut log = OpenOptions::new().create(true).append(true).open(&log_path)?;
    let mut last = None;
    let mut final_eval = None;
    let cfg = trainer.cfg.clone();
    while trainer.step < cfg.max_steps {
        let (report, _) = trainer.step()?;
        let step = trainer.step;
        writeln!(log, "{}", report.log_line(step))?;
        last = Some(report);
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            let ev = trainer.evaluate()?;
            writeln!(log, "{}", ev.log_line(step))?;
            progress(&ev.log_line(step));
            final_eval = Some(ev);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            log.flush()?;
            trainer.checkpoint().save(&ck_path)?;
        }
    }
    log.flush()?;
    trainer.checkpoint().save(&ck_path)?;
    if final_eval.is_none() || cfg.eval_every == 0 || trainer.step % cfg.eval_every != 0 {
        let ev = trainer.evaluate()?;
        progress(&ev.log_line(trainer.step));
        final_eval = Some(ev);
    }
    Ok(RunSummary {
        steps: trainer.step,
        final_eval,
        last_loss: last,
    })
}

/// Networks and trainer state of a saved run, for evaluation and rendering.
pub struct SavedRun {
    pub coarse: MlpWeights,
    pub fine: MlpWeights,
    pub state: TrainerState,
}

pub fn load_run(path: &Path) -> Result<SavedRun> {
    let ck = Checkpoint::load(path)?;
    let state = TrainerState::decode(&ck.extra)?;
    let mut nets = ck.networks.into_iter().map(|(w, _)| w);
    match (nets.next(), nets.next(), nets.next()) {
        (Some(coarse), Some(fine), None) => Ok(SavedRun { coarse, fine, state }),
        _ => Err(Error::Checkpoint("expected a coarse and a fine network".into())),
    }
}

/// Writes `<stem>.png`, `<stem>_depth.pfm` and `<stem>_opacity.pfm`.
pub fn write_rendered(view: &RenderedView, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let png = dir.join(format!("{stem}.png"));
    let depth = dir.join(format!("{stem}_depth.pfm"));
    let opacity = dir.join(format!("{stem}_opacity.pfm"));
    write_png(&png, &view.image())?;
    write_pfm(&depth, view.width, view.height, 1, &view.depth)?;
    write_pfm(&opacity, view.width, view.height, 1, &view.opacity)?;
    Ok(vec![png, depth, opacity])
}
