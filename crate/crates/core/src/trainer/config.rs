use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{MlpConfig, SigmaActivation};
use crate::data::{parse_key_values, parse_value};
use crate::error::{Error, Result};
use crate::geometry::MAX_COLOR_DISTANCE;
use crate::losses::LossWeights;

/// Everything that controls a training run. Parsed from `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    /// Side of the square patch; `None` defers to the dataset's `scene.cfg`, then 48.
    pub patch_size: Option<usize>,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub lr: f64,
    /// Final over initial learning rate, reached at `max_steps` by exponential decay; 1 keeps it constant.
    pub lr_decay: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// 0 disables periodic evaluation.
    pub eval_every: u64,
    /// 0 writes a checkpoint only at the end.
    pub checkpoint_every: u64,
    pub epipolar_threshold: f64,
    pub subpixel: bool,
    /// Matches per step that get an epipolar term.
    pub epi_matches: usize,
    /// Candidates kept per epipolar line, evenly spaced; 0 keeps all.
    pub epi_candidates: usize,
    /// Matches per step for the matched-features term; 0 uses all.
    pub matches_per_step: usize,
    pub net: MlpConfig,
}

pub const DEFAULT_PATCH_SIZE: usize = 48;

impl Default for TrainConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl TrainConfig {
    /// Settings of the original method.
    pub fn reference() -> Self {
        Self {
            weights: LossWeights::default(),
            patch_size: Some(DEFAULT_PATCH_SIZE),
            n_coarse: 64,
            n_fine: 64,
            lr: 1e-3,
            lr_decay: 1.0,
            max_steps: 200_000,
            seed: 0,
            eval_every: 10_000,
            checkpoint_every: 10_000,
            epipolar_threshold: 0.05,
            subpixel: true,
            epi_matches: 16,
            epi_candidates: 0,
            matches_per_step: 0,
            net: MlpConfig::nerf(),
        }
    }

    /// Small network and budgets that train a 64x64 synthetic scene on one CPU core.
    pub fn desk() -> Self {
        Self {
            patch_size: None,
            n_coarse: 32,
            n_fine: 32,
            lr: 3e-3,
            lr_decay: 0.01,
            max_steps: 8000,
            eval_every: 1000,
            checkpoint_every: 1000,
            epi_matches: 4,
            epi_candidates: 16,
            matches_per_step: 16,
            net: MlpConfig {
                depth: 4,
                width: 64,
                skip: Some(2),
                pos_freqs: 6,
                dir_freqs: 2,
                sigma_act: SigmaActivation::Softplus,
            },
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.net.validate()?;
        if self.patch_size.is_some_and(|p| p < 4) {
            return Err(Error::Config("patch_size must be at least 4".into()));
        }
        if self.n_coarse < 2 || self.n_fine < 2 {
            return Err(Error::Config("sample counts must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if !(0.0..=MAX_COLOR_DISTANCE).contains(&self.epipolar_threshold) {
            return Err(Error::Config("epipolar_threshold must lie in [0, sqrt(3)]".into()));
        }
        Ok(())
    }

    /// Learning rate for the update that follows `step` completed steps.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.lr_decay == 1.0 || self.max_steps == 0 {
            return self.lr;
        }
        let frac = (step as f64 / self.max_steps as f64).min(1.0);
        self.lr * self.lr_decay.powf(frac)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Starts from `preset` (reference unless given), then applies every other key.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let pairs = parse_key_values(text, path)?;
        let mut cfg = match pairs.iter().find(|(_, k, _)| k == "preset") {
            Some((line, _, v)) => match v.as_str() {
                "reference" => Self::reference(),
                "desk" => Self::desk(),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: *line,
                        msg: format!("unknown preset {v:?}"),
                    })
                }
            },
            None => Self::reference(),
        };
        for (line, k, v) in &pairs {
            let (line, v) = (*line, v.as_str());
            macro_rules! set {
                ($field:expr) => {
                    $field = parse_value(path, line, k, v)?
                };
            }
            match k.as_str() {
                "preset" => {}
                "lambda_ren" => set!(cfg.weights.ren),
                "lambda_3d" => set!(cfg.weights.three_d),
                "lambda_pr" => set!(cfg.weights.pr),
                "lambda_epi" => set!(cfg.weights.epi),
                "lambda_ssim" => set!(cfg.weights.ssim),
                "lambda_ds" => set!(cfg.weights.ds),
                "patch_size" => {
                    cfg.patch_size = if v == "auto" { None } else { Some(parse_value(path, line, k, v)?) }
                }
                "n_coarse" => set!(cfg.n_coarse),
                "n_fine" => set!(cfg.n_fine),
                "lr" => set!(cfg.lr),
                "lr_decay" => set!(cfg.lr_decay),
                "max_steps" => set!(cfg.max_steps),
                "seed" => set!(cfg.seed),
                "eval_every" => set!(cfg.eval_every),
                "checkpoint_every" => set!(cfg.checkpoint_every),
                "epipolar_threshold" => set!(cfg.epipolar_threshold),
                "subpixel" => set!(cfg.subpixel),
                "epi_matches" => set!(cfg.epi_matches),
                "epi_candidates" => set!(cfg.epi_candidates),
                "matches_per_step" => set!(cfg.matches_per_step),
                "net_depth" => set!(cfg.net.depth),
                "net_width" => set!(cfg.net.width),
                "net_skip" => {
                    cfg.net.skip = if v == "none" { None } else { Some(parse_value(path, line, k, v)?) }
                }
                "pos_freqs" => set!(cfg.net.pos_freqs),
                "dir_freqs" => set!(cfg.net.dir_freqs),
                "sigma_activation" => set!(cfg.net.sigma_act),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!("unknown key {k:?}"),
                    })
                }
            }
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        Ok(cfg)
    }

    /// Text that [`TrainConfig::parse`] reads back to an equal value.
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let mut s = String::new();
        for (k, v) in [
            ("lambda_ren", w.ren),
            ("lambda_3d", w.three_d),
            ("lambda_pr", w.pr),
            ("lambda_epi", w.epi),
            ("lambda_ssim", w.ssim),
            ("lambda_ds", w.ds),
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("epipolar_threshold", self.epipolar_threshold),
        ] {
            writeln!(s, "{k} = {v}").unwrap();
        }
        match self.patch_size {
            Some(p) => writeln!(s, "patch_size = {p}").unwrap(),
            None => writeln!(s, "patch_size = auto").unwrap(),
        }
        for (k, v) in [
            ("n_coarse", self.n_coarse as u64),
            ("n_fine", self.n_fine as u64),
            ("max_steps", self.max_steps),
            ("seed", self.seed),
            ("eval_every", self.eval_every),
            ("checkpoint_every", self.checkpoint_every),
            ("epi_matches", self.epi_matches as u64),
            ("epi_candidates", self.epi_candidates as u64),
            ("matches_per_step", self.matches_per_step as u64),
            ("net_depth", self.net.depth as u64),
            ("net_width", self.net.width as u64),
            ("pos_freqs", self.net.pos_freqs as u64),
            ("dir_freqs", self.net.dir_freqs as u64),
        ] {
            writeln!(s, "{k} = {v}").unwrap();
        }
        match self.net.skip {
            Some(k) => writeln!(s, "net_skip = {k}").unwrap(),
            None => writeln!(s, "net_skip = none").unwrap(),
        }
        writeln!(s, "subpixel = {}", self.subpixel).unwrap();
        let act = match self.net.sigma_act {
            SigmaActivation::Softplus => "softplus",
            SigmaActivation::Relu => "relu",
        };
        writeln!(s, "sigma_activation = {act}").unwrap();
        s
    }
}
