//! The six training losses and their weighted combination.
//!
//! Every function records its computation on a [`Tape`] so that gradients
//! reach the network weights through the rendered quantities.

mod photometric;

pub use photometric::{
    depth_smooth_loss, photometric_reconstruction_loss, ssim_loss, to_camera, warp_points, PrStats, WarpView, Warped,
};

use std::fmt::Write as _;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of each term in [`LossReport`] arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Ren = 0,
    ThreeD = 1,
    Pr = 2,
    Epi = 3,
    Ssim = 4,
    Ds = 5,
}

impl Term {
    pub const ALL: [Term; 6] = [Term::Ren, Term::ThreeD, Term::Pr, Term::Epi, Term::Ssim, Term::Ds];

    pub fn name(self) -> &'static str {
        match self {
            Term::Ren => "ren",
            Term::ThreeD => "3d",
            Term::Pr => "pr",
            Term::Epi => "epi",
            Term::Ssim => "ssim",
            Term::Ds => "ds",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ren: f64,
    pub three_d: f64,
    pub pr: f64,
    pub epi: f64,
    pub ssim: f64,
    pub ds: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ren: 1.0,
            three_d: 0.1,
            pr: 0.001,
            epi: 0.0001,
            ssim: 0.01,
            ds: 0.001,
        }
    }
}

impl LossWeights {
    /// Rendering loss only.
    pub fn basic() -> Self {
        Self {
            ren: 1.0,
            three_d: 0.0,
            pr: 0.0,
            epi: 0.0,
            ssim: 0.0,
            ds: 0.0,
        }
    }

    pub fn get(&self, t: Term) -> f64 {
        self.as_array()[t as usize]
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.ren, self.three_d, self.pr, self.epi, self.ssim, self.ds]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")))
        }
    }
}

/// Reasons parts of a loss were not evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SkipCounts {
    /// Rays with accumulated opacity too small to define `x_s`.
    pub degenerate_rays: usize,
    /// Epipolar queries whose candidate set was empty.
    pub empty_epipolar: usize,
    /// Patch pixels outside the match rectangle.
    pub masked_pixels: usize,
    /// Warped pixels behind the camera or outside the other image.
    pub invalid_warps: usize,
}

impl SkipCounts {
    pub fn add(&mut self, o: &SkipCounts) {
        self.degenerate_rays += o.degenerate_rays;
        self.empty_epipolar += o.empty_epipolar;
        self.masked_pixels += o.masked_pixels;
        self.invalid_warps += o.invalid_warps;
    }
}

/// Scalar tape nodes of the individual terms; `None` marks a skipped term.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub terms: [Option<Var>; 6],
}

impl LossParts {
    pub fn set(&mut self, t: Term, v: Option<Var>) {
        self.terms[t as usize] = v;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub raw: [f64; 6],
    pub weighted: [f64; 6],
    pub total: f64,
    pub skipped_terms: [bool; 6],
    pub skips: SkipCounts,
}

impl LossReport {
    /// One `key=value` line, stable across runs.
    pub fn log_line(&self, step: u64) -> String {
        let mut s = format!("step={step}");
        for t in Term::ALL {
            write!(s, " {}={:.9e}", t.name(), self.raw[t as usize]).unwrap();
        }
        for t in Term::ALL {
            write!(s, " w_{}={:.9e}", t.name(), self.weighted[t as usize]).unwrap();
        }
        write!(
            s,
            " total={:.9e} skip_rays={} skip_epi={} masked={} invalid_warps={}",
            self.total,
            self.skips.degenerate_rays,
            self.skips.empty_epipolar,
            self.skips.masked_pixels,
            self.skips.invalid_warps
        )
        .unwrap();
        s
    }
}

/// `sum_x lambda_x L_x` over the present terms. Terms with zero weight are
/// left out of the graph. With no term present the total is a constant 0.
pub fn total_loss(tape: &mut Tape, parts: &LossParts, weights: &LossWeights, skips: SkipCounts) -> (Var, LossReport) {
    let mut report = LossReport {
        skips,
        ..Default::default()
    };
    let mut acc: Option<Var> = None;
    for t in Term::ALL {
        let i = t as usize;
        let Some(v) = parts.terms[i] else {
            report.skipped_terms[i] = true;
            continue;
        };
        let raw = tape.value(v).item();
        let lam = weights.get(t);
        report.raw[i] = raw;
        report.weighted[i] = lam * raw;
        if lam == 0.0 {
            continue;
        }
        let scaled = tape.scale(v, lam);
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled),
            None => scaled,
        });
    }
    let total = acc.unwrap_or_else(|| tape.scalar(0.0));
    report.total = tape.value(total).item();
    (total, report)
}

/// Mean over pixels of the squared color error.
pub fn rendering_loss(tape: &mut Tape, rendered: Var, target: &Tensor) -> Var {
    let n = target.rows().max(1) as f64;
    let t = tape.constant(target.clone());
    let d = tape.sub(rendered, t);
    let sq = tape.square(d);
    let s = tape.sum(sq);
    tape.scale(s, 1.0 / n)
}

/// Mean over matches of `|x_r - x_i|^2 + |x_r - x_j|^2 + |x_i - x_j|^2`
/// (rows of the `m x 3` inputs). `None` for zero matches.
pub fn matched_features_loss(tape: &mut Tape, x_r: Var, x_i: Var, x_j: Var) -> Option<Var> {
    let m = tape.shape(x_r).0;
    if m == 0 {
        return None;
    }
    let mut parts = Vec::with_capacity(3);
    for (a, b) in [(x_r, x_i), (x_r, x_j), (x_i, x_j)] {
        let d = tape.sub(a, b);
        let sq = tape.square(d);
        parts.push(tape.sum(sq));
    }
    let s = tape.add(parts[0], parts[1]);
    let s = tape.add(s, parts[2]);
    Some(tape.scale(s, 1.0 / m as f64))
}

/// `min_k |x_ref - c_k|^2` over the rows of `candidates`. The minimum
/// is taken on values; the gradient flows through `x_ref` and the winning row.
pub fn epipolar_loss(tape: &mut Tape, x_ref: Var, candidates: Var) -> Option<Var> {
    let k = argmin_distance(tape.value(x_ref), tape.value(candidates))?;
    let c = tape.gather_rows(candidates, &[k]);
    let d = tape.sub(x_ref, c);
    let sq = tape.square(d);
    Some(tape.sum(sq))
}

/// Row of `candidates` closest to the single row `x`.
pub fn argmin_distance(x: &Tensor, candidates: &Tensor) -> Option<usize> {
    let p = x.row(0);
    (0..candidates.rows())
        .map(|k| {
            let c = candidates.row(k);
            (k, p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}
