//! Central finite differences against reverse-mode gradients for every loss
//! term, on a tiny network and one synthetic triplet. Sampling and epipolar
//! picks are frozen so both sides differentiate the same function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfmnerf::autodiff::{MlpConfig, SigmaActivation, Tape};
use sfmnerf::data::{synthesize, Preset};
use sfmnerf::field::FieldPair;
use sfmnerf::losses::{LossWeights, Term};
use sfmnerf::trainer::{draw_step, forward_step, FrozenPlans, Networks, StepDraw, TrainConfig, Trainer, TripletView};

fn loss(nets: &Networks, tv: &TripletView, draw: &StepDraw, cfg: &TrainConfig, frozen: Option<&FrozenPlans>) -> (f64, Vec<Vec<f64>>, FrozenPlans) {
    let mut tape = Tape::new();
    let cv = nets.coarse.register(&mut tape);
    let fv = nets.fine.register(&mut tape);
    let pair = FieldPair {
        coarse: &nets.coarse,
        coarse_vars: &cv,
        fine: &nets.fine,
        fine_vars: &fv,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward_step(&mut tape, &pair, tv, draw, cfg, frozen, &mut rng).expect("forward");
    let value = tape.value(out.loss).item();
    let grads = tape.backward(out.loss).expect("backward");
    let mut g: Vec<Vec<f64>> = Vec::new();
    for t in nets.fine.collect_grads(&grads, &fv) {
        g.push(t.data().to_vec());
    }
    (value, g, out.frozen)
}

fn main() -> sfmnerf::Result<()> {
    let (ds, _) = synthesize(Preset::TwoSpheres, 0)?;
    let base = TrainConfig {
        n_coarse: 8,
        n_fine: 8,
        epi_candidates: 8,
        matches_per_step: 8,
        net: MlpConfig {
            depth: 2,
            width: 16,
            skip: None,
            pos_freqs: 3,
            dir_freqs: 1,
            sigma_act: SigmaActivation::Softplus,
        },
        ..TrainConfig::desk()
    };
    let trainer = Trainer::new(base.clone(), ds, std::path::Path::new("."))?;
    let tv = &trainer.views[0];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draw = draw_step(tv, &base, 8, &mut rng)?;
    // small enough that a probe rarely straddles a ReLU switch
    let h = 1e-6;

    for term in Term::ALL {
        let mut w = LossWeights {
            ren: 0.0,
            three_d: 0.0,
            pr: 0.0,
            epi: 0.0,
            ssim: 0.0,
            ds: 0.0,
        };
        match term {
            Term::Ren => w.ren = 1.0,
            Term::ThreeD => w.three_d = 1.0,
            Term::Pr => w.pr = 1.0,
            Term::Epi => w.epi = 1.0,
            Term::Ssim => w.ssim = 1.0,
            Term::Ds => w.ds = 1.0,
        }
        let cfg = TrainConfig { weights: w, ..base.clone() };
        let (_, grad, frozen) = loss(&trainer.nets, tv, &draw, &cfg, None);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let layer = rng.gen_range(0..grad.len());
            let k = rng.gen_range(0..grad[layer].len());
            let mut plus = trainer.nets.clone();
            plus.fine.params[layer].data_mut()[k] += h;
            let mut minus = trainer.nets.clone();
            minus.fine.params[layer].data_mut()[k] -= h;
            let fd = (loss(&plus, tv, &draw, &cfg, Some(&frozen)).0 - loss(&minus, tv, &draw, &cfg, Some(&frozen)).0) / (2.0 * h);
            let an = grad[layer][k];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
        }
        println!("{:5}: worst relative error over 20 probes {worst:.2e}", term.name());
    }
    Ok(())
}
