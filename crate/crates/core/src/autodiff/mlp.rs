use rand::Rng;

use super::{Gradients, PositionalEncoding, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Shape of the radiance-field MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpConfig {
    /// Hidden layers in the trunk.
    pub depth: usize,
    pub width: usize,
    /// Trunk layer (0-based) whose input is `[h, encoded position]`.
    pub skip: Option<usize>,
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    pub sigma_act: SigmaActivation,
}

/// Nonlinearity turning the raw density output into `sigma >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaActivation {
    Softplus,
    Relu,
}

impl SigmaActivation {
    pub fn code(self) -> u32 {
        match self {
            SigmaActivation::Softplus => 0,
            SigmaActivation::Relu => 1,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(SigmaActivation::Softplus),
            1 => Some(SigmaActivation::Relu),
            _ => None,
        }
    }
}

impl std::str::FromStr for SigmaActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(SigmaActivation::Softplus),
            "relu" => Ok(SigmaActivation::Relu),
            _ => Err(Error::Config(format!("unknown sigma activation {s:?}"))),
        }
    }
}

impl MlpConfig {
    /// The standard NeRF network: 8 x 256, position re-injected into layer 5.
    pub fn nerf() -> Self {
        Self {
            depth: 8,
            width: 256,
            skip: Some(5),
            pos_freqs: 10,
            dir_freqs: 4,
            sigma_act: SigmaActivation::Softplus,
        }
    }

    pub fn pos_encoding(&self) -> PositionalEncoding {
        PositionalEncoding::new(self.pos_freqs)
    }

    pub fn dir_encoding(&self) -> PositionalEncoding {
        PositionalEncoding::new(self.dir_freqs)
    }

    pub fn pos_dim(&self) -> usize {
        self.pos_encoding().output_dim(3)
    }

    pub fn dir_dim(&self) -> usize {
        self.dir_encoding().output_dim(3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width < 2 {
            return Err(Error::Config(format!("degenerate MLP {self:?}")));
        }
        if let Some(s) = self.skip {
            if s == 0 || s >= self.depth {
                return Err(Error::Config(format!("skip layer {s} outside 1..{}", self.depth)));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer in parameter order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let (w, p) = (self.width, self.pos_dim());
        let mut shapes = Vec::with_capacity(self.depth + 4);
        for l in 0..self.depth {
            let fan_in = if l == 0 {
                p
            } else if Some(l) == self.skip {
                w + p
            } else {
                w
            };
            shapes.push((fan_in, w));
        }
        shapes.push((w, 1));
        shapes.push((w, w));
        shapes.push((w + self.dir_dim(), w / 2));
        shapes.push((w / 2, 3));
        shapes
    }
}

/// Weight matrices and bias rows, stored as `[w_0, b_0, w_1, b_1, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    pub config: MlpConfig,
    pub params: Vec<Tensor>,
}

impl MlpWeights {
    /// Uniform `+-sqrt(6 / (fan_in + fan_out))` weights and zero biases, rounded to `f32`.
    pub fn init(config: MlpConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        for (fan_in, fan_out) in config.layer_shapes() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound) as f32 as f64)
                .collect();
            params.push(Tensor::from_vec(fan_in, fan_out, data));
            params.push(Tensor::zeros(1, fan_out));
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let params = config
            .layer_shapes()
            .into_iter()
            .flat_map(|(i, o)| [Tensor::zeros(i, o), Tensor::zeros(1, o)])
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: MlpConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if params.len() != 2 * shapes.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                2 * shapes.len(),
                params.len()
            )));
        }
        for (k, (i, o)) in shapes.into_iter().enumerate() {
            if params[2 * k].shape() != (i, o) || params[2 * k + 1].shape() != (1, o) {
                return Err(Error::ShapeMismatch(format!("layer {k} shape")));
            }
        }
        if !params.iter().all(Tensor::is_finite) {
            return Err(Error::ShapeMismatch("non-finite weights".into()));
        }
        Ok(Self { config, params })
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Records the parameters as constants (forward-only evaluation).
    pub fn register_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// Runs the network on encoded positions (`n x pos_dim`) and directions
    /// (`n x dir_dim`). Returns `(rgb: n x 3, sigma: n x 1)`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x_enc: Var, d_enc: Var) -> Result<(Var, Var)> {
        let c = &self.config;
        let (n, px) = tape.shape(x_enc);
        let (nd, pd) = tape.shape(d_enc);
        if px != c.pos_dim() || pd != c.dir_dim() || n != nd {
            return Err(Error::ShapeMismatch(format!(
                "encoded inputs {n}x{px} / {nd}x{pd}, network wants {} / {}",
                c.pos_dim(),
                c.dir_dim()
            )));
        }
        if vars.len() != self.params.len() {
            return Err(Error::ShapeMismatch("parameter handles".into()));
        }
        let dense = |tape: &mut Tape, k: usize, h: Var| {
            let m = tape.matmul(h, vars[2 * k]);
            tape.add_bias(m, vars[2 * k + 1])
        };
        let mut h = x_enc;
        for l in 0..c.depth {
            if l > 0 && Some(l) == c.skip {
                h = tape.concat_cols(&[h, x_enc]);
            }
            let z = dense(tape, l, h);
            h = tape.relu(z);
        }
        let s = dense(tape, c.depth, h);
        let sigma = match c.sigma_act {
            SigmaActivation::Softplus => tape.softplus(s),
            SigmaActivation::Relu => tape.relu(s),
        };
        let feat = dense(tape, c.depth + 1, h);
        let hd = tape.concat_cols(&[feat, d_enc]);
        let z = dense(tape, c.depth + 2, hd);
        let hc = tape.relu(z);
        let z = dense(tape, c.depth + 3, hc);
        let rgb = tape.sigmoid(z);
        Ok((rgb, sigma))
    }

    /// Forward pass without gradients, row-chunked to bound memory.
    pub fn evaluate(&self, x_enc: &Tensor, d_enc: &Tensor) -> Result<(Tensor, Tensor)> {
        const CHUNK: usize = 4096;
        let n = x_enc.rows();
        if d_enc.rows() != n {
            return Err(Error::ShapeMismatch("row counts differ".into()));
        }
        let mut rgb = Vec::with_capacity(n * 3);
        let mut sigma = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let mut tape = Tape::new();
            let vars = self.register_frozen(&mut tape);
            let x = tape.constant(slice_rows(x_enc, start, end));
            let d = tape.constant(slice_rows(d_enc, start, end));
            let (c, s) = self.forward(&mut tape, &vars, x, d)?;
            rgb.extend_from_slice(tape.value(c).data());
            sigma.extend_from_slice(tape.value(s).data());
            start = end;
        }
        Ok((Tensor::from_vec(n, 3, rgb), Tensor::from_vec(n, 1, sigma)))
    }

    /// Gradients of every parameter, in parameter order.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| grads.get(v)).collect()
    }

    /// Rounds every weight to the nearest `f32`, making checkpoints lossless.
    pub fn quantize(&mut self) {
        for p in &mut self.params {
            quantize(p);
        }
    }
}

pub(crate) fn quantize(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

fn slice_rows(t: &Tensor, start: usize, end: usize) -> Tensor {
    let c = t.cols();
    Tensor::from_vec(end - start, c, t.data()[start * c..end * c].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{sigmoid, softplus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn small() -> MlpConfig {
        MlpConfig {
            depth: 3,
            width: 8,
            skip: Some(2),
            pos_freqs: 2,
            dir_freqs: 1,
            sigma_act: SigmaActivation::Softplus,
        }
    }

    fn inputs(cfg: &MlpConfig, n: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let dirs: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), 1.0]).collect();
        (cfg.pos_encoding().encode_rows(&pts), cfg.dir_encoding().encode_rows(&dirs))
    }

    #[test]
    fn nerf_shapes() {
        let c = MlpConfig::nerf();
        let shapes = c.layer_shapes();
        assert_eq!(shapes[0], (63, 256));
        assert_eq!(shapes[5], (256 + 63, 256));
        assert_eq!(shapes[8], (256, 1));
        assert_eq!(shapes[10], (256 + 27, 128));
        assert_eq!(shapes[11], (128, 3));
    }

    #[test]
    fn zero_weights_give_head_defaults() {
        let cfg = small();
        let w = MlpWeights::zeros(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, d) = inputs(&cfg, 5, &mut rng);
        let (rgb, sigma) = w.evaluate(&x, &d).unwrap();
        assert!(rgb.data().iter().all(|&v| v == 0.5));
        assert!(sigma.data().iter().all(|&v| (v - std::f64::consts::LN_2).abs() < 1e-12));
        assert!((softplus(0.0) - 0.6931).abs() < 1e-4 && sigmoid(0.0) == 0.5);
    }

    #[test]
    fn wrong_encoding_width_is_an_error() {
        let cfg = small();
        let w = MlpWeights::zeros(cfg).unwrap();
        let bad = Tensor::zeros(2, 5);
        let d = Tensor::zeros(2, cfg.dir_dim());
        assert!(matches!(w.evaluate(&bad, &d), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn outputs_stay_in_range_for_random_weights() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.0, 3.0).unwrap();
        let mut count = 0;
        for _ in 0..50 {
            let mut w = MlpWeights::init(cfg, &mut rng).unwrap();
            for p in &mut w.params {
                for v in p.data_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
            let (x, d) = inputs(&cfg, 200, &mut rng);
            let (rgb, sigma) = w.evaluate(&x, &d).unwrap();
            assert!(sigma.data().iter().all(|&s| s >= 0.0));
            assert!(rgb.data().iter().all(|&c| (0.0..=1.0).contains(&c)));
            count += sigma.len();
        }
        assert_eq!(count, 10_000);
    }

    #[test]
    fn color_ignores_direction_when_direction_weights_are_zero() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w = MlpWeights::init(cfg, &mut rng).unwrap();
        let k = 2 * (cfg.depth + 2);
        let wc = &mut w.params[k];
        for r in cfg.width..wc.rows() {
            for c in 0..wc.cols() {
                wc.set(r, c, 0.0);
            }
        }
        let (x, d1) = inputs(&cfg, 10, &mut rng);
        let (_, d2) = inputs(&cfg, 10, &mut rng);
        let (a, _) = w.evaluate(&x, &d1).unwrap();
        let (b, _) = w.evaluate(&x, &d2).unwrap();
        assert_eq!(a, b);
        // sanity: with the weights intact the direction matters
        let w2 = MlpWeights::init(cfg, &mut rng).unwrap();
        assert_ne!(w2.evaluate(&x, &d1).unwrap().0, w2.evaluate(&x, &d2).unwrap().0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = MlpConfig {
            depth: 2,
            width: 6,
            skip: None,
            pos_freqs: 1,
            dir_freqs: 1,
            sigma_act: SigmaActivation::Softplus,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let mut w = MlpWeights::zeros(cfg).unwrap();
        for p in &mut w.params {
            for v in p.data_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        let (x, d) = inputs(&cfg, 4, &mut rng);
        let target: Vec<f64> = (0..12).map(|_| rng.gen()).collect();
        let loss_of = |w: &MlpWeights| -> f64 {
            let (rgb, sigma) = w.evaluate(&x, &d).unwrap();
            rgb.data().iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                + sigma.data().iter().map(|s| s * s).sum::<f64>()
        };

        let mut tape = Tape::new();
        let vars = w.register(&mut tape);
        let xv = tape.constant(x.clone());
        let dv = tape.constant(d.clone());
        let (rgb, sigma) = w.forward(&mut tape, &vars, xv, dv).unwrap();
        let tv = tape.constant(Tensor::from_vec(4, 3, target.clone()));
        let diff = tape.sub(rgb, tv);
        let sq = tape.square(diff);
        let a = tape.sum(sq);
        let s2 = tape.square(sigma);
        let b = tape.sum(s2);
        let loss = tape.add(a, b);
        assert!((tape.value(loss).item() - loss_of(&w)).abs() < 1e-12);
        let grads = w.collect_grads(&tape.backward(loss).unwrap(), &vars);

        let h = 1e-4;
        for (k, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let orig = w.params[k].data()[i];
                w.params[k].data_mut()[i] = orig + h;
                let up = loss_of(&w);
                w.params[k].data_mut()[i] = orig - h;
                let down = loss_of(&w);
                w.params[k].data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = g.data()[i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-3, "param {k}[{i}]: analytic {an}, fd {fd}");
            }
        }
    }

    #[test]
    fn constant_loss_has_zero_weight_gradients() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = MlpWeights::init(cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let vars = w.register(&mut tape);
        let c = tape.scalar(3.0);
        let (x, d) = inputs(&cfg, 2, &mut rng);
        let (xv, dv) = (tape.constant(x), tape.constant(d));
        w.forward(&mut tape, &vars, xv, dv).unwrap();
        let grads = tape.backward(c).unwrap();
        for g in w.collect_grads(&grads, &vars) {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_is_f32_exact_and_bounded() {
        let cfg = small();
        let w = MlpWeights::init(cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        for (k, (i, o)) in cfg.layer_shapes().into_iter().enumerate() {
            let bound = (6.0 / (i + o) as f64).sqrt();
            assert!(w.params[2 * k].data().iter().all(|v| v.abs() <= bound && *v == *v as f32 as f64));
        }
    }
}
