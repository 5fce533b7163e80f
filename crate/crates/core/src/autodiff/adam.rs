use super::mlp::quantize;
use super::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    /// `lr = 1e-3`, `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(shapes: &[Tensor]) -> Self {
        Self::with_lr(shapes, 1e-3)
    }

    pub fn with_lr(shapes: &[Tensor], lr: f64) -> Self {
        let zeros = || shapes.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
                vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
                let mh = md[i] / bc1;
                let vh = vd[i] / bc2;
                pd[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Rounds the moments to `f32`, matching what a checkpoint stores.
    pub fn quantize(&mut self) {
        for t in self.m.iter_mut().chain(&mut self.v) {
            quantize(t);
        }
    }
}
