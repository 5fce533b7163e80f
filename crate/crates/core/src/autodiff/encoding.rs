use std::f64::consts::PI;

use super::Tensor;

/// Sinusoidal encoding `[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]`.
///
/// Layout: the raw input first (when `include_input`), then for each input
/// component its `L` sine/cosine pairs in increasing frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionalEncoding {
    pub num_freqs: usize,
    pub include_input: bool,
}

impl PositionalEncoding {
    pub fn new(num_freqs: usize) -> Self {
        Self {
            num_freqs,
            include_input: true,
        }
    }

    pub fn output_dim(&self, in_dim: usize) -> usize {
        in_dim * 2 * self.num_freqs + if self.include_input { in_dim } else { 0 }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim(x.len()));
        self.encode_into(x, &mut out);
        out
    }

    fn encode_into(&self, x: &[f64], out: &mut Vec<f64>) {
        if self.include_input {
            out.extend_from_slice(x);
        }
        for &v in x {
            let mut f = PI;
            for _ in 0..self.num_freqs {
                let (s, c) = (f * v).sin_cos();
                out.push(s);
                out.push(c);
                f *= 2.0;
            }
        }
    }

    /// Encodes one 3-vector per row.
    pub fn encode_rows(&self, xs: &[[f64; 3]]) -> Tensor {
        let dim = self.output_dim(3);
        let mut data = Vec::with_capacity(xs.len() * dim);
        for x in xs {
            self.encode_into(x, &mut data);
        }
        Tensor::from_vec(xs.len(), dim, data)
    }
}
