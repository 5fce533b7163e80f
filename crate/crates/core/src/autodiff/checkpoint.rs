use std::io::{Read, Write};
use std::path::Path;

use super::{AdamState, MlpConfig, MlpWeights, SigmaActivation, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SFMNERF1";
const NO_SKIP: u32 = u32::MAX;

/// Networks with their optimizer state, plus an opaque trailer for the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub networks: Vec<(MlpWeights, AdamState)>,
    pub extra: Vec<u8>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        // write then rename so a crash never leaves a torn checkpoint
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, self.networks.len() as u32)?;
        for (net, adam) in &self.networks {
            let c = &net.config;
            for v in [c.depth as u32, c.width as u32, c.skip.map_or(NO_SKIP, |s| s as u32), c.pos_freqs as u32, c.dir_freqs as u32, c.sigma_act.code()] {
                put_u32(w, v)?;
            }
            put_tensors(w, &net.params)?;
            w.write_all(&adam.step.to_le_bytes())?;
            for v in [adam.lr, adam.beta1, adam.beta2, adam.eps] {
                w.write_all(&v.to_le_bytes())?;
            }
            put_tensors(w, &adam.m)?;
            put_tensors(w, &adam.v)?;
        }
        w.write_all(&(self.extra.len() as u64).to_le_bytes())?;
        w.write_all(&self.extra)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let count = get_u32(r)? as usize;
        let mut networks = Vec::with_capacity(count);
        for _ in 0..count {
            let mut f = [0u32; 6];
            for v in &mut f {
                *v = get_u32(r)?;
            }
            let config = MlpConfig {
                depth: f[0] as usize,
                width: f[1] as usize,
                skip: (f[2] != NO_SKIP).then_some(f[2] as usize),
                pos_freqs: f[3] as usize,
                dir_freqs: f[4] as usize,
                sigma_act: SigmaActivation::from_code(f[5]).ok_or_else(|| Error::Checkpoint("unknown sigma activation".into()))?,
            };
            let params = get_tensors(r)?;
            let net = MlpWeights::from_params(config, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let step = get_u64(r)?;
            let mut h = [0f64; 4];
            for v in &mut h {
                *v = f64::from_bits(get_u64(r)?);
            }
            let m = get_tensors(r)?;
            let v = get_tensors(r)?;
            let same = |ts: &[Tensor]| ts.len() == net.params.len() && ts.iter().zip(&net.params).all(|(a, b)| a.shape() == b.shape());
            if !same(&m) || !same(&v) {
                return Err(Error::Checkpoint("optimizer moments do not match weights".into()));
            }
            let adam = AdamState {
                step,
                lr: h[0],
                beta1: h[1],
                beta2: h[2],
                eps: h[3],
                m,
                v,
            };
            networks.push((net, adam));
        }
        let n = get_u64(r)? as usize;
        let mut extra = vec![0u8; n];
        r.read_exact(&mut extra).map_err(truncated)?;
        Ok(Self { networks, extra })
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated checkpoint: {e}"))
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn put_tensors(w: &mut impl Write, ts: &[Tensor]) -> Result<()> {
    put_u32(w, ts.len() as u32)?;
    for t in ts {
        put_u32(w, t.rows() as u32)?;
        put_u32(w, t.cols() as u32)?;
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

fn get_tensors(r: &mut impl Read) -> Result<Vec<Tensor>> {
    let n = get_u32(r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let rows = get_u32(r)? as usize;
        let cols = get_u32(r)? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l < (1 << 30))
            .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        out.push(Tensor::from_vec(rows, cols, data));
    }
    Ok(out)
}
