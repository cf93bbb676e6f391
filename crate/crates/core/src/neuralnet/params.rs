use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::spec::{LayerSpec, NetSpec};
use crate::{Error, Result};

const SNET_MAGIC: &[u8; 8] = b"SNET0001";

/// Trainable arrays, batch-norm running statistics and Adagrad
/// accumulators of one layer. Master copies are kept in `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub params: Vec<Vec<f64>>,
    pub state: Vec<Vec<f64>>,
    pub accum: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<LayerParams>,
}

/// Gradients with the same layout as `NetParams::layers[..].params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(p: &NetParams) -> Self {
        Self { layers: p.layers.iter().map(|l| l.params.iter().map(|a| vec![0.0; a.len()]).collect()).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl NetParams {
    /// Check every array length against `spec`.
    pub fn check(&self, spec: &NetSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameter layers for a {}-layer spec",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (lp, ls)) in self.layers.iter().zip(&spec.layers).enumerate() {
            let lens = |v: &Vec<Vec<f64>>| v.iter().map(Vec::len).collect::<Vec<_>>();
            if lens(&lp.params) != ls.param_sizes() || lens(&lp.accum) != ls.param_sizes() || lens(&lp.state) != ls.state_sizes()
            {
                return Err(Error::DimensionMismatch(format!("layer {i} ({}) parameter shapes do not match", ls.name())));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(Vec::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().flat_map(|l| l.params.iter().chain(&l.state)).flatten().all(|v| v.is_finite())
    }
}

/// Weights `~ U(−b, b)` with `b = sqrt(6 / (fan_in + fan_out))`, biases 0,
/// PReLU slopes 0.25, `γ = 1`, `β = 0`, running variance 1.
pub fn xavier_init(spec: &NetSpec, seed: u64) -> Result<NetParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize, fan_in: usize, fan_out: usize| -> Vec<f64> {
        let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let u = Uniform::new(-b, b).expect("positive bound");
        (0..n).map(|_| u.sample(&mut rng)).collect()
    };
    let mut layers = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        let (params, state) = match *l {
            LayerSpec::Conv3d { in_ch, out_ch, kernel, .. } => {
                let k3 = kernel.pow(3);
                (vec![uniform(out_ch * in_ch * k3, in_ch * k3, out_ch * k3), vec![0.0; out_ch]], vec![])
            }
            LayerSpec::BatchNorm { channels, .. } => {
                (vec![vec![1.0; channels], vec![0.0; channels]], vec![vec![0.0; channels], vec![1.0; channels]])
            }
            LayerSpec::PRelu { channels } => (vec![vec![0.25; channels]], vec![]),
            LayerSpec::FullyConnected { inputs, outputs } => {
                (vec![uniform(outputs * inputs, inputs, outputs), vec![0.0; outputs]], vec![])
            }
            _ => (vec![], vec![]),
        };
        let accum = params.iter().map(|a| vec![0.0; a.len()]).collect();
        layers.push(LayerParams { params, state, accum });
    }
    Ok(NetParams { layers })
}

/// `G ← G + g²; θ ← θ − lr·g / (sqrt(G) + ε)`, elementwise.
pub fn adagrad_step(params: &mut NetParams, grads: &Gradients, lr: f64, eps: f64) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(Error::DimensionMismatch("gradient and parameter layer counts differ".into()));
    }
    for (i, (lp, lg)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
        if lg.len() != lp.params.len() || lg.iter().zip(&lp.params).any(|(g, p)| g.len() != p.len()) {
            return Err(Error::DimensionMismatch(format!("layer {i} gradient shapes do not match")));
        }
        for ((theta, acc), g) in lp.params.iter_mut().zip(lp.accum.iter_mut()).zip(lg) {
            for ((t, a), &g) in theta.iter_mut().zip(acc.iter_mut()).zip(g) {
                *a += g * g;
                *t -= lr * g / (a.sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// `SNET0001`, the spec as ASCII (u32 length prefix), then every layer's
/// trainable arrays followed by its running statistics as little-endian
/// `f32`. Adagrad accumulators are not stored.
pub fn to_snet_bytes(spec: &NetSpec, params: &NetParams) -> Result<Vec<u8>> {
    params.check(spec)?;
    let ascii = spec.to_ascii();
    let mut out = Vec::new();
    out.extend_from_slice(SNET_MAGIC);
    out.extend_from_slice(&(ascii.len() as u32).to_le_bytes());
    out.extend_from_slice(ascii.as_bytes());
    for l in &params.layers {
        for a in l.params.iter().chain(&l.state) {
            for &v in a {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn from_snet_bytes(bytes: &[u8]) -> Result<(NetSpec, NetParams)> {
    let bad = |m: &str| Error::format("SNET", m.to_string());
    if bytes.len() < 12 || &bytes[..8] != SNET_MAGIC {
        return Err(bad("missing SNET0001 header"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let ascii = bytes.get(12..12 + n).ok_or_else(|| bad("truncated spec block"))?;
    let spec = NetSpec::from_ascii(std::str::from_utf8(ascii).map_err(|_| bad("spec block is not UTF-8"))?)?;
    let mut pos = 12 + n;
    let mut read = |len: usize| -> Result<Vec<f64>> {
        let chunk = bytes.get(pos..pos + 4 * len).ok_or_else(|| bad("truncated parameter block"))?;
        pos += 4 * len;
        Ok(chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    };
    let mut layers = Vec::new();
    for l in &spec.layers {
        let params = l.param_sizes().into_iter().map(&mut read).collect::<Result<Vec<_>>>()?;
        let state = l.state_sizes().into_iter().map(&mut read).collect::<Result<Vec<_>>>()?;
        let accum = params.iter().map(|a| vec![0.0; a.len()]).collect();
        layers.push(LayerParams { params, state, accum });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    let params = NetParams { layers };
    if !params.all_finite() {
        return Err(Error::NonFinite("stored network parameters".into()));
    }
    Ok((spec, params))
}

pub fn write_snet(path: impl AsRef<Path>, spec: &NetSpec, params: &NetParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_snet_bytes(spec, params)?).map_err(|e| Error::io(path, e))
}

pub fn read_snet(path: impl AsRef<Path>) -> Result<(NetSpec, NetParams)> {
    let path = path.as_ref();
    from_snet_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
