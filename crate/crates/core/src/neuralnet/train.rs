use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{backward, forward, loss_and_grad, Batch, Mode, Tensor4};
use super::params::{adagrad_step, xavier_init, NetParams};
use super::real::Real;
use super::spec::NetSpec;
use crate::shapespace::Loadings;
use crate::volume::Volume;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eps: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 10, lr: 0.01, eps: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Root of the mean per-sample loss over the epoch's training batches.
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
}

/// Borrowed samples: flat inputs matching `spec.input` and target rows.
pub struct Samples<'a, S> {
    pub inputs: Vec<&'a [S]>,
    pub targets: Vec<&'a [f64]>,
}

impl<'a, S: Copy + Into<f64>> Samples<'a, S> {
    pub fn new(inputs: Vec<&'a [S]>, targets: Vec<&'a [f64]>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch(format!("{} inputs for {} targets", inputs.len(), targets.len())));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check(&self, spec: &NetSpec, what: &str) -> Result<()> {
        for (i, (x, t)) in self.inputs.iter().zip(&self.targets).enumerate() {
            if x.len() != spec.input.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{what} sample {i} has {} inputs, expected {}",
                    x.len(),
                    spec.input.len()
                )));
            }
            if t.len() != spec.output_dim {
                return Err(Error::DimensionMismatch(format!(
                    "{what} sample {i} has {} targets, expected {}",
                    t.len(),
                    spec.output_dim
                )));
            }
        }
        Ok(())
    }

    fn batch<T: Real>(&self, spec: &NetSpec, idx: &[usize]) -> Result<Batch<T>> {
        let mut data = Vec::with_capacity(idx.len() * spec.input.len());
        for &i in idx {
            data.extend(self.inputs[i].iter().map(|&v| T::of(v.into())));
        }
        Batch::new(idx.len(), spec.input, data)
    }
}

/// Root of the mean per-sample loss in infer mode.
pub fn evaluate_rmse<T: Real, S: Copy + Into<f64>>(
    spec: &NetSpec,
    params: &NetParams,
    data: &Samples<S>,
    batch_size: usize,
) -> Result<f64> {
    data.check(spec, "evaluation")?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let fp = forward::<T>(spec, params, &data.batch(spec, chunk)?, Mode::Infer)?;
        let targets: Vec<&[f64]> = chunk.iter().map(|&i| data.targets[i]).collect();
        total += loss_and_grad(&fp.output, &targets, spec.output_dim).0.iter().sum::<f64>();
    }
    Ok((total / data.len() as f64).sqrt())
}

/// Mini-batch Adagrad on the batch-mean squared L2 loss, shuffling with a
/// seeded stream each epoch. Returns the final-epoch parameters and the
/// per-epoch RMSE history.
pub fn train<T: Real, S: Copy + Into<f64>>(
    spec: &NetSpec,
    mut params: NetParams,
    data: &Samples<S>,
    val: Option<&Samples<S>>,
    cfg: &TrainConfig,
) -> Result<(NetParams, Vec<EpochStats>)> {
    spec.validate()?;
    params.check(spec)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(cfg.eps > 0.0) {
        return Err(Error::InvalidArgument("batch size, lr and eps must be positive".into()));
    }
    data.check(spec, "training")?;
    if let Some(v) = val {
        v.check(spec, "validation")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.batch::<T>(spec, chunk)?;
            let fp = forward(spec, &params, &batch, Mode::Train)?;
            let targets: Vec<&[f64]> = chunk.iter().map(|&i| data.targets[i]).collect();
            let (per, d_out) = loss_and_grad(&fp.output, &targets, spec.output_dim);
            let batch_sum: f64 = per.iter().sum();
            if !batch_sum.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            total += batch_sum;
            let grads = backward(spec, &params, fp.cache.as_ref().expect("train mode"), &d_out)?;
            fp.update_running_stats(spec, &mut params)?;
            adagrad_step(&mut params, &grads, cfg.lr, cfg.eps)?;
            if !params.all_finite() {
                return Err(Error::Diverged { epoch, batch: bi });
            }
        }
        let train_rmse = (total / data.len() as f64).sqrt();
        let val_rmse = match val {
            Some(v) if !v.is_empty() => Some(evaluate_rmse::<T, S>(spec, &params, v, cfg.batch_size)?),
            _ => None,
        };
        log::info!(
            "epoch {}/{}: train rmse {:.4}{}",
            epoch + 1,
            cfg.epochs,
            train_rmse,
            val_rmse.map(|v| format!(", val rmse {v:.4}")).unwrap_or_default()
        );
        history.push(EpochStats { epoch: epoch + 1, train_rmse, val_rmse });
    }
    Ok((params, history))
}

/// Infer-mode forward over `inputs` in chunks, one output row per input.
pub fn predict_rows<T: Real, S: Copy + Into<f64>>(
    spec: &NetSpec,
    params: &NetParams,
    inputs: &[&[S]],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch_size.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * spec.input.len());
        for x in chunk {
            if x.len() != spec.input.len() {
                return Err(Error::DimensionMismatch(format!(
                    "input has {} values, network expects {}",
                    x.len(),
                    spec.input.len()
                )));
            }
            data.extend(x.iter().map(|&v| T::of(v.into())));
        }
        let fp = forward::<T>(spec, params, &Batch::new(chunk.len(), spec.input, data)?, Mode::Infer)?;
        out.extend(fp.output.chunks(spec.output_dim).map(|r| r.iter().map(|v| v.f64()).collect()));
    }
    Ok(out)
}

fn volume_samples<'a>(v: &[&'a Volume], l: &[&'a Loadings]) -> Result<Samples<'a, f32>> {
    Samples::new(v.iter().map(|x| x.data()).collect(), l.iter().map(|x| x.as_slice()).collect())
}

/// Train the volumetric regressor in `f32` from Xavier-initialized weights.
pub fn train_cnn(
    spec: &NetSpec,
    volumes: &[&Volume],
    loadings: &[&Loadings],
    val: Option<(&[&Volume], &[&Loadings])>,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(NetParams, Vec<EpochStats>)> {
    let data = volume_samples(volumes, loadings)?;
    let val = val.map(|(v, l)| volume_samples(v, l)).transpose()?;
    train::<f32, f32>(spec, xavier_init(spec, init_seed)?, &data, val.as_ref(), cfg)
}

/// Infer-mode forward on a singleton batch.
pub fn predict_loadings(spec: &NetSpec, params: &NetParams, v: &Volume) -> Result<Loadings> {
    let t = Tensor4::<f32>::from_volume(v);
    if t.shape() != spec.input {
        return Err(Error::DimensionMismatch(format!("volume is {:?}, network expects {:?}", t.shape(), spec.input)));
    }
    let fp = forward(spec, params, &Batch::from_tensors(&[t])?, Mode::Infer)?;
    Ok(Loadings(fp.output.iter().map(|v| v.f64()).collect()))
}

pub fn predict_loadings_batch(spec: &NetSpec, params: &NetParams, vs: &[&Volume], batch_size: usize) -> Result<Vec<Loadings>> {
    let inputs: Vec<&[f32]> = vs.iter().map(|v| v.data()).collect();
    Ok(predict_rows::<f32, f32>(spec, params, &inputs, batch_size)?.into_iter().map(Loadings).collect())
}

pub fn rmse_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_rmse,val_rmse\n");
    for e in history {
        let v = e.val_rmse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{}", e.epoch, e.train_rmse, v).unwrap();
    }
    s
}

pub fn write_rmse_csv(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, rmse_csv(history)).map_err(|e| Error::io(path, e))
}

pub fn read_rmse_csv(path: impl AsRef<Path>) -> Result<Vec<EpochStats>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::format("rmse csv", format!("line {}", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad());
        }
        out.push(EpochStats {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_rmse: f[1].parse().map_err(|_| bad())?,
            val_rmse: if f[2].is_empty() { None } else { Some(f[2].parse().map_err(|_| bad())?) },
        });
    }
    Ok(out)
}

/// Small regression MLP (`M → hidden → 1`, sigmoid output). Inputs are
/// standardized with statistics of its training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: NetSpec,
    pub params: NetParams,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub train: TrainConfig,
    pub init_seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: 16, train: TrainConfig { epochs: 200, batch_size: 10, lr: 0.01, eps: 1e-8, seed: 0 }, init_seed: 0 }
    }
}

impl Mlp {
    fn standardize(&self, x: &Loadings) -> Result<Vec<f64>> {
        if x.len() != self.input_mean.len() {
            return Err(Error::DimensionMismatch(format!("{} inputs for an MLP with {}", x.len(), self.input_mean.len())));
        }
        Ok(x.0.iter().zip(&self.input_mean).zip(&self.input_scale).map(|((v, m), s)| (v - m) / s).collect())
    }

    /// Outputs in `[0, 1]`.
    pub fn predict(&self, inputs: &[Loadings]) -> Result<Vec<f64>> {
        let xs = inputs.iter().map(|x| self.standardize(x)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        Ok(predict_rows::<f64, f64>(&self.spec, &self.params, &refs, 64)?.into_iter().map(|r| r[0]).collect())
    }
}

pub fn train_mlp(inputs: &[Loadings], targets: &[f64], cfg: &MlpConfig) -> Result<Mlp> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} inputs for {} targets", inputs.len(), targets.len())));
    }
    let m = inputs[0].len();
    if m == 0 || inputs.iter().any(|x| x.len() != m) {
        return Err(Error::DimensionMismatch("MLP inputs must share a positive length".into()));
    }
    let n = inputs.len() as f64;
    let mean: Vec<f64> = (0..m).map(|j| inputs.iter().map(|x| x.0[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let v = inputs.iter().map(|x| (x.0[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let spec = NetSpec::mlp(m, cfg.hidden)?;
    let mut mlp =
        Mlp { params: xavier_init(&spec, cfg.init_seed)?, spec, input_mean: mean, input_scale: scale, history: Vec::new() };
    let xs = inputs.iter().map(|x| mlp.standardize(x)).collect::<Result<Vec<_>>>()?;
    let ts: Vec<[f64; 1]> = targets.iter().map(|&t| [t]).collect();
    let data = Samples::new(xs.iter().map(Vec::as_slice).collect(), ts.iter().map(|t| t.as_slice()).collect())?;
    let (params, history) = train::<f64, f64>(&mlp.spec, mlp.params.clone(), &data, None, &cfg.train)?;
    mlp.params = params;
    mlp.history = history;
    Ok(mlp)
}
