use super::layers::*;
use super::params::{Gradients, NetParams};
use super::real::Real;
use super::spec::{LayerSpec, NetSpec, Shape};
use crate::shapespace::Loadings;
use crate::volume::Volume;
use crate::{par_map, Error, Result};

/// One sample: channels × (nx, ny, nz), channel-major then x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub channels: usize,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(channels: usize, dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if data.len() != channels * dims[0] * dims[1] * dims[2] {
            return Err(Error::DimensionMismatch(format!("{} values for a {channels}×{dims:?} tensor", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self { channels, nx: dims[0], ny: dims[1], nz: dims[2], data })
    }

    pub fn from_volume(v: &Volume) -> Self {
        let data = v.data().iter().map(|&x| T::of(x as f64)).collect();
        Self::new(1, v.dims(), data).expect("volumes are finite")
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, [self.nx, self.ny, self.nz])
    }
}

/// A batch of equally shaped samples in one contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub n: usize,
    pub shape: Shape,
    pub data: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn new(n: usize, shape: Shape, data: Vec<T>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if data.len() != n * shape.len() {
            return Err(Error::DimensionMismatch(format!("{} values for {n} samples of {shape:?}", data.len())));
        }
        Ok(Self { n, shape, data })
    }

    pub fn from_tensors(ts: &[Tensor4<T>]) -> Result<Self> {
        let first = ts.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let shape = first.shape();
        let mut data = Vec::with_capacity(ts.len() * shape.len());
        for (i, t) in ts.iter().enumerate() {
            if t.shape() != shape {
                return Err(Error::DimensionMismatch(format!("sample {i} is {:?}, sample 0 is {shape:?}", t.shape())));
            }
            data.extend_from_slice(&t.data);
        }
        Self::new(ts.len(), shape, data)
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let l = self.shape.len();
        &self.data[i * l..(i + 1) * l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Conv { w: Vec<T>, cols: Vec<Vec<T>> },
    Norm { gamma: Vec<T>, xhat: Vec<T>, inv_std: Vec<T>, mean: Vec<f64>, var: Vec<f64> },
    PRelu { a: Vec<T>, x: Vec<T> },
    Pool { arg: Vec<u32> },
    Flatten,
    Fc { w: Vec<T>, x: Vec<T> },
    Sigmoid { y: Vec<T> },
}

/// Everything backward needs from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    n: usize,
    shapes: Vec<Shape>,
    layers: Vec<LayerCache<T>>,
}

impl<T: Real> Cache<T> {
    /// Which branch every piecewise-linear unit took: PReLU input signs and
    /// pool winners. Two passes with equal signatures are on the same smooth
    /// piece of the loss.
    pub(crate) fn branch_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for l in &self.layers {
            match l {
                LayerCache::PRelu { x, .. } => sig.extend(x.iter().map(|&v| u32::from(v > T::zero()))),
                LayerCache::Pool { arg } => sig.extend_from_slice(arg),
                _ => {}
            }
        }
        sig
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    /// `n × output_dim`, row per sample.
    pub output: Vec<T>,
    pub cache: Option<Cache<T>>,
}

impl<T: Real> ForwardPass<T> {
    pub fn rows(&self, m: usize) -> Vec<Vec<T>> {
        self.output.chunks(m).map(<[T]>::to_vec).collect()
    }

    /// Blend this pass's batch statistics into the running statistics.
    pub fn update_running_stats(&self, spec: &NetSpec, params: &mut NetParams) -> Result<()> {
        let cache =
            self.cache.as_ref().ok_or_else(|| Error::InvalidArgument("running statistics need a train-mode pass".into()))?;
        for ((l, lp), lc) in spec.layers.iter().zip(params.layers.iter_mut()).zip(&cache.layers) {
            if let (LayerSpec::BatchNorm { momentum, .. }, LayerCache::Norm { mean, var, .. }) = (l, lc) {
                for (r, b) in lp.state[0].iter_mut().zip(mean) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
                for (r, b) in lp.state[1].iter_mut().zip(var) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
            }
        }
        Ok(())
    }
}

fn cast<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

/// Evaluate the network layer by layer. Train mode normalizes with batch
/// statistics and keeps a cache for `backward`; infer mode uses the running
/// statistics. Running statistics are not touched here (see
/// [`ForwardPass::update_running_stats`]).
pub fn forward<T: Real>(spec: &NetSpec, params: &NetParams, input: &Batch<T>, mode: Mode) -> Result<ForwardPass<T>> {
    let shapes = spec.shapes()?;
    params.check(spec)?;
    if input.shape != shapes[0] {
        return Err(Error::DimensionMismatch(format!("input is {:?}, network expects {:?}", input.shape, shapes[0])));
    }
    let n = input.n;
    let train = mode == Mode::Train;
    let mut x = input.data.clone();
    let mut caches = Vec::with_capacity(spec.layers.len());
    for (li, layer) in spec.layers.iter().enumerate() {
        let (sin, sout) = (shapes[li], shapes[li + 1]);
        let p = &params.layers[li];
        let (y, cache) = match *layer {
            LayerSpec::Conv3d { kernel, stride, .. } => {
                let g = ConvGeom { input: sin, output: sout, kernel, stride };
                let w: Vec<T> = cast(&p.params[0]);
                let b: Vec<T> = cast(&p.params[1]);
                let outs = par_map(n, |i| conv_forward(&g, &w, &b, &x[i * sin.len()..(i + 1) * sin.len()]));
                let mut y = Vec::with_capacity(n * sout.len());
                let mut cols = Vec::with_capacity(n);
                for (yi, ci) in outs {
                    y.extend_from_slice(&yi);
                    if train {
                        cols.push(ci);
                    }
                }
                (y, LayerCache::Conv { w, cols })
            }
            LayerSpec::BatchNorm { eps, .. } => {
                let gamma: Vec<T> = cast(&p.params[0]);
                let beta: Vec<T> = cast(&p.params[1]);
                let (mean, var) = if train { channel_stats(&x, n, sin) } else { (p.state[0].clone(), p.state[1].clone()) };
                let (y, xhat, inv_std) = bn_apply(&x, n, sin, &mean, &var, eps, &gamma, &beta);
                (y, LayerCache::Norm { gamma, xhat, inv_std, mean, var })
            }
            LayerSpec::PRelu { .. } => {
                let a: Vec<T> = cast(&p.params[0]);
                let y = prelu_forward(&x, n, sin, &a);
                (y, LayerCache::PRelu { a, x: std::mem::take(&mut x) })
            }
            LayerSpec::MaxPool2 => {
                let (y, arg) = maxpool_forward(&x, n, sin, sout);
                (y, LayerCache::Pool { arg })
            }
            LayerSpec::Flatten => (std::mem::take(&mut x), LayerCache::Flatten),
            LayerSpec::FullyConnected { inputs, outputs } => {
                let w: Vec<T> = cast(&p.params[0]);
                let b: Vec<T> = cast(&p.params[1]);
                let y = fc_forward(&x, n, inputs, outputs, &w, &b);
                (y, LayerCache::Fc { w, x: std::mem::take(&mut x) })
            }
            LayerSpec::Sigmoid => {
                let y: Vec<T> = x.iter().map(|&v| sigmoid(v)).collect();
                (y.clone(), LayerCache::Sigmoid { y })
            }
        };
        x = y;
        if train {
            caches.push(cache);
        }
    }
    Ok(ForwardPass { output: x, cache: train.then_some(Cache { n, shapes, layers: caches }) })
}

/// Gradients of the loss for every trainable array, given `dL/d(output)`
/// from a train-mode forward pass with the same spec.
pub fn backward<T: Real>(spec: &NetSpec, params: &NetParams, cache: &Cache<T>, d_out: &[T]) -> Result<Gradients> {
    let shapes = spec.shapes()?;
    params.check(spec)?;
    if shapes != cache.shapes || cache.layers.len() != spec.layers.len() {
        return Err(Error::InvalidArgument("cache does not belong to this network spec".into()));
    }
    let n = cache.n;
    if d_out.len() != n * spec.output_dim {
        return Err(Error::DimensionMismatch(format!(
            "output gradient has {} values, expected {}",
            d_out.len(),
            n * spec.output_dim
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut dy = d_out.to_vec();
    for li in (0..spec.layers.len()).rev() {
        let (sin, sout) = (shapes[li], shapes[li + 1]);
        let need_dx = li > 0;
        let to64 = |v: &[T]| v.iter().map(|x| x.f64()).collect::<Vec<f64>>();
        let dx = match (&spec.layers[li], &cache.layers[li]) {
            (LayerSpec::Conv3d { kernel, stride, .. }, LayerCache::Conv { w, cols }) => {
                let g = ConvGeom { input: sin, output: sout, kernel: *kernel, stride: *stride };
                let parts = par_map(n, |i| conv_backward(&g, w, &cols[i], &dy[i * sout.len()..(i + 1) * sout.len()], need_dx));
                let mut dw = vec![T::zero(); w.len()];
                let mut db = vec![T::zero(); sout.c];
                let mut dx = Vec::with_capacity(if need_dx { n * sin.len() } else { 0 });
                // fixed-order reduction over samples
                for (pw, pb, px) in parts {
                    dw.iter_mut().zip(&pw).for_each(|(a, b)| *a += *b);
                    db.iter_mut().zip(&pb).for_each(|(a, b)| *a += *b);
                    if let Some(px) = px {
                        dx.extend_from_slice(&px);
                    }
                }
                grads.layers[li] = vec![to64(&dw), to64(&db)];
                dx
            }
            (LayerSpec::BatchNorm { .. }, LayerCache::Norm { gamma, xhat, inv_std, .. }) => {
                let (dg, dbeta, dx) = bn_backward(&dy, xhat, inv_std, gamma, n, sin);
                grads.layers[li] = vec![to64(&dg), to64(&dbeta)];
                dx
            }
            (LayerSpec::PRelu { .. }, LayerCache::PRelu { a, x }) => {
                let (da, dx) = prelu_backward(x, &dy, n, sin, a);
                grads.layers[li] = vec![to64(&da)];
                dx
            }
            (LayerSpec::MaxPool2, LayerCache::Pool { arg }) => maxpool_backward(&dy, arg, n * sin.len()),
            (LayerSpec::Flatten, LayerCache::Flatten) => std::mem::take(&mut dy),
            (LayerSpec::FullyConnected { inputs, outputs }, LayerCache::Fc { w, x }) => {
                let (dw, db, dx) = fc_backward(x, &dy, n, *inputs, *outputs, w, need_dx);
                grads.layers[li] = vec![to64(&dw), to64(&db)];
                dx.unwrap_or_default()
            }
            (LayerSpec::Sigmoid, LayerCache::Sigmoid { y }) => dy.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect(),
            _ => return Err(Error::InvalidArgument(format!("cache entry {li} does not match the layer kind"))),
        };
        dy = dx;
    }
    Ok(grads)
}

/// Mean over the batch of the squared L2 distance between prediction and
/// target rows.
pub fn loss_l2(pred: &[Loadings], target: &[Loadings]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::DimensionMismatch(format!("prediction has {} values, target {}", p.len(), t.len())));
        }
        total += p.0.iter().zip(&t.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / pred.len() as f64)
}

/// Per-sample squared errors and `dL/d(output)` for the batch-mean loss.
pub(crate) fn loss_and_grad<T: Real>(output: &[T], targets: &[&[f64]], m: usize) -> (Vec<f64>, Vec<T>) {
    let n = targets.len();
    let mut per = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n * m);
    for (row, t) in output.chunks(m).zip(targets) {
        let mut s = 0.0;
        for (&p, &t) in row.iter().zip(t.iter()) {
            let d = p.f64() - t;
            s += d * d;
            grad.push(T::of(2.0 * d / n as f64));
        }
        per.push(s);
    }
    (per, grad)
}
