//! Per-layer kernels on single samples or whole batches. Activations are
//! channel-major, x fastest.

use super::real::{gemm, Real};
use super::spec::Shape;

pub(crate) struct ConvGeom {
    pub input: Shape,
    pub output: Shape,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.input.c * self.kernel.pow(3)
    }

    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }
}

/// Unfold one sample into a `(C·k³) × S_out` patch matrix.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let [nx, ny, nz] = g.input.d;
    let [ox, oy, oz] = g.output.d;
    let (k, s, pad) = (g.kernel, g.stride as isize, g.pad());
    let so = ox * oy * oz;
    let mut row = 0;
    for c in 0..g.input.c {
        let xc = &x[c * nx * ny * nz..(c + 1) * nx * ny * nz];
        for dz in 0..k {
            for dy in 0..k {
                for dx in 0..k {
                    let out = &mut cols[row * so..(row + 1) * so];
                    let mut col = 0;
                    for z in 0..oz {
                        let iz = z as isize * s + dz as isize - pad;
                        for y in 0..oy {
                            let iy = y as isize * s + dy as isize - pad;
                            let inside_zy = iz >= 0 && iz < nz as isize && iy >= 0 && iy < ny as isize;
                            let base = if inside_zy { (iz as usize * ny + iy as usize) * nx } else { 0 };
                            for xo in 0..ox {
                                let ix = xo as isize * s + dx as isize - pad;
                                out[col] =
                                    if inside_zy && ix >= 0 && ix < nx as isize { xc[base + ix as usize] } else { T::zero() };
                                col += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add patch gradients back onto the input.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let [nx, ny, nz] = g.input.d;
    let [ox, oy, oz] = g.output.d;
    let (k, s, pad) = (g.kernel, g.stride as isize, g.pad());
    let so = ox * oy * oz;
    let mut row = 0;
    for c in 0..g.input.c {
        let off = c * nx * ny * nz;
        for dz in 0..k {
            for dy in 0..k {
                for ddx in 0..k {
                    let src = &cols[row * so..(row + 1) * so];
                    let mut col = 0;
                    for z in 0..oz {
                        let iz = z as isize * s + dz as isize - pad;
                        for y in 0..oy {
                            let iy = y as isize * s + dy as isize - pad;
                            let inside_zy = iz >= 0 && iz < nz as isize && iy >= 0 && iy < ny as isize;
                            for xo in 0..ox {
                                let ix = xo as isize * s + ddx as isize - pad;
                                if inside_zy && ix >= 0 && ix < nx as isize {
                                    dx[off + (iz as usize * ny + iy as usize) * nx + ix as usize] += src[col];
                                }
                                col += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// One sample: returns the output and the patch matrix kept for backward.
pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, w: &[T], b: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
    let so = g.output.spatial();
    let mut cols = vec![T::zero(); g.rows() * so];
    im2col(g, x, &mut cols);
    let mut y = vec![T::zero(); g.output.c * so];
    for (co, chunk) in y.chunks_mut(so).enumerate() {
        chunk.fill(b[co]);
    }
    gemm(g.output.c, g.rows(), so, w, false, &cols, false, T::one(), &mut y);
    (y, cols)
}

/// One sample: `(dW, db, dX)`; `dX` is skipped when not needed.
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    w: &[T],
    cols: &[T],
    dy: &[T],
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let so = g.output.spatial();
    let (co, kr) = (g.output.c, g.rows());
    let mut dw = vec![T::zero(); co * kr];
    gemm(co, so, kr, dy, false, cols, true, T::zero(), &mut dw);
    let db = dy.chunks(so).map(|c| c.iter().fold(T::zero(), |a, &v| a + v)).collect();
    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); kr * so];
        gemm(kr, co, so, w, true, dy, false, T::zero(), &mut dcols);
        let mut dx = vec![T::zero(); g.input.len()];
        col2im(g, &dcols, &mut dx);
        dx
    });
    (dw, db, dx)
}

/// Per-channel batch statistics (biased variance) over batch and space.
pub(crate) fn channel_stats<T: Real>(x: &[T], n: usize, s: Shape) -> (Vec<f64>, Vec<f64>) {
    let sp = s.spatial();
    let count = (n * sp) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        let mut acc = 0.0;
        for i in 0..n {
            let base = (i * s.c + c) * sp;
            acc += x[base..base + sp].iter().map(|v| v.f64()).sum::<f64>();
        }
        mean[c] = acc / count;
        let mut acc = 0.0;
        for i in 0..n {
            let base = (i * s.c + c) * sp;
            acc += x[base..base + sp].iter().map(|v| (v.f64() - mean[c]).powi(2)).sum::<f64>();
        }
        var[c] = acc / count;
    }
    (mean, var)
}

/// Normalize with the given per-channel mean and variance, then scale and
/// shift. Returns `(y, x̂, 1/σ)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_apply<T: Real>(
    x: &[T],
    n: usize,
    s: Shape,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let sp = s.spatial();
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + eps).sqrt())).collect();
    let mu: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for i in 0..n {
        for c in 0..s.c {
            let base = (i * s.c + c) * sp;
            for j in base..base + sp {
                let h = (x[j] - mu[c]) * inv_std[c];
                xhat[j] = h;
                y[j] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat, inv_std)
}

/// Backward through batch statistics: `(dγ, dβ, dX)`.
pub(crate) fn bn_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    n: usize,
    s: Shape,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let sp = s.spatial();
    let count = T::of((n * sp) as f64);
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for i in 0..n {
        for c in 0..s.c {
            let base = (i * s.c + c) * sp;
            for j in base..base + sp {
                dgamma[c] += dy[j] * xhat[j];
                dbeta[c] += dy[j];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for i in 0..n {
        for c in 0..s.c {
            let base = (i * s.c + c) * sp;
            let k = gamma[c] * inv_std[c] / count;
            for j in base..base + sp {
                dx[j] = k * (count * dy[j] - dbeta[c] - xhat[j] * dgamma[c]);
            }
        }
    }
    (dgamma, dbeta, dx)
}

pub(crate) fn prelu_forward<T: Real>(x: &[T], n: usize, s: Shape, a: &[T]) -> Vec<T> {
    let sp = s.spatial();
    let mut y = x.to_vec();
    for i in 0..n {
        for c in 0..s.c {
            let base = (i * s.c + c) * sp;
            for v in &mut y[base..base + sp] {
                if *v <= T::zero() {
                    *v *= a[c];
                }
            }
        }
    }
    y
}

/// `(da, dX)`.
pub(crate) fn prelu_backward<T: Real>(x: &[T], dy: &[T], n: usize, s: Shape, a: &[T]) -> (Vec<T>, Vec<T>) {
    let sp = s.spatial();
    let mut da = vec![T::zero(); s.c];
    let mut dx = dy.to_vec();
    for i in 0..n {
        for c in 0..s.c {
            let base = (i * s.c + c) * sp;
            for j in base..base + sp {
                if x[j] <= T::zero() {
                    da[c] += dy[j] * x[j];
                    dx[j] = dy[j] * a[c];
                }
            }
        }
    }
    (da, dx)
}

/// 2×2×2 max pooling over a whole batch; ties keep the first element in
/// x-fastest order. Returns the output and flat argmax indices.
pub(crate) fn maxpool_forward<T: Real>(x: &[T], n: usize, s: Shape, out: Shape) -> (Vec<T>, Vec<u32>) {
    let [nx, ny, nz] = s.d;
    let [ox, oy, oz] = out.d;
    let mut y = Vec::with_capacity(n * out.len());
    let mut arg = Vec::with_capacity(n * out.len());
    for ic in 0..n * s.c {
        let base = ic * nx * ny * nz;
        for z in 0..oz {
            for yy in 0..oy {
                for xx in 0..ox {
                    let mut best = base + ((2 * z) * ny + 2 * yy) * nx + 2 * xx;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let j = base + ((2 * z + dz) * ny + 2 * yy + dy) * nx + 2 * xx + dx;
                                if x[j] > x[best] {
                                    best = j;
                                }
                            }
                        }
                    }
                    y.push(x[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Real>(dy: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &j) in dy.iter().zip(arg) {
        dx[j as usize] += g;
    }
    dx
}

/// `Y (n×out) = X (n×in) · Wᵀ + b`.
pub(crate) fn fc_forward<T: Real>(x: &[T], n: usize, inputs: usize, outputs: usize, w: &[T], b: &[T]) -> Vec<T> {
    let mut y = Vec::with_capacity(n * outputs);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm(n, inputs, outputs, x, false, w, true, T::one(), &mut y);
    y
}

/// `(dW, db, dX)`.
pub(crate) fn fc_backward<T: Real>(
    x: &[T],
    dy: &[T],
    n: usize,
    inputs: usize,
    outputs: usize,
    w: &[T],
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let mut dw = vec![T::zero(); outputs * inputs];
    gemm(outputs, n, inputs, dy, true, x, false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); outputs];
    for row in dy.chunks(outputs) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); n * inputs];
        gemm(n, outputs, inputs, dy, false, w, false, T::zero(), &mut dx);
        dx
    });
    (dw, db, dx)
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
