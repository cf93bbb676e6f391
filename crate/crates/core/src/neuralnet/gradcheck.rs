//! Central finite-difference audit of `backward`.

use super::net::{backward, forward, loss_and_grad, Batch, Mode};
use super::params::NetParams;
use super::spec::NetSpec;
use crate::Result;

/// Relative error of one trainable array:
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, ZERO_GRAD_NORM)`.
/// The floor keeps arrays whose true gradient vanishes (a conv bias feeding
/// batch norm) from comparing rounding noise against rounding noise.
///
/// The loss is only piecewise smooth. When a `±h` probe flips a PReLU sign or
/// a pool winner, the difference quotient straddles a kink and says nothing
/// about the derivative, so that element is re-probed with `h/10`, `h/100`,
/// ... until both probes stay on the base piece. `reduced_steps` counts them.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayCheck {
    pub layer: usize,
    pub kind: &'static str,
    pub array: usize,
    pub len: usize,
    pub rel_error: f64,
    pub reduced_steps: usize,
}

const MAX_STEP_REDUCTIONS: usize = 4;

pub const ZERO_GRAD_NORM: f64 = 1e-6;

fn batch_loss(spec: &NetSpec, params: &NetParams, batch: &Batch<f64>, targets: &[&[f64]]) -> Result<(f64, Vec<u32>)> {
    let fp = forward(spec, params, batch, Mode::Train)?;
    let (per, _) = loss_and_grad(&fp.output, targets, spec.output_dim);
    let sig = fp.cache.as_ref().expect("train mode").branch_signature();
    Ok((per.iter().sum::<f64>() / per.len() as f64, sig))
}

/// Compare analytic gradients of the train-mode batch loss against central
/// differences with step `h` for every element of every trainable array.
pub fn check_gradients(
    spec: &NetSpec,
    params: &NetParams,
    batch: &Batch<f64>,
    targets: &[&[f64]],
    h: f64,
) -> Result<Vec<ArrayCheck>> {
    let fp = forward(spec, params, batch, Mode::Train)?;
    let (_, d_out) = loss_and_grad(&fp.output, targets, spec.output_dim);
    let cache = fp.cache.as_ref().expect("train mode");
    let analytic = backward(spec, params, cache, &d_out)?;
    let base_sig = cache.branch_signature();
    let mut p = params.clone();
    let mut out = Vec::new();
    for li in 0..spec.layers.len() {
        for ai in 0..p.layers[li].params.len() {
            let len = p.layers[li].params[ai].len();
            let mut num = vec![0.0; len];
            let mut reduced_steps = 0;
            for (j, slot) in num.iter_mut().enumerate() {
                let orig = p.layers[li].params[ai][j];
                let mut step = h;
                for tries in 0..=MAX_STEP_REDUCTIONS {
                    p.layers[li].params[ai][j] = orig + step;
                    let (up, sig_up) = batch_loss(spec, &p, batch, targets)?;
                    p.layers[li].params[ai][j] = orig - step;
                    let (down, sig_down) = batch_loss(spec, &p, batch, targets)?;
                    *slot = (up - down) / (2.0 * step);
                    if (sig_up == base_sig && sig_down == base_sig) || tries == MAX_STEP_REDUCTIONS {
                        break;
                    }
                    if tries == 0 {
                        reduced_steps += 1;
                    }
                    step /= 10.0;
                }
                p.layers[li].params[ai][j] = orig;
            }
            let a = &analytic.layers[li][ai];
            let diff = a.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(num.iter().map(|x| x * x).sum::<f64>().sqrt());
            let rel_error = diff / scale.max(ZERO_GRAD_NORM);
            out.push(ArrayCheck { layer: li, kind: spec.layers[li].name(), array: ai, len, rel_error, reduced_steps });
        }
    }
    Ok(out)
}
