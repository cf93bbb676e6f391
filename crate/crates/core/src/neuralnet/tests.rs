use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::volume::{Geometry, Volume};

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn assert_grads_ok(spec: &NetSpec, seed: u64, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = xavier_init(spec, seed).unwrap();
    // move PReLU slopes and BN affine params off their initial values
    for (i, (l, lp)) in spec.layers.iter().zip(p.layers.iter_mut()).enumerate() {
        let feeds_bn = matches!(spec.layers.get(i + 1), Some(LayerSpec::BatchNorm { .. }));
        match l {
            LayerSpec::PRelu { .. } => lp.params[0].iter_mut().for_each(|a| *a = rng.random_range(0.1..0.5)),
            LayerSpec::BatchNorm { .. } => {
                lp.params[0].iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
                lp.params[1].iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            LayerSpec::Conv3d { .. } => {
                // the loss is invariant to the scale of weights feeding batch
                // norm; larger weights flatten it so the 1e-3 step stays accurate
                if feeds_bn {
                    lp.params[0].iter_mut().for_each(|w| *w *= 10.0);
                }
                lp.params[1].iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2))
            }
            LayerSpec::FullyConnected { .. } => lp.params[1].iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2)),
            _ => {}
        }
    }
    let x = rand_vec(n * spec.input.len(), &mut rng);
    let t: Vec<Vec<f64>> = (0..n).map(|_| rand_vec(spec.output_dim, &mut rng)).collect();
    let targets: Vec<&[f64]> = t.iter().map(Vec::as_slice).collect();
    let checks = check_gradients(spec, &p, &Batch::new(n, spec.input, x).unwrap(), &targets, 1e-3).unwrap();
    for c in &checks {
        assert!(c.rel_error < 1e-4, "seed {seed}: {c:?}");
    }
}

#[test]
fn gradients_tiny_loadings_regressor() {
    let spec = NetSpec::loadings_regressor([8; 3], 3, 2, 6).unwrap();
    for seed in 0..5 {
        assert_grads_ok(&spec, seed, 8);
    }
}

#[test]
fn gradients_strided_conv_and_mlp() {
    let spec = NetSpec {
        input: Shape::new(2, [5, 4, 3]),
        layers: vec![
            LayerSpec::Conv3d { in_ch: 2, out_ch: 3, kernel: 3, stride: 2 },
            LayerSpec::PRelu { channels: 3 },
            LayerSpec::Conv3d { in_ch: 3, out_ch: 2, kernel: 1, stride: 1 },
            LayerSpec::Flatten,
            LayerSpec::FullyConnected { inputs: 2 * 3 * 2 * 2, outputs: 2 },
            LayerSpec::Sigmoid,
        ],
        output_dim: 2,
    };
    assert_grads_ok(&spec, 7, 2);
    assert_grads_ok(&NetSpec::mlp(5, 7).unwrap(), 8, 4);
}

fn toy_set(n: usize, m: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..n).map(|_| rand_vec(512, &mut rng)).collect();
    let ts = (0..n).map(|_| rand_vec(m, &mut rng)).collect();
    (xs, ts)
}

#[test]
fn overfits_ten_samples() {
    let spec = NetSpec::loadings_regressor([8; 3], 3, 4, 16).unwrap();
    let (xs, ts) = toy_set(10, 3, 1);
    let data = Samples::new(xs.iter().map(Vec::as_slice).collect(), ts.iter().map(Vec::as_slice).collect()).unwrap();
    let cfg = TrainConfig { epochs: 200, seed: 2, ..TrainConfig::default() };
    let (p, hist) = train::<f64, f64>(&spec, xavier_init(&spec, 3).unwrap(), &data, None, &cfg).unwrap();
    let last = hist.last().unwrap().train_rmse;
    assert!(last < 1e-2, "final rmse {last}");
    assert!(hist[0].train_rmse > 10.0 * last);
    // largest target spread stands in for sqrt(λ₁)
    let preds = predict_rows::<f64, f64>(&spec, &p, &data.inputs, 10).unwrap();
    for (pr, t) in preds.iter().zip(&ts) {
        let err = pr.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 0.1 * 0.577, "infer-mode error {err}");
    }
}

#[test]
fn training_is_reproducible() {
    let spec = NetSpec::loadings_regressor([8; 3], 2, 2, 8).unwrap();
    let (xs, ts) = toy_set(12, 2, 4);
    let data = Samples::new(xs.iter().map(Vec::as_slice).collect(), ts.iter().map(Vec::as_slice).collect()).unwrap();
    let val = Samples::new(xs[..4].iter().map(Vec::as_slice).collect(), ts[..4].iter().map(Vec::as_slice).collect()).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 5, seed: 9, ..TrainConfig::default() };
    let run = || train::<f32, f64>(&spec, xavier_init(&spec, 1).unwrap(), &data, Some(&val), &cfg).unwrap();
    let (pa, ha) = run();
    let (pb, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(pa, pb);
    assert!(ha.iter().all(|e| e.val_rmse.is_some()));
}

#[test]
fn diverging_loss_is_reported() {
    let spec = NetSpec::mlp(2, 3).unwrap();
    let xs = [vec![1e30, 1.0]];
    let ts = [vec![0.5]];
    let data = Samples::new(xs.iter().map(Vec::as_slice).collect(), ts.iter().map(Vec::as_slice).collect()).unwrap();
    let mut p = xavier_init(&spec, 0).unwrap();
    p.layers[0].params[0][0] = f64::MAX;
    let r = train::<f64, f64>(&spec, p, &data, None, &TrainConfig { epochs: 1, ..TrainConfig::default() });
    assert!(matches!(r, Err(crate::Error::Diverged { epoch: 0, batch: 0 })), "{r:?}");
}

#[test]
fn running_stats_match_training_distribution() {
    let spec = NetSpec {
        input: Shape::new(1, [4, 4, 4]),
        layers: vec![
            LayerSpec::Conv3d { in_ch: 1, out_ch: 2, kernel: 3, stride: 1 },
            LayerSpec::batch_norm(2),
            LayerSpec::Flatten,
        ],
        output_dim: 128,
    };
    let mut p = xavier_init(&spec, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..10 * 64).map(|_| 4.0 + 3.0 * rng.random::<f64>()).collect();
    let batch = Batch::new(10, spec.input, x).unwrap();
    let mut train_out = Vec::new();
    for _ in 0..100 {
        let fp = forward(&spec, &p, &batch, Mode::Train).unwrap();
        fp.update_running_stats(&spec, &mut p).unwrap();
        train_out = fp.output;
    }
    let infer_out = forward(&spec, &p, &batch, Mode::Infer).unwrap().output;
    for c in 0..2 {
        let mean =
            |v: &[f64]| (0..10).map(|i| v[i * 128 + c * 64..i * 128 + (c + 1) * 64].iter().sum::<f64>()).sum::<f64>() / 640.0;
        assert!((mean(&train_out) - mean(&infer_out)).abs() < 0.1);
    }
}

#[test]
fn predict_matches_singleton_forward() {
    let spec = NetSpec::loadings_regressor([8; 3], 3, 2, 6).unwrap();
    let p = xavier_init(&spec, 2).unwrap();
    let g = Geometry::centered_cube(8, 1.0).unwrap();
    let v = Volume::from_fn(g, |x| (x.x * x.y + x.z) as f32).unwrap();
    let got = predict_loadings(&spec, &p, &v).unwrap();
    let fp = forward(&spec, &p, &Batch::from_tensors(&[Tensor4::<f32>::from_volume(&v)]).unwrap(), Mode::Infer).unwrap();
    assert_eq!(got.0, fp.output.iter().map(|&x| x as f64).collect::<Vec<_>>());
    let other = Volume::from_fn(g, |x| x.x as f32).unwrap();
    let both = predict_loadings_batch(&spec, &p, &[&other, &v], 2).unwrap();
    for (a, b) in both[1].0.iter().zip(&got.0) {
        assert!((a - b).abs() < 1e-6);
    }
    let wrong = Volume::zeros(Geometry::centered_cube(6, 1.0).unwrap());
    assert!(predict_loadings(&spec, &p, &wrong).is_err());
}

#[test]
fn mlp_constant_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<crate::shapespace::Loadings> = (0..40).map(|_| crate::shapespace::Loadings(rand_vec(4, &mut rng))).collect();
    let mlp = train_mlp(&xs, &vec![0.5; 40], &MlpConfig::default()).unwrap();
    for p in mlp.predict(&xs).unwrap() {
        assert!((p - 0.5).abs() < 0.05, "{p}");
    }
}

#[test]
fn mlp_separable_loss_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<crate::shapespace::Loadings> = (0..60).map(|_| crate::shapespace::Loadings(rand_vec(3, &mut rng))).collect();
    let ys: Vec<f64> = xs.iter().map(|x| if x.0[0] + 0.5 * x.0[1] > 0.0 { 1.0 } else { 0.0 }).collect();
    let cfg = MlpConfig {
        train: TrainConfig { epochs: 10, batch_size: 60, lr: 0.005, ..TrainConfig::default() },
        ..MlpConfig::default()
    };
    let mlp = train_mlp(&xs, &ys, &cfg).unwrap();
    for w in mlp.history.windows(2) {
        assert!(w[1].train_rmse < w[0].train_rmse, "{:?}", mlp.history);
    }
    let extreme = vec![crate::shapespace::Loadings(vec![1e6, -1e6, 3.0]), crate::shapespace::Loadings(vec![-1e6, 1e6, 0.0])];
    assert!(mlp.predict(&extreme).unwrap().iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn rmse_csv_round_trip() {
    let h = vec![
        EpochStats { epoch: 1, train_rmse: 2.5, val_rmse: Some(3.0) },
        EpochStats { epoch: 2, train_rmse: 1.25, val_rmse: None },
    ];
    let dir = tempfile::tempdir().unwrap();
    write_rmse_csv(dir.path().join("r.csv"), &h).unwrap();
    assert_eq!(read_rmse_csv(dir.path().join("r.csv")).unwrap(), h);
}
