//! Volumetric CNN regressor and a small MLP, written from scratch.
//!
//! Layers: 3D convolution (im2col + GEMM, zero padding `k/2`), batch
//! normalization, PReLU, 2×2×2 max pooling, flatten, fully connected and
//! sigmoid. Backpropagation is hand-written for each layer and audited by
//! central finite differences in [`gradcheck`]. Parameters are held in `f64`
//! and cast to the compute type per pass; Adagrad updates run in `f64`.

pub mod gradcheck;
mod layers;
pub mod net;
pub mod params;
pub mod real;
pub mod spec;
pub mod train;

pub use gradcheck::{check_gradients, ArrayCheck};
pub use net::{backward, forward, loss_l2, Batch, Cache, ForwardPass, Mode, Tensor4};
pub use params::{adagrad_step, read_snet, write_snet, xavier_init, Gradients, LayerParams, NetParams};
pub use real::Real;
pub use spec::{LayerSpec, NetSpec, Shape};
pub use train::{
    evaluate_rmse, predict_loadings, predict_loadings_batch, predict_rows, read_rmse_csv, rmse_csv, train, train_cnn, train_mlp,
    write_rmse_csv, EpochStats, Mlp, MlpConfig, Samples, TrainConfig,
};

#[cfg(test)]
mod tests;
