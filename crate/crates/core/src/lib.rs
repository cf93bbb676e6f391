//! Statistical shape modeling directly from volumetric images.
//!
//! A point-distribution model (PCA over dense correspondences) defines a
//! low-dimensional shape space. Thin-plate-spline warps of a handful of real
//! images synthesize thousands of training volumes with known PCA loadings,
//! and a small 3D CNN learns to regress those loadings from raw intensities.
//! The evaluation side covers reconstruction errors, surface projection
//! errors after rigid registration, Mahalanobis characterization of
//! pathology, and paired/equivalence tests for downstream predictions.
//!
//! Modules, bottom-up:
//!
//! - [`volume`]: scalar grids, trilinear sampling, resampling, SVOL I/O
//! - [`mesh`]: triangle meshes, closest-point queries, marching cubes
//! - [`align`]: Kabsch fits and ICP against meshes
//! - [`shapespace`]: PCA shape space, projection and Mahalanobis distance
//! - [`synthdata`]: analytic shape family standing in for clinical scans
//! - [`augment`]: shape-space sampling, add-reject, TPS image warping
//! - [`neuralnet`]: from-scratch volumetric CNN and MLP with Adagrad
//! - [`evalstats`]: error reports, histograms, t-test and TOST
//! - [`pipeline`]: config-driven CLI stages and the run manifest

pub mod align;
pub mod augment;
pub mod error;
pub mod evalstats;
pub mod mesh;
mod mesh_tables;
pub mod neuralnet;
pub mod pipeline;
pub mod shapespace;
pub mod synthdata;
pub mod volume;

pub use error::{Error, Result};

/// 3-vector in world millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Run `f` over `0..n` and collect results in index order, in parallel when
/// the `parallel` feature is on.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
