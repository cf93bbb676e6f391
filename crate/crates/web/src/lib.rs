//! Browser demo: a shape-mode explorer and slice viewers for the synthetic
//! scans and their thin-plate-spline warps.

use wasm_bindgen::prelude::*;

pub mod demo;

use demo::{slice_points, slice_rgba, slice_size, Demo};

fn js(e: shapeforge::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Explorer {
    inner: Demo,
}

#[wasm_bindgen]
impl Explorer {
    /// Synthesize `n_train` normal subjects plus three with a bump and build
    /// the shape space from the normal ones.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_train: usize) -> Result<Explorer, JsError> {
        Ok(Explorer { inner: Demo::new(seed as u64, n_train).map_err(js)? })
    }

    pub fn modes(&self) -> usize {
        self.inner.ss.m()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.inner.ss.eigenvalues().to_vec()
    }

    pub fn cumulative_fractions(&self) -> Vec<f64> {
        self.inner.ss.cumulative_fractions()
    }

    /// Flat `x,y,z` list of the shape at per-mode standard scores `z`.
    pub fn shape_points(&self, z: &[f64]) -> Result<Vec<f64>, JsError> {
        let s = self.inner.shape(z).map_err(js)?;
        Ok(s.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
    }

    pub fn mahalanobis(&self, z: &[f64]) -> Result<f64, JsError> {
        self.inner.mahalanobis(z).map_err(js)
    }

    pub fn subject_count(&self) -> usize {
        self.inner.subject_count()
    }

    pub fn normal_count(&self) -> usize {
        self.inner.train.len()
    }

    pub fn subject_scores(&self, i: usize) -> Result<Vec<f64>, JsError> {
        self.inner.subject_scores(i).map_err(js)
    }

    /// `[width, height]` of a slice orthogonal to `axis`.
    pub fn slice_size(&self, axis: usize) -> Result<Vec<usize>, JsError> {
        let v = &self.inner.subject(0).map_err(js)?.volume;
        let (w, h) = slice_size(v, axis).map_err(js)?;
        Ok(vec![w, h])
    }

    pub fn depth(&self, axis: usize) -> Result<usize, JsError> {
        let v = &self.inner.subject(0).map_err(js)?.volume;
        v.dims().get(axis).copied().ok_or_else(|| JsError::new("axis must be 0, 1 or 2"))
    }

    /// RGBA slice of subject `i`'s scan.
    pub fn subject_slice(&self, i: usize, axis: usize, index: usize) -> Result<Vec<u8>, JsError> {
        slice_rgba(&self.inner.subject(i).map_err(js)?.volume, axis, index).map_err(js)
    }

    /// Subject `i`'s correspondences near the slice plane, as pixel pairs.
    pub fn subject_slice_points(&self, i: usize, axis: usize, index: usize) -> Result<Vec<f64>, JsError> {
        let s = self.inner.subject(i).map_err(js)?;
        slice_points(&s.volume, &s.shape, axis, index).map_err(js)
    }

    /// RGBA slice of subject `i`'s scan warped onto the shape at scores `z`.
    pub fn warped_slice(&self, i: usize, z: &[f64], axis: usize, index: usize) -> Result<Vec<u8>, JsError> {
        slice_rgba(&self.inner.warped(i, z).map_err(js)?, axis, index).map_err(js)
    }

    /// Points of the shape at scores `z` near the slice plane.
    pub fn shape_slice_points(&self, z: &[f64], axis: usize, index: usize) -> Result<Vec<f64>, JsError> {
        let v = &self.inner.subject(0).map_err(js)?.volume;
        slice_points(v, &self.inner.shape(z).map_err(js)?, axis, index).map_err(js)
    }
}
