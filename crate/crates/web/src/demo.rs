//! Plain-Rust side of the browser demo, kept free of wasm-bindgen types so it
//! can be tested natively.

use shapeforge::augment::{fit_tps, warp_volume};
use shapeforge::shapespace::{build_pca, CorrespondenceSet, Loadings, ShapeSpace};
use shapeforge::synthdata::{generate_study, Split, StudyConfig, StudySample};
use shapeforge::volume::{Geometry, Volume};
use shapeforge::{Error, Result};

/// A small synthetic cohort, its shape space and the scans behind it.
pub struct Demo {
    pub ss: ShapeSpace,
    pub train: Vec<StudySample>,
    pub pathological: Vec<StudySample>,
}

pub fn demo_study(n_train: usize) -> StudyConfig {
    StudyConfig {
        n_pdm_train: n_train,
        n_held_out: 0,
        n_unseen_normal: 0,
        n_unseen_pathological: 3,
        points: 192,
        render_geometry: Geometry::centered_cube(32, 2.0).expect("valid"),
        downsample: 1,
        mesh_geometry: Geometry::centered_cube(12, 6.0).expect("valid"),
        noise_sigma: 3.0,
        ..StudyConfig::default()
    }
}

impl Demo {
    pub fn new(seed: u64, n_train: usize) -> Result<Self> {
        if n_train < 3 {
            return Err(Error::InvalidArgument("the demo needs at least 3 training subjects".into()));
        }
        let (train, pathological): (Vec<_>, Vec<_>) =
            generate_study(&demo_study(n_train), seed)?.into_iter().partition(|s| s.split == Split::PdmTrain);
        let shapes: Vec<CorrespondenceSet> = train.iter().map(|s| s.shape.clone()).collect();
        let ss = build_pca(&shapes, 0.99, 12)?;
        Ok(Self { ss, train, pathological })
    }

    /// Loadings from per-mode standard-deviation units. Missing entries are 0.
    pub fn loadings(&self, z: &[f64]) -> Loadings {
        Loadings((0..self.ss.m()).map(|k| z.get(k).copied().unwrap_or(0.0) * self.ss.eigenvalues()[k].sqrt()).collect())
    }

    pub fn shape(&self, z: &[f64]) -> Result<CorrespondenceSet> {
        self.ss.reconstruct(&self.loadings(z))
    }

    pub fn mahalanobis(&self, z: &[f64]) -> Result<f64> {
        self.ss.mahalanobis(&self.loadings(z))
    }

    /// Subject `i` of the training cohort, then the pathological ones.
    pub fn subject(&self, i: usize) -> Result<&StudySample> {
        self.train.iter().chain(&self.pathological).nth(i).ok_or_else(|| Error::InvalidArgument(format!("no subject {i}")))
    }

    pub fn subject_count(&self) -> usize {
        self.train.len() + self.pathological.len()
    }

    /// Per-mode standard scores of a subject's true shape.
    pub fn subject_scores(&self, i: usize) -> Result<Vec<f64>> {
        let l = self.ss.project(&self.subject(i)?.shape)?;
        Ok(l.0.iter().zip(self.ss.eigenvalues()).map(|(c, e)| c / e.sqrt()).collect())
    }

    /// Warp subject `i`'s scan so that its shape moves onto the shape at `z`.
    pub fn warped(&self, i: usize, z: &[f64]) -> Result<Volume> {
        let s = self.subject(i)?;
        let warp = fit_tps(&self.shape(z)?, &s.shape, 0.0)?;
        warp_volume(&warp, &s.volume, *s.volume.geometry())
    }
}

fn plane_axes(axis: usize) -> Result<(usize, usize)> {
    match axis {
        0 => Ok((1, 2)),
        1 => Ok((0, 2)),
        2 => Ok((0, 1)),
        _ => Err(Error::InvalidArgument(format!("axis must be 0, 1 or 2, got {axis}"))),
    }
}

/// Width and height of a slice orthogonal to `axis`.
pub fn slice_size(v: &Volume, axis: usize) -> Result<(usize, usize)> {
    let (u, w) = plane_axes(axis)?;
    Ok((v.dims()[u], v.dims()[w]))
}

/// RGBA grey-level slice, rows top to bottom with the second in-plane axis
/// pointing up. Intensities are windowed to the whole volume's range.
pub fn slice_rgba(v: &Volume, axis: usize, index: usize) -> Result<Vec<u8>> {
    let (u, w) = plane_axes(axis)?;
    let d = v.dims();
    if index >= d[axis] {
        return Err(Error::InvalidArgument(format!("slice {index} out of 0..{}", d[axis])));
    }
    let (lo, hi) = v.min_max();
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = Vec::with_capacity(d[u] * d[w] * 4);
    for row in (0..d[w]).rev() {
        for col in 0..d[u] {
            let mut ijk = [0; 3];
            ijk[axis] = index;
            ijk[u] = col;
            ijk[w] = row;
            let g = ((v.get(ijk[0], ijk[1], ijk[2]) - lo) * scale).round().clamp(0.0, 255.0) as u8;
            out.extend_from_slice(&[g, g, g, 255]);
        }
    }
    Ok(out)
}

/// Points of `shape` within half a voxel of the slice plane, as
/// `(column, row)` pixel pairs matching [`slice_rgba`].
pub fn slice_points(v: &Volume, shape: &CorrespondenceSet, axis: usize, index: usize) -> Result<Vec<f64>> {
    let (u, w) = plane_axes(axis)?;
    let g = v.geometry();
    let voxel = |p: &shapeforge::Vec3, a: usize| (p[a] - g.origin[a]) / g.spacing[a];
    let mut out = Vec::new();
    for p in &shape.points {
        if (voxel(p, axis) - index as f64).abs() <= 0.5 {
            out.push(voxel(p, u));
            out.push(g.dims[w] as f64 - 1.0 - voxel(p, w));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_shape_at_zero_scores() {
        let d = Demo::new(1, 8).unwrap();
        assert!(d.ss.m() >= 2);
        let s = d.shape(&[]).unwrap();
        assert_eq!(s, d.ss.mean_shape());
        assert!(d.mahalanobis(&[]).unwrap().abs() < 1e-12);
        let m = d.mahalanobis(&[3.0, 4.0]).unwrap();
        assert!((m - 5.0).abs() < 1e-9, "{m}");
    }

    #[test]
    fn pathological_subjects_score_further_out() {
        let d = Demo::new(2, 12).unwrap();
        let dist = |i: usize| d.subject_scores(i).unwrap().iter().map(|z| z * z).sum::<f64>().sqrt();
        let normal = (0..12).map(dist).sum::<f64>() / 12.0;
        let path = (12..15).map(dist).sum::<f64>() / 3.0;
        assert!(path > normal, "{path} vs {normal}");
    }

    #[test]
    fn warp_onto_projected_shape_stays_close() {
        let d = Demo::new(3, 6).unwrap();
        let z = d.subject_scores(0).unwrap();
        // the projected shape is not the subject's exact shape, so only
        // require the warped scan to stay close
        let v = d.warped(0, &z).unwrap();
        let src = &d.subject(0).unwrap().volume;
        let diff: f32 = v.data().iter().zip(src.data()).map(|(a, b)| (a - b).abs()).sum::<f32>() / v.data().len() as f32;
        assert!(diff < 2.0, "{diff}");
    }

    #[test]
    fn slices_have_the_right_size() {
        let d = Demo::new(4, 4).unwrap();
        let v = &d.subject(0).unwrap().volume;
        for axis in 0..3 {
            let (w, h) = slice_size(v, axis).unwrap();
            assert_eq!(slice_rgba(v, axis, 5).unwrap().len(), w * h * 4);
        }
        assert!(slice_rgba(v, 3, 0).is_err());
        assert!(slice_rgba(v, 0, 99).is_err());
        let mid = v.dims()[2] / 2;
        let pts = slice_points(v, &d.subject(0).unwrap().shape, 2, mid).unwrap();
        assert!(!pts.is_empty() && pts.len() % 2 == 0);
    }
}
