//! 3D scalar volumes.
//!
//! World coordinates follow the voxel-center convention
//! `world = origin + index * spacing`. Samples outside the grid read the
//! padding value 0.

use std::fs;
use std::path::Path;

use crate::{Error, Result, Vec3};

const SVOL_MAGIC: &[u8; 8] = b"SVOL0001";
const SVOL_HEADER_LEN: usize = 8 + 3 * 4 + 6 * 8;

/// Grid layout shared by a volume and anything resampled onto it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("volume dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::NonFinite("volume origin".into()));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Cube of `n³` voxels with isotropic `spacing`, centered on the world origin.
    pub fn centered_cube(n: usize, spacing: f64) -> Result<Self> {
        let half = (n as f64 - 1.0) * spacing / 2.0;
        Self::new([n; 3], [spacing; 3], [-half; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    /// Length of one voxel diagonal in mm.
    pub fn voxel_diagonal(&self) -> f64 {
        self.spacing.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// A scalar image on a regular grid, stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::DimensionMismatch(format!(
                "volume data has {} values, dims {:?} need {}",
                data.len(),
                geometry.dims,
                geometry.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("volume value at linear index {pos}")));
        }
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        Self { data: vec![0.0; geometry.len()], geometry }
    }

    /// Evaluate `f` at every voxel center.
    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(Vec3) -> f32) -> Result<Self> {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(geometry.world(i, j, k)));
                }
            }
        }
        Self::new(geometry, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f32) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("volume value".into()));
        }
        let idx = self.geometry.index(i, j, k);
        self.data[idx] = value;
        Ok(())
    }

    /// Trilinear interpolation at world point `p`; neighbors outside the grid
    /// read as 0.
    pub fn trilinear_sample(&self, p: &Vec3) -> Result<f32> {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::NonFinite(format!("sample point {p:?}")));
        }
        Ok(self.sample_finite(p))
    }

    pub(crate) fn sample_finite(&self, p: &Vec3) -> f32 {
        let g = &self.geometry;
        let mut base = [0i64; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let mut f = (p[a] - g.origin[a]) / g.spacing[a];
            // absorb round-off so that voxel centers hit their node exactly
            let r = f.round();
            if (f - r).abs() < 1e-9 {
                f = r;
            }
            let fl = f.floor();
            if fl < -1.0 || fl > g.dims[a] as f64 {
                return 0.0;
            }
            base[a] = fl as i64;
            frac[a] = f - fl;
        }
        let mut acc = 0.0f64;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let up = (corner >> a) & 1 == 1;
                let ia = base[a] + up as i64;
                if ia < 0 || ia >= g.dims[a] as i64 {
                    inside = false;
                    break;
                }
                idx[a] = ia as usize;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
            }
            if inside && w != 0.0 {
                acc += w * self.data[g.index(idx[0], idx[1], idx[2])] as f64;
            }
        }
        acc as f32
    }

    /// Block-average over `factor³` cells. Trailing voxels that do not fill a
    /// whole block are dropped.
    pub fn downsample(&self, factor: usize) -> Result<Volume> {
        if factor == 0 {
            return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
        }
        let g = &self.geometry;
        if g.dims.iter().any(|&d| factor > d) {
            return Err(Error::InvalidArgument(format!("downsample factor {factor} exceeds volume dims {:?}", g.dims)));
        }
        let out_dims = g.dims.map(|d| d / factor);
        let f = factor as f64;
        let out_geom =
            Geometry::new(out_dims, g.spacing.map(|s| s * f), [0, 1, 2].map(|a| g.origin[a] + (f - 1.0) / 2.0 * g.spacing[a]))?;
        let norm = 1.0 / (f * f * f);
        let mut data = Vec::with_capacity(out_geom.len());
        for k in 0..out_dims[2] {
            for j in 0..out_dims[1] {
                for i in 0..out_dims[0] {
                    let mut sum = 0.0f64;
                    for dk in 0..factor {
                        for dj in 0..factor {
                            for di in 0..factor {
                                sum += self.get(i * factor + di, j * factor + dj, k * factor + dk) as f64;
                            }
                        }
                    }
                    data.push((sum * norm) as f32);
                }
            }
        }
        Volume::new(out_geom, data)
    }

    /// Affine intensity map sending (min, max) to (0, 255).
    pub fn normalize_intensity(&self) -> Result<Volume> {
        let (lo, hi) =
            self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
        if !(hi > lo) {
            return Err(Error::Degenerate("cannot normalize a constant volume".into()));
        }
        let scale = 255.0 / (hi - lo);
        let data = self.data.iter().map(|&v| ((v as f64 - lo) * scale) as f32).collect();
        Volume::new(self.geometry, data)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Serialize to the SVOL container.
    pub fn to_svol_bytes(&self) -> Vec<u8> {
        let g = &self.geometry;
        let mut out = Vec::with_capacity(SVOL_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(SVOL_MAGIC);
        for d in g.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in g.spacing.iter().chain(g.origin.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_svol_bytes(bytes: &[u8]) -> Result<Volume> {
        if bytes.len() < SVOL_HEADER_LEN {
            return Err(Error::format("SVOL", format!("header truncated ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != SVOL_MAGIC {
            return Err(Error::format("SVOL", "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let dims = [u32_at(8), u32_at(12), u32_at(16)];
        let spacing = [f64_at(20), f64_at(28), f64_at(36)];
        let origin = [f64_at(44), f64_at(52), f64_at(60)];
        let geometry = Geometry::new(dims, spacing, origin)?;
        let need = SVOL_HEADER_LEN + 4 * geometry.len();
        if bytes.len() < need {
            return Err(Error::format("SVOL", format!("payload truncated: {} of {need} bytes", bytes.len())));
        }
        let data = bytes[SVOL_HEADER_LEN..need].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Volume::new(geometry, data)
    }

    pub fn write_svol(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_svol_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_svol(path: impl AsRef<Path>) -> Result<Volume> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_svol_bytes(&bytes)
    }
}
