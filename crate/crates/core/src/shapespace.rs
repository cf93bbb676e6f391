//! Point-distribution shape space: PCA over stacked correspondence vectors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result, Vec3};

const SSPC_MAGIC: &[u8; 8] = b"SSPC0001";

/// Eigenvalues below this fraction of the total variance count as zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// An ordered set of corresponding surface points.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub points: Vec<Vec3>,
}

impl CorrespondenceSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("correspondence point".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Stack as `[x0, y0, z0, x1, ...]`.
    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(3 * self.points.len(), self.points.iter().flat_map(|p| [p.x, p.y, p.z]))
    }

    pub fn unflatten(v: &DVector<f64>) -> Result<Self> {
        if v.len() % 3 != 0 {
            return Err(Error::DimensionMismatch(format!("flattened length {} is not a multiple of 3", v.len())));
        }
        Self::new(v.as_slice().chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }

    /// Euclidean distance in stacked 3P space.
    pub fn distance(&self, other: &CorrespondenceSet) -> f64 {
        self.points.iter().zip(&other.points).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            writeln!(s, "{},{},{}", p.x, p.y, p.z).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let c: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("correspondence CSV", format!("line {}: {e}", n + 1)))?;
            if c.len() != 3 {
                return Err(Error::format("correspondence CSV", format!("line {}: expected x,y,z", n + 1)));
            }
            points.push(Vec3::new(c[0], c[1], c[2]));
        }
        Self::new(points)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// PCA coefficients of one shape, in mm (not whitened).
#[derive(Debug, Clone, PartialEq)]
pub struct Loadings(pub Vec<f64>);

impl Loadings {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Mean shape plus the leading principal modes of the training shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpace {
    mean: DVector<f64>,
    /// One orthonormal mode per row.
    modes: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    total_variance: f64,
}

impl ShapeSpace {
    pub fn from_parts(mean: DVector<f64>, modes: DMatrix<f64>, eigenvalues: Vec<f64>, total_variance: f64) -> Result<Self> {
        if mean.len() % 3 != 0 || modes.ncols() != mean.len() || modes.nrows() != eigenvalues.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean {} / modes {}x{} / eigenvalues {}",
                mean.len(),
                modes.nrows(),
                modes.ncols(),
                eigenvalues.len()
            )));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("eigenvalues must be finite, non-negative and descending".into()));
        }
        Ok(Self { mean, modes, eigenvalues, total_variance })
    }

    /// Number of correspondence points.
    pub fn points(&self) -> usize {
        self.mean.len() / 3
    }

    /// Retained dimension M.
    pub fn m(&self) -> usize {
        self.eigenvalues.len()
    }

    /// True when the training shapes had no variation at all.
    pub fn is_degenerate(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn mean_shape(&self) -> CorrespondenceSet {
        CorrespondenceSet::unflatten(&self.mean).expect("mean length is a multiple of 3")
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Cumulative explained-variance fraction after each retained mode.
    pub fn cumulative_fractions(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|l| {
                acc += l;
                if self.total_variance > 0.0 {
                    acc / self.total_variance
                } else {
                    1.0
                }
            })
            .collect()
    }

    fn check_shape(&self, shape: &CorrespondenceSet) -> Result<()> {
        if shape.len() != self.points() {
            return Err(Error::DimensionMismatch(format!(
                "shape has {} points, shape space expects {}",
                shape.len(),
                self.points()
            )));
        }
        Ok(())
    }

    pub fn project(&self, shape: &CorrespondenceSet) -> Result<Loadings> {
        self.check_shape(shape)?;
        let centered = shape.flatten() - &self.mean;
        Ok(Loadings((&self.modes * centered).iter().copied().collect()))
    }

    pub fn reconstruct(&self, l: &Loadings) -> Result<CorrespondenceSet> {
        if l.len() != self.m() {
            return Err(Error::DimensionMismatch(format!("{} loadings for a {}-mode shape space", l.len(), self.m())));
        }
        let coeffs = DVector::from_column_slice(&l.0);
        CorrespondenceSet::unflatten(&(&self.mean + self.modes.tr_mul(&coeffs)))
    }

    /// `sqrt(Σ cᵢ² / λᵢ)` over the retained modes.
    pub fn mahalanobis(&self, l: &Loadings) -> Result<f64> {
        if l.len() != self.m() {
            return Err(Error::DimensionMismatch(format!("{} loadings for a {}-mode shape space", l.len(), self.m())));
        }
        let floor = EIGEN_FLOOR * self.total_variance;
        let mut q = 0.0;
        for (i, (c, lambda)) in l.0.iter().zip(&self.eigenvalues).enumerate() {
            if !(*lambda > floor) {
                return Err(Error::Degenerate(format!("mode {i} eigenvalue {lambda:e} is below the floor {floor:e}")));
            }
            q += c * c / lambda;
        }
        Ok(q.sqrt())
    }

    pub fn to_sspc_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.mean.len() * (1 + self.m()) + self.m()));
        out.extend_from_slice(SSPC_MAGIC);
        out.extend_from_slice(&(self.points() as u32).to_le_bytes());
        out.extend_from_slice(&(self.m() as u32).to_le_bytes());
        for v in self.mean.iter().chain(&self.eigenvalues) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for r in 0..self.m() {
            for v in self.modes.row(r).iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// The container does not carry the total variance; it is restored as
    /// the sum of the stored eigenvalues.
    pub fn from_sspc_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != SSPC_MAGIC {
            return Err(Error::format("SSPC", "bad magic or truncated header"));
        }
        let p = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let d = 3 * p;
        let count = d + m + m * d;
        if bytes.len() < 16 + 8 * count {
            return Err(Error::format("SSPC", "payload truncated"));
        }
        let vals: Vec<f64> =
            bytes[16..16 + 8 * count].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mean = DVector::from_column_slice(&vals[..d]);
        let eigenvalues = vals[d..d + m].to_vec();
        let modes = DMatrix::from_row_slice(m, d, &vals[d + m..]);
        let total = eigenvalues.iter().sum();
        Self::from_parts(mean, modes, eigenvalues, total)
    }

    pub fn write_sspc(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_sspc_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_sspc(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_sspc_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Fit a shape space to `shapes`.
///
/// The sample covariance (divisor N−1) is diagonalized through the N×N Gram
/// matrix of the centered shapes. M is the smallest mode count whose
/// cumulative variance fraction reaches `variance_target`, capped at
/// `max_modes`.
pub fn build_pca(shapes: &[CorrespondenceSet], variance_target: f64, max_modes: usize) -> Result<ShapeSpace> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidArgument(format!("variance target {variance_target} outside (0, 1]")));
    }
    if shapes.len() < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 shapes, got {}", shapes.len())));
    }
    let p = shapes[0].len();
    if let Some(bad) = shapes.iter().position(|s| s.len() != p) {
        return Err(Error::DimensionMismatch(format!("shape {bad} has {} points, shape 0 has {p}", shapes[bad].len())));
    }
    let n = shapes.len();
    let d = 3 * p;
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, s) in shapes.iter().enumerate() {
        x.row_mut(i).copy_from(&s.flatten().transpose());
    }
    let mean: DVector<f64> = x.row_mean().transpose();
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n - 1) as f64;
    let gram = (&x * x.transpose()) / denom;
    let total_variance = gram.trace();
    let eig = gram.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let floor = EIGEN_FLOOR * total_variance;
    // variance at rounding level (identical shapes) counts as none
    let roundoff = total_variance <= 1e-20 * (mean.norm_squared() + 1.0);
    let usable: Vec<usize> =
        if roundoff { Vec::new() } else { order.into_iter().filter(|&k| eig.eigenvalues[k] > floor).collect() };

    let mut m = 0;
    let mut acc = 0.0;
    for &k in &usable {
        if m > 0 && acc >= variance_target * total_variance {
            break;
        }
        acc += eig.eigenvalues[k];
        m += 1;
    }
    let m = m.min(max_modes).min(usable.len());

    let mut modes = DMatrix::<f64>::zeros(m, d);
    let mut eigenvalues = Vec::with_capacity(m);
    for (r, &k) in usable[..m].iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        let mut mode: DVector<f64> = x.tr_mul(&eig.eigenvectors.column(k)) / (denom * lambda).sqrt();
        // one modified Gram–Schmidt sweep against earlier modes
        for prev in 0..r {
            let proj = modes.row(prev).transpose().dot(&mode);
            mode -= modes.row(prev).transpose() * proj;
        }
        mode /= mode.norm();
        let lead = mode.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            mode = -mode;
        }
        modes.row_mut(r).copy_from(&mode.transpose());
        eigenvalues.push(lambda);
    }
    ShapeSpace::from_parts(mean, modes, eigenvalues, total_variance)
}
