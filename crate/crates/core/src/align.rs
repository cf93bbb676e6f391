//! Rigid registration: closed-form Kabsch fits and point-to-point ICP.

use nalgebra::Matrix3;

use crate::mesh::TriMesh;
use crate::{par_map, Error, Result, Vec3};

/// Proper rigid motion `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn translation(t: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation by `angle` radians about `axis`, then translation by `t`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64, t: Vec3) -> Self {
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
        Self { rotation: *r.matrix(), translation: t }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// 12 floats: row-major rotation, then translation.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)], t.x, t.y, t.z]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("rotation is not proper orthonormal".into()));
        }
        Ok(Self { rotation, translation: Vec3::new(v[9], v[10], v[11]) })
    }

    pub fn to_ascii(&self) -> String {
        self.to_row_major().iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
    }

    pub fn from_ascii(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("rigid transform", format!("{e}")))?;
        let arr: [f64; 12] = vals
            .try_into()
            .map_err(|v: Vec<f64>| Error::format("rigid transform", format!("expected 12 floats, got {}", v.len())))?;
        Self::from_row_major(&arr)
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Least-squares rigid transform mapping `source[i]` onto `target[i]`.
///
/// Reflections are excluded by flipping the sign of the singular direction
/// with the smallest singular value when `det(V·Uᵀ) < 0`.
pub fn kabsch_fit(source: &[Vec3], target: &[Vec3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch(format!("{} source vs {} target points", source.len(), target.len())));
    }
    if source.len() < 3 {
        return Err(Error::Degenerate(format!("Kabsch fit needs at least 3 points, got {}", source.len())));
    }
    let cs = centroid(source);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let u = svd.u.ok_or_else(|| Error::Singular("SVD produced no U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Singular("SVD produced no Vᵀ".into()))?;
    // nalgebra does not promise an order; sort indices descending
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap());
    if !(sv[order[1]] > 1e-12 * sv[order[0]].max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("cross-covariance is rank deficient (collinear points)".into()));
    }
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let rotation = v * d * u.transpose();
    let translation = ct - rotation * cs;
    Ok(RigidTransform { rotation, translation })
}

/// Σ|T·sourceᵢ − targetᵢ|² / n, square-rooted.
pub fn rms_residual(t: &RigidTransform, source: &[Vec3], target: &[Vec3]) -> f64 {
    let ss: f64 = source.iter().zip(target).map(|(s, q)| (t.apply(s) - q).norm_squared()).sum();
    (ss / source.len() as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub final_rms: f64,
    /// RMS after initialization and after each iteration.
    pub history: Vec<f64>,
}

fn closest_targets(points: &[Vec3], t: &RigidTransform, mesh: &TriMesh) -> Result<(Vec<Vec3>, f64)> {
    let hits = par_map(points.len(), |i| mesh.closest_point(&t.apply(&points[i])));
    let mut targets = Vec::with_capacity(points.len());
    let mut ss = 0.0;
    for h in hits {
        let h = h?;
        ss += h.distance * h.distance;
        targets.push(h.point);
    }
    Ok((targets, (ss / points.len() as f64).sqrt()))
}

/// Point-to-point ICP of `points` onto the surface `mesh`.
///
/// A centroid translation (points' centroid onto the mesh vertex centroid) is
/// taken as the starting pose only when it lowers the initial RMS. Stops when
/// an iteration improves RMS by less than `tol`.
pub fn icp_to_mesh(points: &[Vec3], mesh: &TriMesh, max_iters: usize, tol: f64) -> Result<IcpResult> {
    if points.is_empty() || mesh.is_empty() {
        return Err(Error::InvalidArgument("ICP needs non-empty points and mesh".into()));
    }
    let mut transform = RigidTransform::identity();
    let (mut targets, mut rms) = closest_targets(points, &transform, mesh)?;
    if max_iters > 0 {
        let shift = RigidTransform::translation(centroid(mesh.vertices()) - centroid(points));
        let (shift_targets, shift_rms) = closest_targets(points, &shift, mesh)?;
        if shift_rms < rms {
            transform = shift;
            targets = shift_targets;
            rms = shift_rms;
        }
    }
    let mut history = vec![rms];
    for iteration in 0..max_iters {
        let next = kabsch_fit(points, &targets).map_err(|e| Error::Icp { iteration, source: Box::new(e) })?;
        let (next_targets, next_rms) = closest_targets(points, &next, mesh)?;
        if next_rms > rms {
            // round-off only; the Kabsch step cannot increase the objective
            break;
        }
        let improvement = rms - next_rms;
        transform = next;
        targets = next_targets;
        rms = next_rms;
        history.push(rms);
        if improvement < tol {
            break;
        }
    }
    Ok(IcpResult { transform, final_rms: rms, history })
}
