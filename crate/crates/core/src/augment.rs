//! Shape-space data augmentation.
//!
//! Draw loadings from the PCA Gaussian, reject draws far from every training
//! shape, then make an image for each accepted draw by thin-plate-spline
//! warping the nearest training image onto the drawn correspondences.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3, Matrix3x4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::shapespace::{CorrespondenceSet, Loadings, ShapeSpace};
use crate::volume::{Geometry, Volume};
use crate::{par_map, Error, Result, Vec3};

/// 3D thin-plate kernel.
#[inline]
pub fn tps_kernel(r: f64) -> f64 {
    r
}

/// `f(x) = A·[x; 1] + Σ wᵢ U(|x − cᵢ|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsWarp {
    pub control_points: Vec<Vec3>,
    /// Linear part in the first three columns, translation in the last.
    pub affine: Matrix3x4<f64>,
    pub weights: Vec<Vec3>,
}

impl TpsWarp {
    pub fn identity() -> Self {
        let mut affine = Matrix3x4::zeros();
        affine.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        Self { control_points: Vec::new(), affine, weights: Vec::new() }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        let mut out = self.affine.fixed_view::<3, 3>(0, 0) * x + self.affine.column(3);
        for (c, w) in self.control_points.iter().zip(&self.weights) {
            out += w * tps_kernel((x - c).norm());
        }
        out
    }

    /// Largest violation of `Σ wᵢ = 0` and `Σ wᵢ cᵢᵀ = 0`.
    pub fn side_condition_residual(&self) -> f64 {
        let mut sum = Vec3::zeros();
        let mut moment = Matrix3::zeros();
        for (c, w) in self.control_points.iter().zip(&self.weights) {
            sum += w;
            moment += w * c.transpose();
        }
        sum.amax().max(moment.amax())
    }
}

fn bounding_diagonal(points: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Solve `[[K + λI, Q], [Qᵀ, 0]]·[w; a] = [to; 0]` with `Q = [1 x y z]`.
pub fn fit_tps(from: &CorrespondenceSet, to: &CorrespondenceSet, lambda: f64) -> Result<TpsWarp> {
    let n = from.len();
    if n != to.len() {
        return Err(Error::DimensionMismatch(format!("{n} source sites vs {} targets", to.len())));
    }
    if n < 4 {
        return Err(Error::InvalidArgument(format!("a thin-plate spline needs at least 4 sites, got {n}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("regularization must be finite and >= 0, got {lambda}")));
    }
    let pts = &from.points;
    let diag = bounding_diagonal(pts);
    if !(diag > 0.0) {
        return Err(Error::Singular("all thin-plate sites coincide".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if (pts[i] - pts[j]).norm() <= 1e-9 * diag {
                return Err(Error::Singular(format!("thin-plate sites {i} and {j} coincide")));
            }
        }
    }
    let centroid = pts.iter().sum::<Vec3>() / n as f64;
    let scatter = pts.iter().fold(Matrix3::zeros(), |acc, p| acc + (p - centroid) * (p - centroid).transpose());
    let ev = SymmetricEigen::new(scatter).eigenvalues;
    if ev.min() <= 1e-10 * ev.max() {
        return Err(Error::Singular("thin-plate sites are coplanar".into()));
    }

    let size = n + 4;
    let mut l = DMatrix::<f64>::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] = tps_kernel((pts[i] - pts[j]).norm());
        }
        l[(i, i)] += lambda;
        let q = [1.0, pts[i].x, pts[i].y, pts[i].z];
        for (k, v) in q.into_iter().enumerate() {
            l[(i, n + k)] = v;
            l[(n + k, i)] = v;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(size, 3);
    for (i, p) in to.points.iter().enumerate() {
        for a in 0..3 {
            rhs[(i, a)] = p[a];
        }
    }
    let sol = l
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("thin-plate system is singular".into()))?;

    let weights = (0..n).map(|i| Vec3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)])).collect();
    let mut affine = Matrix3x4::zeros();
    for a in 0..3 {
        affine[(a, 3)] = sol[(n, a)];
        for b in 0..3 {
            affine[(a, b)] = sol[(n + 1 + b, a)];
        }
    }
    Ok(TpsWarp { control_points: pts.clone(), affine, weights })
}

/// Backward warp: `out(x) = source(warp(x))` at every voxel center of
/// `out_geometry`.
pub fn warp_volume(warp: &TpsWarp, source: &Volume, out_geometry: Geometry) -> Result<Volume> {
    Volume::from_fn(out_geometry, |x| source.sample_finite(&warp.apply(&x)))
}

/// `cᵢ = sqrt(λᵢ)·gᵢ` with standard normal `gᵢ`.
pub fn sample_loadings(ss: &ShapeSpace, rng: &mut impl Rng) -> Loadings {
    Loadings(
        ss.eigenvalues()
            .iter()
            .map(|&l| {
                let g: f64 = rng.sample(StandardNormal);
                l.max(0.0).sqrt() * g
            })
            .collect(),
    )
}

/// Index of the training shape closest to `reconstruct(s)` and its distance;
/// ties go to the lowest index.
pub fn nearest_example(ss: &ShapeSpace, training: &[CorrespondenceSet], s: &Loadings) -> Result<(usize, f64)> {
    if training.is_empty() {
        return Err(Error::InvalidArgument("no training shapes".into()));
    }
    let shape = ss.reconstruct(s)?;
    nearest_shape(&shape, training)
}

fn nearest_shape(shape: &CorrespondenceSet, training: &[CorrespondenceSet]) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (i, t) in training.iter().enumerate() {
        if t.len() != shape.len() {
            return Err(Error::DimensionMismatch(format!("training shape {i} has {} points, expected {}", t.len(), shape.len())));
        }
        let d = shape.distance(t);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// 1.5 × the mean nearest-neighbour distance among the training shapes.
pub fn default_threshold(training: &[CorrespondenceSet]) -> Result<f64> {
    if training.len() < 2 {
        return Err(Error::InvalidArgument("the default threshold needs at least two training shapes".into()));
    }
    let mut total = 0.0;
    for (i, a) in training.iter().enumerate() {
        let nn = training.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| a.distance(b)).fold(f64::INFINITY, f64::min);
        total += nn;
    }
    Ok(1.5 * total / training.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub n_samples: usize,
    /// Accept a draw only if its nearest training shape is within this
    /// distance (mm, 3P-space norm).
    pub reject_threshold: f64,
    pub seed: u64,
    pub tps_regularization: f64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        // 0 is let through so a misconfigured threshold surfaces as a budget error
        if !(self.reject_threshold >= 0.0) {
            return Err(Error::InvalidArgument(format!("reject threshold must be >= 0, got {}", self.reject_threshold)));
        }
        if !(self.tps_regularization >= 0.0) {
            return Err(Error::InvalidArgument("tps regularization must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub volume: Volume,
    pub loadings: Loadings,
    pub source_index: usize,
    pub distance: f64,
}

/// Accepted draws only, before any image is made.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub loadings: Loadings,
    pub source_index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawStats {
    pub attempts: usize,
    pub accepted: usize,
}

impl DrawStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

/// Run the add-reject loop on a single seeded stream. Rejected draws are
/// replaced until `n_samples` are accepted; once `10·n_samples` attempts
/// have been made an acceptance rate under 1% is an error.
pub fn draw_accepted(ss: &ShapeSpace, training: &[CorrespondenceSet], cfg: &AugmentConfig) -> Result<(Vec<Draw>, DrawStats)> {
    cfg.validate()?;
    if training.is_empty() {
        return Err(Error::InvalidArgument("no training shapes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draws = Vec::with_capacity(cfg.n_samples);
    let mut attempts = 0usize;
    let budget = 10 * cfg.n_samples;
    while draws.len() < cfg.n_samples {
        let loadings = sample_loadings(ss, &mut rng);
        attempts += 1;
        let (source_index, distance) = nearest_example(ss, training, &loadings)?;
        if distance <= cfg.reject_threshold {
            draws.push(Draw { loadings, source_index, distance });
        }
        if attempts >= budget {
            let rate = draws.len() as f64 / attempts as f64;
            if rate < 0.01 {
                return Err(Error::AcceptanceTooLow { attempts, rate });
            }
        }
    }
    let accepted = draws.len();
    Ok((draws, DrawStats { attempts, accepted }))
}

/// Warp the nearest training image onto each accepted draw. Output order
/// follows draw order.
pub fn generate_augmented_set(
    ss: &ShapeSpace,
    training: &[CorrespondenceSet],
    images: &[Volume],
    cfg: &AugmentConfig,
) -> Result<(Vec<AugmentedSample>, DrawStats)> {
    if training.len() != images.len() {
        return Err(Error::DimensionMismatch(format!("{} training shapes but {} images", training.len(), images.len())));
    }
    let (draws, stats) = draw_accepted(ss, training, cfg)?;
    let samples = par_map(draws.len(), |i| -> Result<AugmentedSample> {
        let d = &draws[i];
        let new_shape = ss.reconstruct(&d.loadings)?;
        let warp = fit_tps(&new_shape, &training[d.source_index], cfg.tps_regularization)?;
        let source = &images[d.source_index];
        let volume = warp_volume(&warp, source, *source.geometry())?;
        Ok(AugmentedSample { volume, loadings: d.loadings.clone(), source_index: d.source_index, distance: d.distance })
    });
    Ok((samples.into_iter().collect::<Result<_>>()?, stats))
}

/// One row of the augmented-set manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEntry {
    pub id: String,
    pub svol: PathBuf,
    pub source_index: usize,
    pub distance: f64,
    pub loadings: Loadings,
}

/// Write `volumes/aug_NNNNN.svol` plus `manifest.csv` under `dir`.
pub fn write_augmented_set(dir: impl AsRef<Path>, samples: &[AugmentedSample]) -> Result<Vec<AugmentedEntry>> {
    let dir = dir.as_ref();
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let id = format!("aug_{i:05}");
        let rel = PathBuf::from("volumes").join(format!("{id}.svol"));
        s.volume.write_svol(dir.join(&rel))?;
        entries.push(AugmentedEntry {
            id,
            svol: rel,
            source_index: s.source_index,
            distance: s.distance,
            loadings: s.loadings.clone(),
        });
    }
    write_augmented_manifest(dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}

pub fn write_augmented_manifest(path: impl AsRef<Path>, entries: &[AugmentedEntry]) -> Result<()> {
    let m = entries.first().map_or(0, |e| e.loadings.len());
    let mut s = String::from("id,svol,source_index,distance");
    for k in 0..m {
        write!(s, ",l{k}").unwrap();
    }
    s.push('\n');
    for e in entries {
        write!(s, "{},{},{},{}", e.id, e.svol.display(), e.source_index, e.distance).unwrap();
        for c in e.loadings.as_slice() {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
    }
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_augmented_manifest(path: impl AsRef<Path>) -> Result<Vec<AugmentedEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format("augmented manifest", format!("line {}: {msg}", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            return Err(bad("too few fields".into()));
        }
        let loadings = f[4..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        out.push(AugmentedEntry {
            id: f[0].to_string(),
            svol: PathBuf::from(f[1]),
            source_index: f[2].parse().map_err(|e| bad(format!("source index: {e}")))?,
            distance: f[3].parse().map_err(|e| bad(format!("distance: {e}")))?,
            loadings: Loadings(loadings),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::marching_cubes;
    use crate::shapespace::build_pca;
    use crate::synthdata::{make_shape, sample_rng, shape_sdf_volume, ShapeParams};
    use rand_distr::{Distribution, Uniform};

    fn random_sites(n: usize, seed: u64) -> CorrespondenceSet {
        let mut rng = sample_rng(seed, 0);
        let u = Uniform::new(-10.0, 10.0).unwrap();
        CorrespondenceSet::new((0..n).map(|_| Vec3::new(u.sample(&mut rng), u.sample(&mut rng), u.sample(&mut rng))).collect())
            .unwrap()
    }

    fn training_set(n: usize, seed: u64) -> Vec<CorrespondenceSet> {
        let mut rng = sample_rng(seed, 1);
        (0..n)
            .map(|_| {
                let mut p = ShapeParams::ellipsoid([
                    10.0 + rng.random_range(-1.5..1.5),
                    8.0 + rng.random_range(-1.5..1.5),
                    7.0 + rng.random_range(-1.0..1.0),
                ]);
                p.harmonics[2] = rng.random_range(-0.8..0.8);
                p.harmonics[6] = rng.random_range(-0.4..0.4);
                make_shape(&p, 64).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_and_translation_fits() {
        let from = random_sites(20, 3);
        let w = fit_tps(&from, &from, 0.0).unwrap();
        assert!((w.affine - TpsWarp::identity().affine).amax() < 1e-9);
        assert!(w.weights.iter().all(|v| v.amax() < 1e-9));

        let t = Vec3::new(1.5, -2.0, 0.25);
        let to = CorrespondenceSet::new(from.points.iter().map(|p| p + t).collect()).unwrap();
        let w = fit_tps(&from, &to, 0.0).unwrap();
        assert!(w.weights.iter().all(|v| v.amax() < 1e-9));
        assert!((w.affine.column(3) - t).amax() < 1e-9);
    }

    #[test]
    fn exact_interpolation_and_side_conditions() {
        let from = random_sites(40, 7);
        let mut rng = sample_rng(8, 0);
        let to = CorrespondenceSet::new(
            from.points
                .iter()
                .map(|p| p + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap();
        let w = fit_tps(&from, &to, 0.0).unwrap();
        assert!(w.side_condition_residual() < 1e-8);
        let diag = bounding_diagonal(&from.points);
        for (p, q) in from.points.iter().zip(&to.points) {
            assert!((w.apply(p) - q).norm() < 1e-6 * diag);
        }
        // smoothing no longer interpolates but keeps the side conditions
        let ws = fit_tps(&from, &to, 5.0).unwrap();
        assert!(ws.side_condition_residual() < 1e-8);
        assert!(from.points.iter().zip(&to.points).any(|(p, q)| (ws.apply(p) - q).norm() > 1e-3));
    }

    #[test]
    fn singular_sites_rejected() {
        let planar = CorrespondenceSet::new((0..10).map(|i| Vec3::new(i as f64, (i * i) as f64 % 7.0, 0.0)).collect()).unwrap();
        assert!(matches!(fit_tps(&planar, &planar, 0.0), Err(Error::Singular(_))));
        let mut dup = random_sites(10, 1);
        dup.points[5] = dup.points[2];
        assert!(matches!(fit_tps(&dup, &dup, 0.0), Err(Error::Singular(_))));
        let short = random_sites(3, 1);
        assert!(fit_tps(&short, &short, 0.0).is_err());
    }

    #[test]
    fn identity_and_voxel_shift_warps() {
        let g = Geometry::centered_cube(12, 2.0).unwrap();
        let src = Volume::from_fn(g, |x| (x.x * 3.0 + x.y * x.z - 0.5 * x.z) as f32).unwrap();
        assert_eq!(warp_volume(&TpsWarp::identity(), &src, g).unwrap(), src);

        let from = random_sites(12, 4);
        let w = fit_tps(&from, &from, 0.0).unwrap();
        assert_eq!(warp_volume(&w, &src, g).unwrap(), src);

        let shift = Vec3::new(2.0, 0.0, 0.0);
        let to = CorrespondenceSet::new(from.points.iter().map(|p| p + shift).collect()).unwrap();
        let w = fit_tps(&from, &to, 0.0).unwrap();
        let out = warp_volume(&w, &src, g).unwrap();
        for k in 0..12 {
            for j in 0..12 {
                for i in 0..11 {
                    assert_eq!(out.get(i, j, k), src.get(i + 1, j, k));
                }
            }
        }
    }

    #[test]
    fn warped_image_surface_follows_new_shape() {
        let g = Geometry::centered_cube(32, 1.0).unwrap();
        let mut pn = ShapeParams::ellipsoid([10.0, 8.0, 7.0]);
        pn.harmonics[1] = 0.5;
        let mut ps = ShapeParams::ellipsoid([11.5, 7.0, 7.5]);
        ps.harmonics[4] = -0.7;
        let cn = make_shape(&pn, 128).unwrap();
        let cs = make_shape(&ps, 128).unwrap();
        let src = shape_sdf_volume(&pn, g).unwrap();
        let warped = warp_volume(&fit_tps(&cs, &cn, 0.0).unwrap(), &src, g).unwrap();
        let mesh = marching_cubes(&warped, 0.0).unwrap();
        for p in &cs.points {
            assert!(mesh.closest_point(p).unwrap().distance < g.spacing[0], "{p}");
        }
    }

    #[test]
    fn degenerate_space_gives_zero_loadings() {
        let shape = training_set(1, 2).remove(0);
        let ss = build_pca(&[shape.clone(), shape.clone(), shape], 0.95, 5).unwrap();
        let mut rng = sample_rng(1, 0);
        for _ in 0..10 {
            assert!(sample_loadings(&ss, &mut rng).as_slice().iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn loading_moments() {
        let ss = build_pca(&training_set(12, 5), 0.999, 4).unwrap();
        let m = ss.m();
        assert!(m >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let draws: Vec<Loadings> = (0..n).map(|_| sample_loadings(&ss, &mut rng)).collect();
        let mean = |a: usize| draws.iter().map(|d| d.0[a]).sum::<f64>() / n as f64;
        let means: Vec<f64> = (0..m).map(mean).collect();
        let cov =
            |a: usize, b: usize| draws.iter().map(|d| (d.0[a] - means[a]) * (d.0[b] - means[b])).sum::<f64>() / (n - 1) as f64;
        for a in 0..m {
            let lam = ss.eigenvalues()[a];
            assert!((cov(a, a) - lam).abs() < 0.1 * lam, "mode {a}");
            for b in a + 1..m {
                let se = (lam * ss.eigenvalues()[b] / n as f64).sqrt();
                assert!(cov(a, b).abs() < 3.0 * se, "modes {a},{b}");
            }
        }
        let mut again = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(sample_loadings(&ss, &mut again), draws[0]);
    }

    #[test]
    fn nearest_example_rules() {
        let train = training_set(8, 9);
        let ss = build_pca(&train, 1.0, 20).unwrap();
        let k = 5;
        assert_eq!(nearest_example(&ss, &train, &ss.project(&train[k]).unwrap()).unwrap().0, k);

        let dup = vec![train[3].clone(), train[1].clone(), train[3].clone()];
        assert_eq!(nearest_example(&ss, &dup, &ss.project(&train[3]).unwrap()).unwrap().0, 0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = sample_loadings(&ss, &mut rng);
            let shape = ss.reconstruct(&s).unwrap();
            let dists: Vec<f64> = train.iter().map(|t| shape.distance(t)).collect();
            let scan = (0..dists.len()).fold(0, |b, i| if dists[i] < dists[b] { i } else { b });
            assert_eq!(nearest_example(&ss, &train, &s).unwrap().0, scan);
        }
    }

    fn images_for(train: &[CorrespondenceSet]) -> Vec<Volume> {
        let g = Geometry::centered_cube(8, 4.0).unwrap();
        (0..train.len()).map(|i| Volume::from_fn(g, |x| (x.x + i as f64) as f32).unwrap()).collect()
    }

    #[test]
    fn infinite_threshold_accepts_everything() {
        let train = training_set(6, 1);
        let ss = build_pca(&train, 0.99, 5).unwrap();
        let cfg = AugmentConfig { n_samples: 15, reject_threshold: f64::INFINITY, seed: 2, tps_regularization: 0.0 };
        let (out, stats) = generate_augmented_set(&ss, &train, &images_for(&train), &cfg).unwrap();
        assert_eq!(stats.attempts, 15);
        assert_eq!(out.len(), 15);
    }

    #[test]
    fn zero_threshold_exhausts_budget() {
        let train = training_set(6, 1);
        let ss = build_pca(&train, 0.99, 5).unwrap();
        let cfg = AugmentConfig { n_samples: 5, reject_threshold: 0.0, seed: 2, tps_regularization: 0.0 };
        match generate_augmented_set(&ss, &train, &images_for(&train), &cfg) {
            Err(Error::AcceptanceTooLow { attempts, .. }) => assert_eq!(attempts, 50),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn accepted_set_audit_and_reproducibility() {
        let train = training_set(10, 4);
        let ss = build_pca(&train, 0.99, 6).unwrap();
        let tau = default_threshold(&train).unwrap();
        let cfg = AugmentConfig { n_samples: 12, reject_threshold: tau, seed: 7, tps_regularization: 0.0 };
        let images = images_for(&train);
        let (out, stats) = generate_augmented_set(&ss, &train, &images, &cfg).unwrap();
        assert!(stats.attempts >= 12);
        let (draws, _) = draw_accepted(&ss, &train, &cfg).unwrap();
        for (s, d) in out.iter().zip(&draws) {
            assert_eq!(s.loadings, d.loadings);
            let shape = ss.reconstruct(&s.loadings).unwrap();
            let min = train.iter().map(|t| shape.distance(t)).fold(f64::INFINITY, f64::min);
            assert!(min <= tau);
            assert_eq!(min, s.distance);
        }
        let (again, _) = generate_augmented_set(&ss, &train, &images, &cfg).unwrap();
        assert_eq!(out, again);

        let dir = tempfile::tempdir().unwrap();
        let entries = write_augmented_set(dir.path(), &out).unwrap();
        let read = read_augmented_manifest(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(read, entries);
        assert_eq!(Volume::read_svol(dir.path().join(&read[3].svol)).unwrap(), out[3].volume);
    }
}
