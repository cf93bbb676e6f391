//! Synthetic stand-in for a clinical imaging study.
//!
//! Shapes are star-shaped surfaces `r = R(u)` over the unit sphere: an
//! ellipsoid radius, a low-order spherical-harmonic modulation (the normal
//! population's variability) and an optional Gaussian bump (the pathology).
//! Correspondence `i` always sits along the same Fibonacci-sphere direction,
//! so correspondences are exact by construction.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::mesh::{marching_cubes, TriMesh};
use crate::shapespace::CorrespondenceSet;
use crate::volume::{Geometry, Volume};
use crate::{par_map, Error, Result, Vec3};

/// Real spherical harmonics of degree 2 and 3.
pub const HARMONIC_COUNT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub semi_axes: [f64; 3],
    /// Coefficients (mm) of the unit-normalized real harmonics, degree 2 first.
    pub harmonics: Vec<f64>,
    pub bump_amplitude: f64,
    pub bump_direction: Vec3,
    pub bump_width: f64,
    /// Mirror the shape through the x = 0 plane (left/right anatomy).
    pub flip_x: bool,
}

impl ShapeParams {
    pub fn sphere(r: f64) -> Self {
        Self::ellipsoid([r; 3])
    }

    pub fn ellipsoid(semi_axes: [f64; 3]) -> Self {
        Self {
            semi_axes,
            harmonics: vec![0.0; HARMONIC_COUNT],
            bump_amplitude: 0.0,
            bump_direction: Vec3::z(),
            bump_width: 0.4,
            flip_x: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.semi_axes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument(format!("semi-axes must be positive, got {:?}", self.semi_axes)));
        }
        if !(self.bump_width > 0.0) {
            return Err(Error::InvalidArgument("bump width must be positive".into()));
        }
        if !(self.bump_amplitude >= 0.0) {
            return Err(Error::InvalidArgument("bump amplitude must be non-negative".into()));
        }
        if self.harmonics.len() != HARMONIC_COUNT || self.harmonics.iter().any(|h| !h.is_finite()) {
            return Err(Error::InvalidArgument(format!("expected {HARMONIC_COUNT} finite harmonic coefficients")));
        }
        if (self.bump_direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("bump direction must be a unit vector".into()));
        }
        Ok(())
    }

    /// Surface radius along unit direction `u` (in the unflipped frame).
    pub fn radius(&self, u: &Vec3) -> f64 {
        let [a, b, c] = self.semi_axes;
        let mut r = 1.0 / ((u.x / a).powi(2) + (u.y / b).powi(2) + (u.z / c).powi(2)).sqrt();
        if self.harmonics.iter().any(|&h| h != 0.0) {
            let y = real_harmonics(u);
            r += self.harmonics.iter().zip(y.iter()).map(|(h, y)| h * y).sum::<f64>();
        }
        if self.bump_amplitude > 0.0 {
            let angle = u.dot(&self.bump_direction).clamp(-1.0, 1.0).acos();
            r += self.bump_amplitude * (-(angle / self.bump_width).powi(2)).exp();
        }
        r
    }

    fn canonical(&self, p: &Vec3) -> Vec3 {
        if self.flip_x {
            Vec3::new(-p.x, p.y, p.z)
        } else {
            *p
        }
    }

    /// `|p| − R(p/|p|)`: zero exactly on the surface, negative inside.
    fn radial_level(&self, p: &Vec3) -> f64 {
        let q = self.canonical(p);
        let n = q.norm();
        if n < 1e-12 {
            return -self.radius(&Vec3::z());
        }
        n - self.radius(&(q / n))
    }

    /// Approximate signed distance (mm, negative inside): the radial level
    /// divided by its gradient norm. Exact for spheres; first-order accurate
    /// near the surface otherwise.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let f = self.radial_level(p);
        let h = 1e-4 * (1.0 + p.norm());
        let mut grad = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            grad[a] = (self.radial_level(&(p + e)) - self.radial_level(&(p - e))) / (2.0 * h);
        }
        let g = grad.norm();
        if g > 1e-6 {
            f / g
        } else {
            f
        }
    }
}

/// Unit-normalized real spherical harmonics of degrees 2 and 3 at `u`.
pub fn real_harmonics(u: &Vec3) -> [f64; HARMONIC_COUNT] {
    let (x, y, z) = (u.x, u.y, u.z);
    let c2a = 0.5 * (15.0 / PI).sqrt();
    let c20 = 0.25 * (5.0 / PI).sqrt();
    let c22 = 0.25 * (15.0 / PI).sqrt();
    let c33 = 0.25 * (35.0 / (2.0 * PI)).sqrt();
    let c32a = 0.5 * (105.0 / PI).sqrt();
    let c31 = 0.25 * (21.0 / (2.0 * PI)).sqrt();
    let c30 = 0.25 * (7.0 / PI).sqrt();
    let c32b = 0.25 * (105.0 / PI).sqrt();
    [
        c2a * x * y,
        c2a * y * z,
        c20 * (3.0 * z * z - 1.0),
        c2a * x * z,
        c22 * (x * x - y * y),
        c33 * (3.0 * x * x - y * y) * y,
        c32a * x * y * z,
        c31 * y * (5.0 * z * z - 1.0),
        c30 * (5.0 * z * z * z - 3.0 * z),
        c31 * x * (5.0 * z * z - 1.0),
        c32b * (x * x - y * y) * z,
        c33 * (x * x - 3.0 * y * y) * x,
    ]
}

/// Appearance of one rendered scan.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderParams {
    pub foreground: f64,
    pub background: f64,
    pub edge_softness: f64,
    pub noise_sigma: f64,
    pub gain: f64,
    pub bias: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self { foreground: 180.0, background: 60.0, edge_softness: 1.0, noise_sigma: 0.0, gain: 1.0, bias: 0.0 }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.edge_softness > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("edge softness must be > 0 and noise sigma >= 0".into()));
        }
        Ok(())
    }
}

/// `P` quasi-uniform unit directions on the golden-angle spiral:
/// `z = 1 − (2i+1)/P`, `φ = i·π(3 − √5)`.
pub fn fibonacci_directions(p: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..p)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / p as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Surface points along the fixed Fibonacci directions.
pub fn make_shape(p: &ShapeParams, count: usize) -> Result<CorrespondenceSet> {
    p.validate()?;
    if count < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 correspondence points, got {count}")));
    }
    let pts = fibonacci_directions(count).iter().map(|u| p.canonical(&(u * p.radius(u)))).collect();
    CorrespondenceSet::new(pts)
}

pub fn shape_sdf_volume(p: &ShapeParams, geometry: Geometry) -> Result<Volume> {
    p.validate()?;
    Volume::from_fn(geometry, |x| p.signed_distance(&x) as f32)
}

fn smoothstep(t: f64) -> f64 {
    let x = ((t + 1.0) / 2.0).clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Intensity image: `bias + gain·(bg + (fg − bg)·smoothstep(−sdf/softness))`
/// plus i.i.d. Gaussian noise.
pub fn render_volume(p: &ShapeParams, r: &RenderParams, geometry: Geometry, rng: &mut impl Rng) -> Result<Volume> {
    p.validate()?;
    r.validate()?;
    let noise = Normal::new(0.0, r.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Volume::from_fn(geometry, |x| {
        let s = smoothstep(-p.signed_distance(&x) / r.edge_softness);
        let mut v = r.bias + r.gain * (r.background + (r.foreground - r.background) * s);
        if r.noise_sigma > 0.0 {
            v += noise.sample(rng);
        }
        v as f32
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    PdmTrain,
    HeldOut,
    UnseenNormal,
    UnseenPathological,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::PdmTrain, Split::HeldOut, Split::UnseenNormal, Split::UnseenPathological];

    pub fn label(self) -> &'static str {
        match self {
            Split::PdmTrain => "pdm-train",
            Split::HeldOut => "held-out",
            Split::UnseenNormal => "unseen-normal",
            Split::UnseenPathological => "unseen-pathological",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|x| x.label() == s).ok_or_else(|| Error::format("split", format!("unknown split '{s}'")))
    }

    pub fn is_unseen(self) -> bool {
        matches!(self, Split::UnseenNormal | Split::UnseenPathological)
    }
}

/// Population and scanner distribution for a synthetic study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub n_pdm_train: usize,
    pub n_held_out: usize,
    pub n_unseen_normal: usize,
    pub n_unseen_pathological: usize,
    pub points: usize,
    pub mean_semi_axes: [f64; 3],
    pub semi_axis_sigma: f64,
    /// Coefficient standard deviation for the degree-2 and degree-3 harmonics.
    pub harmonic_sigma: [f64; 2],
    pub bump_amplitude_range: [f64; 2],
    pub bump_direction: Vec3,
    pub bump_width: f64,
    pub flip_probability: f64,
    /// Grid the scans are rendered on before downsampling.
    pub render_geometry: Geometry,
    pub downsample: usize,
    /// Grid for the marching-cubes surface meshes.
    pub mesh_geometry: Geometry,
    pub foreground: f64,
    pub background: f64,
    pub edge_softness: f64,
    pub noise_sigma: f64,
    pub gain_range: [f64; 2],
    pub bias_sigma: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_pdm_train: 50,
            n_held_out: 10,
            n_unseen_normal: 10,
            n_unseen_pathological: 10,
            points: 256,
            mean_semi_axes: [16.0, 13.0, 11.0],
            semi_axis_sigma: 3.0,
            harmonic_sigma: [1.5, 0.6],
            bump_amplitude_range: [8.0, 11.0],
            bump_direction: Vec3::new(1.0, 0.6, 0.8).normalize(),
            bump_width: 0.6,
            flip_probability: 0.0,
            render_geometry: Geometry::centered_cube(64, 1.0).expect("valid"),
            downsample: 2,
            mesh_geometry: Geometry::centered_cube(64, 1.0).expect("valid"),
            foreground: 180.0,
            background: 60.0,
            edge_softness: 1.0,
            noise_sigma: 6.0,
            gain_range: [0.8, 1.25],
            bias_sigma: 15.0,
        }
    }
}

impl StudyConfig {
    pub fn split_sizes(&self) -> [(Split, usize); 4] {
        [
            (Split::PdmTrain, self.n_pdm_train),
            (Split::HeldOut, self.n_held_out),
            (Split::UnseenNormal, self.n_unseen_normal),
            (Split::UnseenPathological, self.n_unseen_pathological),
        ]
    }

    pub fn total(&self) -> usize {
        self.split_sizes().iter().map(|(_, n)| n).sum()
    }
}

/// Everything known about one synthetic subject.
#[derive(Debug, Clone)]
pub struct StudySample {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub stream: u64,
    pub shape_params: ShapeParams,
    pub render_params: RenderParams,
    /// Binary downstream outcome (e.g. recurrence), drawn from a logistic
    /// model of the shape.
    pub outcome: f64,
    pub shape: CorrespondenceSet,
    pub volume: Volume,
    pub mesh: TriMesh,
}

/// Per-sample stream split off a master seed.
pub fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_params(cfg: &StudyConfig, pathological: bool, rng: &mut ChaCha8Rng) -> (ShapeParams, RenderParams, f64) {
    let mut semi_axes = cfg.mean_semi_axes;
    for a in semi_axes.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *a = (*a + cfg.semi_axis_sigma * g).max(0.25 * *a);
    }
    let harmonics: Vec<f64> = (0..HARMONIC_COUNT)
        .map(|k| {
            let g: f64 = rng.sample(StandardNormal);
            g * if k < 5 { cfg.harmonic_sigma[0] } else { cfg.harmonic_sigma[1] }
        })
        .collect();
    let bump_amplitude =
        if pathological { rng.random_range(cfg.bump_amplitude_range[0]..=cfg.bump_amplitude_range[1]) } else { 0.0 };
    let flip_x = cfg.flip_probability > 0.0 && rng.random_bool(cfg.flip_probability.min(1.0));
    let shape = ShapeParams {
        semi_axes,
        harmonics,
        bump_amplitude,
        bump_direction: cfg.bump_direction.normalize(),
        bump_width: cfg.bump_width,
        flip_x,
    };
    let render = RenderParams {
        foreground: cfg.foreground,
        background: cfg.background,
        edge_softness: cfg.edge_softness,
        noise_sigma: cfg.noise_sigma,
        gain: rng.random_range(cfg.gain_range[0]..=cfg.gain_range[1]),
        bias: cfg.bias_sigma * rng.sample::<f64, _>(StandardNormal),
    };
    // larger first semi-axis and positive y-z harmonic raise the odds
    let score = (semi_axes[0] - cfg.mean_semi_axes[0]) / cfg.semi_axis_sigma.max(1e-9)
        + shape.harmonics[1] / cfg.harmonic_sigma[0].max(1e-9);
    let prob = 1.0 / (1.0 + (-1.5 * score).exp());
    let outcome = if rng.random::<f64>() < prob { 1.0 } else { 0.0 };
    (shape, render, outcome)
}

/// Render one subject: correspondences, the downsampled and
/// intensity-normalized scan, and the reference surface mesh.
pub fn realize_sample(
    cfg: &StudyConfig,
    shape_params: &ShapeParams,
    render_params: &RenderParams,
    rng: &mut ChaCha8Rng,
) -> Result<(CorrespondenceSet, Volume, TriMesh)> {
    let shape = make_shape(shape_params, cfg.points)?;
    let raw = render_volume(shape_params, render_params, cfg.render_geometry, rng)?;
    let volume = raw.downsample(cfg.downsample)?.normalize_intensity()?;
    let mesh = marching_cubes(&shape_sdf_volume(shape_params, cfg.mesh_geometry)?, 0.0)?;
    Ok((shape, volume, mesh))
}

/// Generate all four splits. Sample `i` uses stream `i` of the master seed,
/// so any subset can be regenerated independently.
pub fn generate_study(cfg: &StudyConfig, seed: u64) -> Result<Vec<StudySample>> {
    let mut plan = Vec::new();
    for (split, n) in cfg.split_sizes() {
        for _ in 0..n {
            plan.push(split);
        }
    }
    let results = par_map(plan.len(), |i| -> Result<StudySample> {
        let split = plan[i];
        let stream = i as u64;
        let mut rng = sample_rng(seed, stream);
        let (shape_params, render_params, outcome) = draw_params(cfg, split == Split::UnseenPathological, &mut rng);
        let (shape, volume, mesh) = realize_sample(cfg, &shape_params, &render_params, &mut rng)?;
        Ok(StudySample { id: format!("s{i:04}"), split, seed, stream, shape_params, render_params, outcome, shape, volume, mesh })
    });
    results.into_iter().collect()
}

/// One line of the study manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub stream: u64,
    pub shape_params: ShapeParams,
    pub render_params: RenderParams,
    pub outcome: f64,
}

impl From<&StudySample> for ManifestEntry {
    fn from(s: &StudySample) -> Self {
        Self {
            id: s.id.clone(),
            split: s.split,
            seed: s.seed,
            stream: s.stream,
            shape_params: s.shape_params.clone(),
            render_params: s.render_params.clone(),
            outcome: s.outcome,
        }
    }
}

const MANIFEST_HEADER: &str = "id,split,seed,stream,a,b,c,bump_amplitude,bump_dx,bump_dy,bump_dz,bump_width,flip_x,harmonics,foreground,background,edge_softness,noise_sigma,gain,bias,outcome";

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for e in entries {
        let p = &e.shape_params;
        let r = &e.render_params;
        let h: Vec<String> = p.harmonics.iter().map(|v| v.to_string()).collect();
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            e.id,
            e.split.label(),
            e.seed,
            e.stream,
            p.semi_axes[0],
            p.semi_axes[1],
            p.semi_axes[2],
            p.bump_amplitude,
            p.bump_direction.x,
            p.bump_direction.y,
            p.bump_direction.z,
            p.bump_width,
            p.flip_x as u8,
            h.join(";"),
            r.foreground,
            r.background,
            r.edge_softness,
            r.noise_sigma,
            r.gain,
            r.bias,
            e.outcome
        )
        .unwrap();
    }
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format("study manifest", format!("line {}: {msg}", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 21 {
            return Err(bad(format!("expected 21 fields, got {}", f.len())));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| bad(format!("field {i}: {e}")));
        let int = |i: usize| f[i].parse::<u64>().map_err(|e| bad(format!("field {i}: {e}")));
        let harmonics = f[13]
            .split(';')
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("harmonics: {e}")))?;
        out.push(ManifestEntry {
            id: f[0].to_string(),
            split: Split::parse(f[1])?,
            seed: int(2)?,
            stream: int(3)?,
            shape_params: ShapeParams {
                semi_axes: [num(4)?, num(5)?, num(6)?],
                harmonics,
                bump_amplitude: num(7)?,
                bump_direction: Vec3::new(num(8)?, num(9)?, num(10)?),
                bump_width: num(11)?,
                flip_x: int(12)? != 0,
            },
            render_params: RenderParams {
                foreground: num(14)?,
                background: num(15)?,
                edge_softness: num(16)?,
                noise_sigma: num(17)?,
                gain: num(18)?,
                bias: num(19)?,
            },
            outcome: num(20)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> StudyConfig {
        StudyConfig {
            n_pdm_train: 3,
            n_held_out: 1,
            n_unseen_normal: 1,
            n_unseen_pathological: 2,
            points: 64,
            render_geometry: Geometry::centered_cube(32, 2.0).unwrap(),
            downsample: 2,
            mesh_geometry: Geometry::centered_cube(32, 2.0).unwrap(),
            ..StudyConfig::default()
        }
    }

    #[test]
    fn sphere_points_at_radius() {
        let s = make_shape(&ShapeParams::sphere(7.5), 100).unwrap();
        for p in &s.points {
            assert!((p.norm() - 7.5).abs() < 1e-9);
        }
    }

    #[test]
    fn make_shape_is_deterministic_and_validates() {
        let mut p = ShapeParams::ellipsoid([10.0, 8.0, 6.0]);
        p.harmonics[3] = 0.7;
        assert_eq!(make_shape(&p, 50).unwrap(), make_shape(&p, 50).unwrap());
        assert!(make_shape(&p, 3).is_err());
        p.semi_axes[1] = -1.0;
        assert!(make_shape(&p, 50).is_err());
    }

    #[test]
    fn fibonacci_matches_spherical_coordinate_form() {
        // independent form: polar angle from acos, azimuth reduced mod 2π
        let p = 37;
        let dirs = fibonacci_directions(p);
        let golden_deg = 137.50776405003785_f64;
        for (i, u) in dirs.iter().enumerate() {
            let theta = (1.0 - (2 * i + 1) as f64 / p as f64).acos();
            let phi = (golden_deg * i as f64).rem_euclid(360.0).to_radians();
            let v = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            assert!((u - v).norm() < 1e-9, "direction {i}");
        }
    }

    #[test]
    fn harmonics_are_orthonormal() {
        // quadrature on a dense Fibonacci set
        let n = 20000;
        let dirs = fibonacci_directions(n);
        let w = 4.0 * PI / n as f64;
        let mut gram = [[0.0; HARMONIC_COUNT]; HARMONIC_COUNT];
        for u in &dirs {
            let y = real_harmonics(u);
            for a in 0..HARMONIC_COUNT {
                for b in 0..HARMONIC_COUNT {
                    gram[a][b] += w * y[a] * y[b];
                }
            }
        }
        for a in 0..HARMONIC_COUNT {
            for b in 0..HARMONIC_COUNT {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a][b] - want).abs() < 1e-3, "({a},{b}) = {}", gram[a][b]);
            }
        }
    }

    #[test]
    fn sphere_sdf_values() {
        let g = Geometry::centered_cube(21, 1.0).unwrap();
        let v = shape_sdf_volume(&ShapeParams::sphere(6.0), g).unwrap();
        assert!((v.get(10, 10, 10) + 6.0).abs() < 1.0);
        // voxel (16,10,10) sits at x = 6 on the surface
        assert!((v.get(16, 10, 10).abs() as f64) < g.voxel_diagonal());
    }

    #[test]
    fn sdf_gradient_is_unit_near_surface() {
        let mut p = ShapeParams::ellipsoid([14.0, 10.0, 8.0]);
        p.harmonics[2] = 0.8;
        p.harmonics[7] = 0.4;
        let g = Geometry::centered_cube(40, 1.0).unwrap();
        let v = shape_sdf_volume(&p, g).unwrap();
        let mut mags = Vec::new();
        for k in 1..39 {
            for j in 1..39 {
                for i in 1..39 {
                    if v.get(i, j, k).abs() > 1.5 {
                        continue;
                    }
                    let gx = (v.get(i + 1, j, k) - v.get(i - 1, j, k)) as f64 / 2.0;
                    let gy = (v.get(i, j + 1, k) - v.get(i, j - 1, k)) as f64 / 2.0;
                    let gz = (v.get(i, j, k + 1) - v.get(i, j, k - 1)) as f64 / 2.0;
                    mags.push((gx * gx + gy * gy + gz * gz).sqrt());
                }
            }
        }
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = mags[mags.len() / 2];
        assert!((median - 1.0).abs() < 0.1, "median |∇| = {median}");
    }

    #[test]
    fn mesh_hugs_correspondences() {
        let mut p = ShapeParams::ellipsoid([12.0, 9.0, 7.0]);
        p.bump_amplitude = 3.0;
        p.harmonics[0] = 0.6;
        let g = Geometry::centered_cube(36, 1.0).unwrap();
        let mesh = marching_cubes(&shape_sdf_volume(&p, g).unwrap(), 0.0).unwrap();
        let half_diag = 0.5 * g.voxel_diagonal();
        for q in make_shape(&p, 128).unwrap().points {
            assert!(mesh.closest_point(&q).unwrap().distance < half_diag);
        }
    }

    #[test]
    fn render_saturates_exactly() {
        let g = Geometry::centered_cube(16, 2.0).unwrap();
        let r = RenderParams { gain: 1.1, bias: -4.0, ..RenderParams::default() };
        let mut rng = sample_rng(1, 0);
        let v = render_volume(&ShapeParams::sphere(8.0), &r, g, &mut rng).unwrap();
        assert_eq!(v.get(0, 0, 0), (-4.0 + 1.1 * 60.0) as f32);
        assert_eq!(v.get(8, 8, 8), (-4.0 + 1.1 * 180.0) as f32);
    }

    #[test]
    fn render_is_seed_deterministic() {
        let g = Geometry::centered_cube(12, 2.0).unwrap();
        let r = RenderParams { noise_sigma: 5.0, ..RenderParams::default() };
        let p = ShapeParams::sphere(6.0);
        let a = render_volume(&p, &r, g, &mut sample_rng(9, 3)).unwrap();
        let b = render_volume(&p, &r, g, &mut sample_rng(9, 3)).unwrap();
        let c = render_volume(&p, &r, g, &mut sample_rng(9, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn flip_mirrors_points() {
        let mut p = ShapeParams::ellipsoid([10.0, 8.0, 6.0]);
        p.bump_amplitude = 2.0;
        let a = make_shape(&p, 40).unwrap();
        p.flip_x = true;
        let b = make_shape(&p, 40).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert_eq!(Vec3::new(-x.x, x.y, x.z), *y);
        }
    }

    #[test]
    fn study_splits_and_manifest() {
        let cfg = small_cfg();
        let study = generate_study(&cfg, 5).unwrap();
        assert_eq!(study.len(), 7);
        for (split, n) in cfg.split_sizes() {
            assert_eq!(study.iter().filter(|s| s.split == split).count(), n);
        }
        for s in &study {
            if s.split == Split::UnseenPathological {
                assert!(s.shape_params.bump_amplitude > 0.0);
            } else {
                assert_eq!(s.shape_params.bump_amplitude, 0.0);
            }
            assert_eq!(s.volume.dims(), [16, 16, 16]);
            let (lo, hi) = s.volume.min_max();
            assert_eq!((lo, hi), (0.0, 255.0));
            assert!(!s.mesh.is_empty());
        }
        let again = generate_study(&cfg, 5).unwrap();
        assert_eq!(study[3].volume, again[3].volume);

        let dir = tempfile::tempdir().unwrap();
        let entries: Vec<ManifestEntry> = study.iter().map(ManifestEntry::from).collect();
        write_manifest(&entries, dir.path().join("manifest")).unwrap();
        assert_eq!(read_manifest(dir.path().join("manifest")).unwrap(), entries);
    }

    #[test]
    fn no_pathological_means_no_bumps() {
        let cfg = StudyConfig { n_unseen_pathological: 0, ..small_cfg() };
        let study = generate_study(&cfg, 2).unwrap();
        assert!(study.iter().all(|s| s.shape_params.bump_amplitude == 0.0));
    }
}
