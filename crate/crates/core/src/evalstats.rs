//! Evaluation: per-point error reports, Mahalanobis histograms, per-vertex
//! error fields, paired t-tests and TOST equivalence.

use std::fmt::Write as _;
use std::path::Path;

use crate::align::icp_to_mesh;
use crate::mesh::TriMesh;
use crate::neuralnet::{train_mlp, MlpConfig};
use crate::shapespace::{CorrespondenceSet, Loadings, ShapeSpace};
use crate::{Error, Result};

/// ICP settings used before measuring projection errors.
pub const ICP_MAX_ITERS: usize = 50;
pub const ICP_TOL: f64 = 1e-10;

/// Default TOST equivalence bound on prediction differences.
pub const DEFAULT_TOST_BOUND: f64 = 0.1;

/// Per-point Euclidean distances between matched correspondences.
pub fn correspondence_error(pred: &CorrespondenceSet, truth: &CorrespondenceSet) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} predicted points vs {} true points", pred.len(), truth.len())));
    }
    Ok(pred.points.iter().zip(&truth.points).map(|(a, b)| (a - b).norm()).collect())
}

/// Rigidly register `pred` to `mesh` with ICP, then report each point's
/// distance to the surface.
pub fn unseen_projection_error(pred: &CorrespondenceSet, mesh: &TriMesh) -> Result<Vec<f64>> {
    let icp = icp_to_mesh(&pred.points, mesh, ICP_MAX_ITERS, ICP_TOL)?;
    pred.points.iter().map(|p| mesh.closest_point(&icp.transform.apply(p)).map(|c| c.distance)).collect()
}

/// Quantile by linear interpolation between order statistics
/// (position `q·(n−1)` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Five-number summary plus mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("summary of an empty sample".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("summary input".into()));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let (mean, std) = mean_std(values);
        Ok(Self {
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
            mean,
            std,
        })
    }
}

/// Per-shape per-point errors (mm) for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub split: String,
    pub shape_ids: Vec<String>,
    pub errors: Vec<Vec<f64>>,
}

impl ErrorReport {
    pub fn new(split: impl Into<String>, shape_ids: Vec<String>, errors: Vec<Vec<f64>>) -> Result<Self> {
        if shape_ids.len() != errors.len() {
            return Err(Error::DimensionMismatch(format!("{} ids for {} error rows", shape_ids.len(), errors.len())));
        }
        if errors.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("a shape with no points".into()));
        }
        if errors.iter().flatten().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidArgument("errors must be finite and non-negative".into()));
        }
        Ok(Self { split: split.into(), shape_ids, errors })
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn per_shape(&self) -> Vec<Summary> {
        self.errors.iter().map(|e| Summary::of(e).expect("validated in new")).collect()
    }

    /// Mean error of each shape.
    pub fn shape_means(&self) -> Vec<f64> {
        self.errors.iter().map(|e| e.iter().sum::<f64>() / e.len() as f64).collect()
    }

    /// Summary over every point of every shape.
    pub fn pooled(&self) -> Result<Summary> {
        Summary::of(&self.errors.concat())
    }

    pub const CSV_HEADER: &'static str = "split,shape,min,q1,median,q3,max,mean,std";

    /// One row per shape followed by a pooled `all` row.
    pub fn to_csv(&self, with_header: bool) -> Result<String> {
        let mut out = String::new();
        if with_header {
            out.push_str(Self::CSV_HEADER);
            out.push('\n');
        }
        let row = |out: &mut String, id: &str, s: &Summary| {
            let _ =
                writeln!(out, "{},{},{},{},{},{},{},{},{}", self.split, id, s.min, s.q1, s.median, s.q3, s.max, s.mean, s.std);
        };
        for (id, s) in self.shape_ids.iter().zip(self.per_shape()) {
            row(&mut out, id, &s);
        }
        if !self.is_empty() {
            row(&mut out, "all", &self.pooled()?);
        }
        Ok(out)
    }
}

/// Mahalanobis distance of every loading vector.
pub fn mahalanobis_distances(ss: &ShapeSpace, loadings: &[Loadings]) -> Result<Vec<f64>> {
    loadings.iter().map(|l| ss.mahalanobis(l)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub split: String,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub std: f64,
}

/// Fixed-width bins over `[0, hi]` shared by every split.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub hi: f64,
    pub bins: usize,
    pub rows: Vec<HistogramRow>,
}

impl Histogram {
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|i| self.hi * i as f64 / self.bins as f64).collect()
    }

    pub fn row(&self, split: &str) -> Option<&HistogramRow> {
        self.rows.iter().find(|r| r.split == split)
    }

    /// `bin_lo,bin_hi,<split>...` with one line per bin.
    pub fn counts_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi");
        for r in &self.rows {
            let _ = write!(out, ",{}", r.split);
        }
        out.push('\n');
        let e = self.edges();
        for b in 0..self.bins {
            let _ = write!(out, "{},{}", e[b], e[b + 1]);
            for r in &self.rows {
                let _ = write!(out, ",{}", r.counts[b]);
            }
            out.push('\n');
        }
        out
    }

    pub fn stats_csv(&self) -> String {
        let mut out = String::from("split,n,mean,std\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.split, r.counts.iter().sum::<usize>(), r.mean, r.std);
        }
        out
    }
}

/// Histogram Mahalanobis distances of several splits over a common range
/// `[0, max distance]`.
pub fn mahalanobis_histogram(ss: &ShapeSpace, splits: &[(String, Vec<Loadings>)], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let dists = splits
        .iter()
        .map(|(name, l)| {
            if l.is_empty() {
                return Err(Error::InvalidArgument(format!("split {name} is empty")));
            }
            mahalanobis_distances(ss, l)
        })
        .collect::<Result<Vec<_>>>()?;
    let max = dists.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let hi = if max > 0.0 { max } else { 1.0 };
    let rows = splits
        .iter()
        .zip(&dists)
        .map(|((name, _), d)| {
            let mut counts = vec![0; bins];
            for &x in d {
                counts[((x / hi * bins as f64) as usize).min(bins - 1)] += 1;
            }
            let (mean, std) = mean_std(d);
            HistogramRow { split: name.clone(), counts, mean, std }
        })
        .collect();
    Ok(Histogram { hi, bins, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldStat {
    Mean,
    Std,
}

impl FieldStat {
    pub fn label(self) -> &'static str {
        match self {
            FieldStat::Mean => "mean",
            FieldStat::Std => "std",
        }
    }
}

/// A scalar per correspondence point, meant to be painted on the mean shape.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexField {
    pub stat: FieldStat,
    pub values: Vec<f64>,
}

impl VertexField {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Peak over median; large when the field is concentrated.
    pub fn max_median_ratio(&self) -> f64 {
        let mut s = self.values.clone();
        s.sort_by(f64::total_cmp);
        let med = quantile_sorted(&s, 0.5);
        s[s.len() - 1] / med
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("point_index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }

    /// Writes `<stem>.csv` and a sidecar `<stem>.obj` holding the mean shape
    /// as a vertex-only OBJ in point order.
    pub fn write_with_mean_shape(&self, dir: impl AsRef<Path>, stem: &str, mean: &CorrespondenceSet) -> Result<()> {
        if mean.len() != self.values.len() {
            return Err(Error::DimensionMismatch(format!("{} values for {} mean-shape points", self.values.len(), mean.len())));
        }
        let dir = dir.as_ref();
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let mut obj = String::new();
        for p in &mean.points {
            let _ = writeln!(obj, "v {} {} {}", p.x, p.y, p.z);
        }
        let obj_path = dir.join(format!("{stem}.obj"));
        std::fs::write(&obj_path, obj).map_err(|e| Error::io(&obj_path, e))
    }
}

/// Per-point mean or sample standard deviation of errors across shapes.
pub fn vertex_error_field(errors: &[Vec<f64>], stat: FieldStat) -> Result<VertexField> {
    let Some(first) = errors.first() else {
        return Err(Error::InvalidArgument("vertex field of an empty shape set".into()));
    };
    let p = first.len();
    if errors.iter().any(|e| e.len() != p) {
        return Err(Error::DimensionMismatch("shapes disagree on point count".into()));
    }
    let values = (0..p)
        .map(|i| {
            let col: Vec<f64> = errors.iter().map(|e| e[i]).collect();
            let (mean, std) = mean_std(&col);
            match stat {
                FieldStat::Mean => mean,
                FieldStat::Std => std,
            }
        })
        .collect();
    Ok(VertexField { stat, values })
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const TOL: f64 = 1e-12;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        for num in [m * (b - m) * x / ((a + m2 - 1.0) * (a + m2)), -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0))] {
            d = 1.0 + num * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + num / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
            if num < 0.0 && (d * c - 1.0).abs() < TOL {
                return h;
            }
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

fn diff_mean_se(d: &[f64]) -> Result<(f64, f64)> {
    if d.len() < 2 {
        return Err(Error::InvalidArgument("need at least two differences".into()));
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("test input".into()));
    }
    let (mean, std) = mean_std(d);
    if std == 0.0 {
        return Err(Error::Degenerate("differences have zero variance".into()));
    }
    Ok((mean, std / (d.len() as f64).sqrt()))
}

/// Paired Student t-test of `a − b` against zero mean.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, se) = diff_mean_se(&d)?;
    let t = mean / se;
    let df = (d.len() - 1) as f64;
    let p = 2.0 * student_t_cdf(-t.abs(), df);
    Ok(TTest { t, df, p_two_sided: p.min(1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tost {
    pub mean: f64,
    pub bound: f64,
    pub alpha: f64,
    /// p of H0: mean ≤ −bound.
    pub p_lower: f64,
    /// p of H0: mean ≥ +bound.
    pub p_upper: f64,
    pub equivalent: bool,
}

/// Two one-sided t-tests of the mean difference against `±bound`.
pub fn tost_equivalence(diffs: &[f64], bound: f64, alpha: f64) -> Result<Tost> {
    if !(bound > 0.0) {
        return Err(Error::InvalidArgument(format!("TOST bound must be positive, got {bound}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (mean, se) = diff_mean_se(diffs)?;
    let df = (diffs.len() - 1) as f64;
    let p_lower = 1.0 - student_t_cdf((mean + bound) / se, df);
    let p_upper = student_t_cdf((mean - bound) / se, df);
    Ok(Tost { mean, bound, alpha, p_lower, p_upper, equivalent: p_lower.max(p_upper) < alpha })
}

#[derive(Debug, Clone)]
pub struct DownstreamConfig {
    pub mlp: MlpConfig,
    pub bound: f64,
    pub alpha: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self { mlp: MlpConfig::default(), bound: DEFAULT_TOST_BOUND, alpha: 0.05 }
    }
}

/// Outcome of comparing a downstream predictor fed PDM loadings with the same
/// predictor fed network loadings.
#[derive(Debug, Clone)]
pub struct DownstreamReport {
    pub pdm_predictions: Vec<f64>,
    pub net_predictions: Vec<f64>,
    /// Set when the two prediction lists agree exactly; the tests are then
    /// undefined and skipped.
    pub exactly_equal: bool,
    pub ttest: Option<TTest>,
    pub tost: Option<Tost>,
    pub final_train_rmse: f64,
}

impl DownstreamReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,pdm_prediction,net_prediction,difference\n");
        for (i, (a, b)) in self.pdm_predictions.iter().zip(&self.net_predictions).enumerate() {
            let _ = writeln!(out, "{i},{a},{b},{}", b - a);
        }
        out
    }
}

/// Train the MLP on `pdm_loadings → targets`, predict from both loading
/// sources, and test whether the predictions agree.
pub fn downstream_equivalence(
    pdm_loadings: &[Loadings],
    net_loadings: &[Loadings],
    targets: &[f64],
    cfg: &DownstreamConfig,
) -> Result<DownstreamReport> {
    if pdm_loadings.len() != net_loadings.len() || pdm_loadings.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} PDM loadings, {} network loadings, {} targets",
            pdm_loadings.len(),
            net_loadings.len(),
            targets.len()
        )));
    }
    let mlp = train_mlp(pdm_loadings, targets, &cfg.mlp)?;
    let pdm_predictions = mlp.predict(pdm_loadings)?;
    let net_predictions = mlp.predict(net_loadings)?;
    let diffs: Vec<f64> = net_predictions.iter().zip(&pdm_predictions).map(|(b, a)| b - a).collect();
    let exactly_equal = diffs.iter().all(|d| *d == 0.0);
    let (ttest, tost) = if exactly_equal {
        (None, None)
    } else {
        (Some(paired_ttest(&net_predictions, &pdm_predictions)?), Some(tost_equivalence(&diffs, cfg.bound, cfg.alpha)?))
    };
    let final_train_rmse = mlp.history.last().map_or(f64::NAN, |e| e.train_rmse);
    Ok(DownstreamReport { pdm_predictions, net_predictions, exactly_equal, ttest, tost, final_train_rmse })
}
