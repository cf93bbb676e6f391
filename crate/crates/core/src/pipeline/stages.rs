//! The file-backed pipeline stages.
//!
//! Output layout under `out`:
//!
//! ```text
//! corpus/<split>/{manifest.csv, volumes/, shapes/, meshes/}   (default corpus location)
//! pdm/{shape_space.sspc, variance.csv, loadings.csv}
//! augment/{manifest.csv, stats.csv, volumes/}
//! train/{model.snet, rmse.csv, split.csv}
//! predict/loadings.csv
//! evaluate/*.csv, evaluate/fields/
//! report/report.md
//! run_manifest.txt
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::config::RunConfig;
use super::manifest::StageRecord;
use crate::augment::{default_threshold, generate_augmented_set, read_augmented_manifest, write_augmented_set, AugmentedEntry};
use crate::evalstats::{
    correspondence_error, downstream_equivalence, mahalanobis_histogram, unseen_projection_error, vertex_error_field,
    ErrorReport, FieldStat,
};
use crate::mesh::TriMesh;
use crate::neuralnet::{predict_loadings_batch, read_snet, train_cnn, write_rmse_csv, write_snet};
use crate::shapespace::{build_pca, CorrespondenceSet, Loadings, ShapeSpace};
use crate::synthdata::{generate_study, read_manifest, sample_rng, write_manifest, ManifestEntry, Split};
use crate::volume::Volume;
use crate::{par_map, Error, Result};

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

/// Role names used in evaluation outputs.
pub fn role_label(split: Split) -> &'static str {
    match split {
        Split::PdmTrain => "pdm-train",
        Split::HeldOut => "test",
        Split::UnseenNormal => "unseen-normal",
        Split::UnseenPathological => "unseen-pathological",
    }
}

pub fn split_dir(cfg: &RunConfig, split: Split) -> PathBuf {
    cfg.corpus_dir().join(split.label())
}

/// Manifest rows of one corpus split, or `None` when the split directory is
/// absent.
pub fn split_entries(cfg: &RunConfig, split: Split) -> Result<Option<Vec<ManifestEntry>>> {
    let dir = split_dir(cfg, split);
    if !dir.exists() {
        return Ok(None);
    }
    Ok(Some(read_manifest(require(dir.join("manifest.csv"))?)?))
}

fn required_split(cfg: &RunConfig, split: Split) -> Result<Vec<ManifestEntry>> {
    split_entries(cfg, split)?.ok_or_else(|| Error::MissingArtifact(split_dir(cfg, split).join("manifest.csv")))
}

struct Loaded {
    shape: Option<CorrespondenceSet>,
    volume: Option<Volume>,
    mesh: Option<TriMesh>,
}

/// Open the requested files of each sample, logging every id read.
fn load_samples(
    cfg: &RunConfig,
    split: Split,
    entries: &[ManifestEntry],
    (shape, volume, mesh): (bool, bool, bool),
    rec: &mut StageRecord,
) -> Result<Vec<Loaded>> {
    let dir = split_dir(cfg, split);
    for e in entries {
        rec.read_id(&e.id);
    }
    let loaded = par_map(entries.len(), |i| -> Result<Loaded> {
        let id = &entries[i].id;
        Ok(Loaded {
            shape: shape
                .then(|| CorrespondenceSet::read_csv(require(dir.join("shapes").join(format!("{id}.csv")))?))
                .transpose()?,
            volume: volume.then(|| Volume::read_svol(require(dir.join("volumes").join(format!("{id}.svol")))?)).transpose()?,
            mesh: mesh.then(|| TriMesh::read_obj(require(dir.join("meshes").join(format!("{id}.obj")))?)).transpose()?,
        })
    });
    loaded.into_iter().collect()
}

fn loadings_csv_header(m: usize, lead: &str) -> String {
    let mut s = String::from(lead);
    for k in 0..m {
        let _ = write!(s, ",l{k}");
    }
    s.push('\n');
    s
}

fn push_loadings(s: &mut String, l: &Loadings) {
    for v in &l.0 {
        let _ = write!(s, ",{v}");
    }
    s.push('\n');
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let mut rec = StageRecord::new(&cfg.out, "generate", &cfg.sha256, Some(cfg.study_seed));
    log::info!("generating {} synthetic subjects", cfg.study.total());
    let samples = generate_study(&cfg.study, cfg.study_seed)?;
    for split in Split::ALL {
        let subset: Vec<_> = samples.iter().filter(|s| s.split == split).collect();
        if subset.is_empty() {
            continue;
        }
        let dir = split_dir(cfg, split);
        for sub in ["volumes", "shapes", "meshes"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        }
        let entries: Vec<ManifestEntry> = subset.iter().map(|s| ManifestEntry::from(*s)).collect();
        write_manifest(&entries, dir.join("manifest.csv"))?;
        rec.artifact(&dir.join("manifest.csv"))?;
        for s in subset {
            let v = dir.join("volumes").join(format!("{}.svol", s.id));
            let c = dir.join("shapes").join(format!("{}.csv", s.id));
            let m = dir.join("meshes").join(format!("{}.obj", s.id));
            s.volume.write_svol(&v)?;
            s.shape.write_csv(&c)?;
            s.mesh.write_obj(&m)?;
            for p in [v, c, m] {
                rec.artifact(&p)?;
            }
        }
    }
    rec.finish()?;
    Ok(())
}

fn shape_space_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("pdm").join("shape_space.sspc")
}

pub fn pdm(cfg: &RunConfig) -> Result<()> {
    let mut rec = StageRecord::new(&cfg.out, "pdm", &cfg.sha256, None);
    let entries = required_split(cfg, Split::PdmTrain)?;
    let shapes: Vec<CorrespondenceSet> = load_samples(cfg, Split::PdmTrain, &entries, (true, false, false), &mut rec)?
        .into_iter()
        .map(|l| l.shape.unwrap())
        .collect();
    let ss = build_pca(&shapes, cfg.variance_target, cfg.max_modes)?;
    log::info!("shape space keeps {} modes", ss.m());
    let dir = cfg.out.join("pdm");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    ss.write_sspc(shape_space_path(cfg))?;
    let mut var = String::from("mode,eigenvalue,fraction,cumulative\n");
    for (k, (l, c)) in ss.eigenvalues().iter().zip(ss.cumulative_fractions()).enumerate() {
        let _ = writeln!(var, "{},{},{},{}", k + 1, l, l / ss.total_variance(), c);
    }
    write_file(&dir.join("variance.csv"), &var)?;
    let mut lc = loadings_csv_header(ss.m(), "id");
    for (e, s) in entries.iter().zip(&shapes) {
        lc.push_str(&e.id);
        push_loadings(&mut lc, &ss.project(s)?);
    }
    write_file(&dir.join("loadings.csv"), &lc)?;
    for f in ["shape_space.sspc", "variance.csv", "loadings.csv"] {
        rec.artifact(&dir.join(f))?;
    }
    rec.finish()?;
    Ok(())
}

fn read_shape_space(cfg: &RunConfig) -> Result<ShapeSpace> {
    ShapeSpace::read_sspc(require(shape_space_path(cfg))?)
}

fn augment_manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("augment").join("manifest.csv")
}

pub fn augment(cfg: &RunConfig) -> Result<()> {
    let ss = read_shape_space(cfg)?;
    let mut rec = StageRecord::new(&cfg.out, "augment", &cfg.sha256, Some(cfg.augment.seed));
    let entries = required_split(cfg, Split::PdmTrain)?;
    let loaded = load_samples(cfg, Split::PdmTrain, &entries, (true, true, false), &mut rec)?;
    let (shapes, images): (Vec<_>, Vec<_>) = loaded.into_iter().map(|l| (l.shape.unwrap(), l.volume.unwrap())).unzip();
    let mut aug = cfg.augment.clone();
    aug.reject_threshold = match cfg.reject_threshold {
        Some(t) => t,
        None => default_threshold(&shapes)?,
    };
    log::info!("augmenting to {} samples, reject threshold {:.3} mm", aug.n_samples, aug.reject_threshold);
    let (samples, stats) = generate_augmented_set(&ss, &shapes, &images, &aug)?;
    let dir = cfg.out.join("augment");
    let written = write_augmented_set(&dir, &samples)?;
    let stats_csv = format!(
        "attempts,accepted,acceptance_rate,reject_threshold\n{},{},{},{}\n",
        stats.attempts,
        stats.accepted,
        stats.acceptance_rate(),
        aug.reject_threshold
    );
    write_file(&dir.join("stats.csv"), &stats_csv)?;
    rec.artifact(&dir.join("manifest.csv"))?;
    rec.artifact(&dir.join("stats.csv"))?;
    for e in &written {
        rec.artifact(&dir.join(&e.svol))?;
    }
    rec.finish()?;
    Ok(())
}

fn read_augmented(cfg: &RunConfig) -> Result<(Vec<AugmentedEntry>, Vec<Volume>)> {
    let path = require(augment_manifest_path(cfg))?;
    let entries = read_augmented_manifest(&path)?;
    let dir = path.parent().expect("manifest has a parent");
    let vols = par_map(entries.len(), |i| Volume::read_svol(dir.join(&entries[i].svol)));
    Ok((entries, vols.into_iter().collect::<Result<_>>()?))
}

/// Deterministic train/validation split of the augmented set; `true` marks
/// validation.
pub fn validation_mask(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let n_val = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sample_rng(seed, 1));
    let mut mask = vec![false; n];
    for &i in &order[..n_val.min(n.saturating_sub(1))] {
        mask[i] = true;
    }
    mask
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("train").join("model.snet")
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ss = read_shape_space(cfg)?;
    let (entries, vols) = read_augmented(cfg)?;
    let mut rec = StageRecord::new(&cfg.out, "train", &cfg.sha256, Some(cfg.train.seed));
    let spec = cfg.net_spec(ss.m())?;
    if let Some(e) = entries.iter().find(|e| e.loadings.len() != ss.m()) {
        return Err(Error::DimensionMismatch(format!("{} has {} loadings, shape space has {}", e.id, e.loadings.len(), ss.m())));
    }
    let mask = validation_mask(entries.len(), cfg.val_fraction, cfg.train.seed);
    let pick = |val: bool| -> (Vec<&Volume>, Vec<&Loadings>) {
        entries.iter().zip(&vols).zip(&mask).filter(|(_, &m)| m == val).map(|((e, v), _)| (v, &e.loadings)).unzip()
    };
    let (tv, tl) = pick(false);
    let (vv, vl) = pick(true);
    log::info!("training on {} volumes, validating on {}", tv.len(), vv.len());
    let val = (!vv.is_empty()).then_some((vv.as_slice(), vl.as_slice()));
    let (params, history) = train_cnn(&spec, &tv, &tl, val, &cfg.train, cfg.init_seed)?;
    let dir = cfg.out.join("train");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_snet(model_path(cfg), &spec, &params)?;
    write_rmse_csv(dir.join("rmse.csv"), &history)?;
    let mut split = String::from("id,role\n");
    for (e, &m) in entries.iter().zip(&mask) {
        let _ = writeln!(split, "{},{}", e.id, if m { "val" } else { "train" });
    }
    write_file(&dir.join("split.csv"), &split)?;
    for f in ["model.snet", "rmse.csv", "split.csv"] {
        rec.artifact(&dir.join(f))?;
    }
    rec.finish()?;
    Ok(())
}

const PREDICT_BATCH: usize = 16;

fn predictions_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("predict").join("loadings.csv")
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let (spec, params) = read_snet(require(model_path(cfg))?)?;
    let (entries, vols) = read_augmented(cfg)?;
    let mut rec = StageRecord::new(&cfg.out, "predict", &cfg.sha256, None);
    let mask = validation_mask(entries.len(), cfg.val_fraction, cfg.train.seed);
    let mut csv = loadings_csv_header(spec.output_dim, "id,role");
    let refs: Vec<&Volume> = vols.iter().collect();
    for ((e, p), m) in entries.iter().zip(predict_loadings_batch(&spec, &params, &refs, PREDICT_BATCH)?).zip(&mask) {
        let _ = write!(csv, "{},{}", e.id, if *m { "val" } else { "train" });
        push_loadings(&mut csv, &p);
    }
    for split in Split::ALL {
        let Some(entries) = split_entries(cfg, split)? else {
            log::info!("split {} absent, skipped", split.label());
            continue;
        };
        let loaded = load_samples(cfg, split, &entries, (false, true, false), &mut rec)?;
        let refs: Vec<&Volume> = loaded.iter().map(|l| l.volume.as_ref().unwrap()).collect();
        for (e, p) in entries.iter().zip(predict_loadings_batch(&spec, &params, &refs, PREDICT_BATCH)?) {
            let _ = write!(csv, "{},{}", e.id, role_label(split));
            push_loadings(&mut csv, &p);
        }
    }
    write_file(&predictions_path(cfg), &csv)?;
    rec.artifact(&predictions_path(cfg))?;
    rec.finish()?;
    Ok(())
}

/// `(id, role, loadings)` rows of the prediction table.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, String, Loadings)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 2 {
            return Err(Error::format("predictions", format!("line {}: too few fields", n + 1)));
        }
        let l = f[2..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format("predictions", format!("line {}: {e}", n + 1)))?;
        out.push((f[0].to_string(), f[1].to_string(), Loadings(l)));
    }
    Ok(out)
}

/// Evaluation file names, in report order.
pub const EVAL_ROLES: [&str; 5] = ["train", "val", "test", "unseen-normal", "unseen-pathological"];

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let ss = read_shape_space(cfg)?;
    let preds = read_predictions(&require(predictions_path(cfg))?)?;
    let aug = read_augmented_manifest(require(augment_manifest_path(cfg))?)?;
    let mut rec = StageRecord::new(&cfg.out, "evaluate", &cfg.sha256, Some(cfg.downstream.mlp.train.seed));
    let dir = cfg.out.join("evaluate");
    fs::create_dir_all(dir.join("fields")).map_err(|e| Error::io(dir.join("fields"), e))?;
    let by_role = |role: &str| -> Vec<&(String, String, Loadings)> { preds.iter().filter(|p| p.1 == role).collect() };
    let mean_shape = ss.mean_shape();
    let mut reports: Vec<ErrorReport> = Vec::new();
    let mut baselines: Vec<ErrorReport> = Vec::new();
    let mut hist_splits: Vec<(String, Vec<Loadings>)> = Vec::new();

    // augmented train/val: truth is the reconstruction of the drawn loadings
    let truth: std::collections::HashMap<&str, &Loadings> = aug.iter().map(|e| (e.id.as_str(), &e.loadings)).collect();
    for role in ["train", "val"] {
        let rows = by_role(role);
        if rows.is_empty() {
            continue;
        }
        let errs = par_map(rows.len(), |i| -> Result<Vec<f64>> {
            let t =
                truth.get(rows[i].0.as_str()).ok_or_else(|| Error::format("predictions", format!("unknown id {}", rows[i].0)))?;
            correspondence_error(&ss.reconstruct(&rows[i].2)?, &ss.reconstruct(t)?)
        });
        let ids = rows.iter().map(|r| r.0.clone()).collect();
        reports.push(ErrorReport::new(role, ids, errs.into_iter().collect::<Result<_>>()?)?);
        hist_splits.push((role.to_string(), rows.iter().map(|r| r.2.clone()).collect()));
    }

    let mut fields_for: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let mut downstream_rows: Vec<(Loadings, Loadings, f64)> = Vec::new();
    for split in [Split::PdmTrain, Split::HeldOut, Split::UnseenNormal, Split::UnseenPathological] {
        let Some(entries) = split_entries(cfg, split)? else {
            continue;
        };
        let role = role_label(split);
        let rows = by_role(role);
        if rows.len() != entries.len() || rows.iter().zip(&entries).any(|(r, e)| r.0 != e.id) {
            return Err(Error::format("predictions", format!("{role} rows do not match the corpus manifest; rerun predict")));
        }
        let unseen = split.is_unseen();
        let loaded = load_samples(cfg, split, &entries, (!unseen, false, unseen), &mut rec)?;
        if split == Split::PdmTrain || split == Split::HeldOut {
            for ((l, r), e) in loaded.iter().zip(&rows).zip(&entries) {
                downstream_rows.push((ss.project(l.shape.as_ref().unwrap())?, r.2.clone(), e.outcome));
            }
        }
        if split == Split::PdmTrain {
            continue;
        }
        let (errs, base) = if unseen {
            let e =
                par_map(rows.len(), |i| unseen_projection_error(&ss.reconstruct(&rows[i].2)?, loaded[i].mesh.as_ref().unwrap()));
            let b = par_map(rows.len(), |i| unseen_projection_error(&mean_shape, loaded[i].mesh.as_ref().unwrap()));
            (e, b)
        } else {
            let e =
                par_map(rows.len(), |i| correspondence_error(&ss.reconstruct(&rows[i].2)?, loaded[i].shape.as_ref().unwrap()));
            let b = par_map(rows.len(), |i| correspondence_error(&mean_shape, loaded[i].shape.as_ref().unwrap()));
            (e, b)
        };
        let errs: Vec<Vec<f64>> = errs.into_iter().collect::<Result<_>>()?;
        let ids: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
        reports.push(ErrorReport::new(role, ids.clone(), errs.clone())?);
        baselines.push(ErrorReport::new(format!("baseline-{role}"), ids, base.into_iter().collect::<Result<_>>()?)?);
        hist_splits.push((role.to_string(), rows.iter().map(|r| r.2.clone()).collect()));
        fields_for.push((role.to_string(), errs));
    }

    let voxel = cfg.render_spacing * cfg.study.downsample as f64;
    let mut errors_csv = String::from(ErrorReport::CSV_HEADER);
    errors_csv.push('\n');
    let mut summary = String::from("split,shapes,mean_error_mm,median_error_mm,max_error_mm,mean_error_voxels\n");
    for r in reports.iter().chain(&baselines) {
        errors_csv.push_str(&r.to_csv(false)?);
        let p = r.pooled()?;
        let _ = writeln!(summary, "{},{},{},{},{},{}", r.split, r.errors.len(), p.mean, p.median, p.max, p.mean / voxel);
    }
    write_file(&dir.join("errors.csv"), &errors_csv)?;
    write_file(&dir.join("error_summary.csv"), &summary)?;

    let hist = mahalanobis_histogram(&ss, &hist_splits, cfg.histogram_bins)?;
    write_file(&dir.join("mahalanobis_counts.csv"), &hist.counts_csv())?;
    write_file(&dir.join("mahalanobis_stats.csv"), &hist.stats_csv())?;

    let mut field_summary = String::from("split,stat,argmax_point,argmax_angle_to_bump_rad,max_value,max_median_ratio\n");
    let centroid = mean_shape.points.iter().sum::<crate::Vec3>() / mean_shape.len() as f64;
    let mut field_files = Vec::new();
    for (role, errs) in &fields_for {
        for stat in [FieldStat::Mean, FieldStat::Std] {
            let f = vertex_error_field(errs, stat)?;
            let stem = format!("{role}_{}", stat.label());
            f.write_with_mean_shape(dir.join("fields"), &stem, &mean_shape)?;
            field_files.push(stem);
            let a = f.argmax();
            let angle = (mean_shape.points[a] - centroid).normalize().dot(&cfg.study.bump_direction).clamp(-1.0, 1.0).acos();
            let _ = writeln!(field_summary, "{role},{},{a},{angle},{},{}", stat.label(), f.values[a], f.max_median_ratio());
        }
    }
    write_file(&dir.join("field_summary.csv"), &field_summary)?;

    let (pdm_l, net_l, targets): (Vec<Loadings>, Vec<Loadings>, Vec<f64>) =
        downstream_rows.into_iter().fold((vec![], vec![], vec![]), |mut acc, (a, b, t)| {
            acc.0.push(a);
            acc.1.push(b);
            acc.2.push(t);
            acc
        });
    let mut tests = String::from("test,statistic,df,p_value,p_lower,p_upper,bound,alpha,equivalent\n");
    if pdm_l.len() >= 2 {
        let d = downstream_equivalence(&pdm_l, &net_l, &targets, &cfg.downstream)?;
        write_file(&dir.join("downstream.csv"), &d.to_csv())?;
        if d.exactly_equal {
            let _ = writeln!(tests, "exact,0,,1,,,{},{},true", cfg.downstream.bound, cfg.downstream.alpha);
        }
        if let Some(t) = d.ttest {
            let _ = writeln!(tests, "paired_t,{},{},{},,,,,", t.t, t.df, t.p_two_sided);
        }
        if let Some(t) = d.tost {
            let _ = writeln!(
                tests,
                "tost,{},,{},{},{},{},{},{}",
                t.mean,
                t.p_lower.max(t.p_upper),
                t.p_lower,
                t.p_upper,
                t.bound,
                t.alpha,
                t.equivalent
            );
        }
    } else {
        write_file(&dir.join("downstream.csv"), "index,pdm_prediction,net_prediction,difference\n")?;
    }
    write_file(&dir.join("downstream_tests.csv"), &tests)?;

    for f in [
        "errors.csv",
        "error_summary.csv",
        "mahalanobis_counts.csv",
        "mahalanobis_stats.csv",
        "field_summary.csv",
        "downstream.csv",
        "downstream_tests.csv",
    ] {
        rec.artifact(&dir.join(f))?;
    }
    for stem in field_files {
        rec.artifact(&dir.join("fields").join(format!("{stem}.csv")))?;
        rec.artifact(&dir.join("fields").join(format!("{stem}.obj")))?;
    }
    rec.finish()?;
    Ok(())
}
