//! `report`: verify the run manifest, then assemble `report/report.md` from
//! the stage outputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{sha256_hex, RunConfig};
use super::manifest::{display_path, latest, latest_checksums, read_entries, resolve_path, StageRecord};
use super::stages::{split_dir, split_entries, write_file};
use crate::synthdata::Split;
use crate::{Error, Result};

/// Outcome of checking every recorded artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub checked: usize,
    /// Corpus splits whose directory was removed after generation.
    pub absent_splits: Vec<String>,
}

/// Re-hash every artifact recorded in the manifest. Files of a corpus split
/// whose whole directory is gone are skipped; anything else missing or
/// altered is an error.
pub fn verify_artifacts(cfg: &RunConfig) -> Result<Verification> {
    let entries = read_entries(&cfg.out)?;
    let absent: Vec<(String, String)> = Split::ALL
        .iter()
        .filter(|s| !split_dir(cfg, **s).exists())
        .map(|s| (s.label().to_string(), display_path(&cfg.out, &split_dir(cfg, *s))))
        .collect();
    let mut checked = 0;
    for (shown, sum) in latest_checksums(&entries) {
        let path = resolve_path(&cfg.out, &shown);
        if !path.exists() {
            if absent.iter().any(|(_, d)| shown.starts_with(&format!("{d}/"))) {
                continue;
            }
            return Err(Error::MissingArtifact(path));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != sum {
            return Err(Error::ChecksumMismatch(path));
        }
        checked += 1;
    }
    Ok(Verification { checked, absent_splits: absent.into_iter().map(|(l, _)| l).collect() })
}

/// Ids read by the latest `pdm` and `augment` stages must all belong to the
/// PDM-training split.
pub fn verify_quarantine(cfg: &RunConfig) -> Result<usize> {
    let entries = read_entries(&cfg.out)?;
    let allowed: BTreeSet<String> = split_entries(cfg, Split::PdmTrain)?
        .ok_or_else(|| Error::MissingArtifact(split_dir(cfg, Split::PdmTrain).join("manifest.csv")))?
        .into_iter()
        .map(|e| e.id)
        .collect();
    let mut n = 0;
    for stage in ["pdm", "augment"] {
        let e = latest(&entries, stage).ok_or_else(|| Error::format("run manifest", format!("no {stage} entry")))?;
        if let Some(bad) = e.read.iter().find(|id| !allowed.contains(*id)) {
            return Err(Error::format("run manifest", format!("{stage} read {bad}, which is outside the PDM-training split")));
        }
        n += e.read.len();
    }
    Ok(n)
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Render CSV text as a markdown table, keeping rows whose first field
/// passes `keep`.
fn csv_table(csv: &str, keep: impl Fn(&[&str]) -> bool) -> String {
    let mut lines = csv.lines();
    let Some(head) = lines.next() else {
        return String::new();
    };
    let cols: Vec<&str> = head.split(',').collect();
    let mut s = format!("| {} |\n|{}\n", cols.join(" | "), "---|".repeat(cols.len()));
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        if keep(&f) {
            let shown: Vec<String> = f.iter().map(|v| short(v)).collect();
            let _ = writeln!(s, "| {} |", shown.join(" | "));
        }
    }
    s
}

fn short(v: &str) -> String {
    match v.parse::<f64>() {
        Ok(x) if v.contains('.') || v.contains('e') => format!("{x:.4}"),
        _ => v.to_string(),
    }
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let v = verify_artifacts(cfg)?;
    let quarantined = verify_quarantine(cfg)?;
    let out = &cfg.out;
    let unseen_absent = v.absent_splits.iter().any(|s| s.starts_with("unseen"));
    let mut md = String::from("# Shape model report\n\n");
    let _ = writeln!(md, "Config SHA-256 `{}`, study seed {}.\n", cfg.sha256, cfg.study_seed);
    let _ = writeln!(md, "{} artifacts verified against the run manifest.", v.checked);
    let _ = writeln!(
        md,
        "Quarantine: the pdm and augment stages read {quarantined} sample files, all from the PDM-training split.\n"
    );

    md.push_str("## Shape space\n\n");
    md.push_str(&csv_table(&read_text(&out.join("pdm/variance.csv"))?, |_| true));
    let modes = read_text(&out.join("pdm/variance.csv"))?.lines().count() - 1;
    let _ = writeln!(md, "\nRetained modes M = {modes} (variance target {}).\n", cfg.variance_target);

    md.push_str("## Augmentation\n\n");
    md.push_str(&csv_table(&read_text(&out.join("augment/stats.csv"))?, |_| true));

    md.push_str("\n## Training RMSE\n\n");
    md.push_str(&csv_table(&read_text(&out.join("train/rmse.csv"))?, |_| true));

    let unseen_row = |f: &[&str]| f.first().is_some_and(|s| s.contains("unseen"));
    md.push_str("\n## Errors\n\nPooled per-point errors (mm). `baseline-*` rows predict the mean shape for every subject.\n\n");
    let summary = read_text(&out.join("evaluate/error_summary.csv"))?;
    md.push_str(&csv_table(&summary, |f| !unseen_row(f)));
    md.push_str("\nPer-shape summaries are in `evaluate/errors.csv`.\n");

    md.push_str("\n## Unseen data\n\n");
    let has_unseen = summary.lines().any(|l| l.starts_with("unseen"));
    if has_unseen {
        md.push_str("Projection errors (mm) after rigid ICP registration to the reference meshes.\n\n");
        md.push_str(&csv_table(&summary, unseen_row));
    } else {
        let why =
            if unseen_absent { "the unseen splits are absent from the corpus" } else { "the corpus has no unseen subjects" };
        let _ = writeln!(md, "Notice: unseen-data sections omitted because {why}.");
    }

    md.push_str("\n## Mahalanobis distances\n\n");
    md.push_str(&csv_table(&read_text(&out.join("evaluate/mahalanobis_stats.csv"))?, |_| true));
    md.push('\n');
    md.push_str(&csv_table(&read_text(&out.join("evaluate/mahalanobis_counts.csv"))?, |_| true));

    md.push_str("\n## Vertex error fields\n\n");
    let fields = read_text(&out.join("evaluate/field_summary.csv"))?;
    md.push_str(&csv_table(&fields, |f| has_unseen || !unseen_row(f)));
    md.push_str("\nFields and the mean-shape OBJ are in `evaluate/fields/`.\n");

    md.push_str("\n## Downstream equivalence\n\n");
    let _ = writeln!(
        md,
        "Classifier trained on PDM loadings, evaluated on PDM and network loadings. TOST bounds ±{}.\n",
        cfg.downstream.bound
    );
    md.push_str(&csv_table(&read_text(&out.join("evaluate/downstream_tests.csv"))?, |_| true));

    let path = out.join("report").join("report.md");
    write_file(&path, &md)?;
    let mut rec = StageRecord::new(out, "report", &cfg.sha256, None);
    rec.artifact(&path)?;
    rec.finish()?;
    Ok(())
}
