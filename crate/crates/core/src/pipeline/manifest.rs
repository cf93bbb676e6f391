//! Append-only run manifest.
//!
//! ```text
//! [entry]
//! command = pdm
//! config_sha256 = 3f1c...
//! seed = 7
//! read = s0000 s0001 ...
//! artifact = pdm/shape_space.sspc 9a0b...
//! ```
//!
//! Artifact paths are relative to the output directory when they live
//! inside it and absolute otherwise. Later entries supersede earlier ones
//! for the same path.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::sha256_hex;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.txt";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ManifestEntry {
    pub command: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    /// Sample ids whose data files this stage opened, in read order.
    pub read: Vec<String>,
    pub artifacts: Vec<(String, String)>,
}

impl ManifestEntry {
    fn render(&self) -> String {
        let mut s = String::from("[entry]\n");
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "config_sha256 = {}", self.config_sha256);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        if !self.read.is_empty() {
            let _ = writeln!(s, "read = {}", self.read.join(" "));
        }
        for (path, sum) in &self.artifacts {
            let _ = writeln!(s, "artifact = {path} {sum}");
        }
        s
    }
}

/// Collects what a stage reads and writes, then appends one entry.
#[derive(Debug)]
pub struct StageRecord {
    out: PathBuf,
    entry: ManifestEntry,
}

impl StageRecord {
    pub fn new(out: &Path, command: &str, config_sha256: &str, seed: Option<u64>) -> Self {
        Self {
            out: out.to_path_buf(),
            entry: ManifestEntry { command: command.into(), config_sha256: config_sha256.into(), seed, ..Default::default() },
        }
    }

    pub fn read_id(&mut self, id: &str) {
        self.entry.read.push(id.to_string());
    }

    /// Checksum `path` (already written) into the entry.
    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.entry.artifacts.push((display_path(&self.out, path), sha256_hex(&bytes)));
        Ok(())
    }

    pub fn finish(self) -> Result<ManifestEntry> {
        append(&self.out, &self.entry)?;
        Ok(self.entry)
    }
}

pub fn display_path(out: &Path, path: &Path) -> String {
    match path.strip_prefix(out) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()).to_string_lossy().into_owned(),
    }
}

pub fn resolve_path(out: &Path, shown: &str) -> PathBuf {
    let p = PathBuf::from(shown);
    if p.is_absolute() {
        p
    } else {
        out.join(p)
    }
}

fn append(out: &Path, e: &ManifestEntry) -> Result<()> {
    use std::io::Write;
    let path = out.join(MANIFEST_FILE);
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|err| Error::io(&path, err))?;
    f.write_all(e.render().as_bytes()).map_err(|err| Error::io(&path, err))
}

pub fn read_entries(out: &Path) -> Result<Vec<ManifestEntry>> {
    let path = out.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_entries(&text)
}

pub fn parse_entries(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let bad = |m: &str| Error::format("run manifest", format!("line {}: {m}", n + 1));
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "[entry]" {
            entries.push(ManifestEntry::default());
            continue;
        }
        let cur = entries.last_mut().ok_or_else(|| bad("field before the first [entry]"))?;
        let (k, v) = line.split_once(" = ").ok_or_else(|| bad("expected `key = value`"))?;
        match k {
            "command" => cur.command = v.into(),
            "config_sha256" => cur.config_sha256 = v.into(),
            "seed" => cur.seed = Some(v.parse().map_err(|_| bad("bad seed"))?),
            "read" => cur.read = v.split(' ').map(String::from).collect(),
            "artifact" => {
                let (p, sum) = v.rsplit_once(' ').ok_or_else(|| bad("artifact needs a path and a checksum"))?;
                cur.artifacts.push((p.into(), sum.into()));
            }
            _ => return Err(bad("unknown field")),
        }
    }
    Ok(entries)
}

/// Latest checksum of every artifact path.
pub fn latest_checksums(entries: &[ManifestEntry]) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    for e in entries {
        for (p, s) in &e.artifacts {
            m.insert(p.clone(), s.clone());
        }
    }
    m
}

/// The most recent entry for `command`.
pub fn latest<'a>(entries: &'a [ManifestEntry], command: &str) -> Option<&'a ManifestEntry> {
    entries.iter().rev().find(|e| e.command == command)
}
