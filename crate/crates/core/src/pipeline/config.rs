//! Run configuration: a flat `section.key = value` text file.
//!
//! `#` starts a comment anywhere on a line. Lists are comma separated.
//! Unknown keys and repeated keys are errors. `study.seed`, `augment.seed`,
//! `train.seed` and `downstream.seed` must be given explicitly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::evalstats::DownstreamConfig;
use crate::neuralnet::{MlpConfig, NetSpec, TrainConfig};
use crate::synthdata::StudyConfig;
use crate::volume::Geometry;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub study: StudyConfig,
    pub study_seed: u64,
    /// Edge length in voxels of the rendered scan before downsampling.
    pub render_size: usize,
    pub render_spacing: f64,
    pub mesh_size: usize,
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub variance_target: f64,
    pub max_modes: usize,
    /// `None` means the nearest-neighbour default.
    pub reject_threshold: Option<f64>,
    pub augment: AugmentConfig,
    /// Fraction of the augmented set held back for validation.
    pub val_fraction: f64,
    pub net_width: usize,
    pub net_hidden: usize,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub histogram_bins: usize,
    pub downstream: DownstreamConfig,
    /// SHA-256 of the config text, hex.
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Table {
    entries: BTreeMap<String, (usize, String)>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `section.key = value`", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            let valid = k.split_once('.').is_some_and(|(s, key)| !s.is_empty() && !key.is_empty() && !key.contains('.'));
            if !valid {
                return Err(Error::Config(format!("line {}: key `{k}` is not of the form section.key", n + 1)));
            }
            if entries.insert(k.to_string(), (n + 1, v.to_string())).is_some() {
                return Err(Error::Config(format!("line {}: `{k}` set twice", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| Error::Config(format!("line {line}: bad value `{v}` for {key}"))),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        match self.take(key) {
            None => Err(Error::Config(format!("{key} must be set explicitly"))),
            Some((line, v)) => v.parse().map_err(|_| Error::Config(format!("line {line}: bad value `{v}` for {key}"))),
        }
    }

    fn list<const N: usize>(&mut self, key: &str, default: [f64; N]) -> Result<[f64; N]> {
        let Some((line, v)) = self.take(key) else {
            return Ok(default);
        };
        let parts: Vec<f64> = v
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("line {line}: bad list `{v}` for {key}")))?;
        parts.try_into().map_err(|_| Error::Config(format!("line {line}: {key} needs {N} comma-separated numbers")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Table::parse(text)?;
        let d = StudyConfig::default();
        let render_size = t.get("study.render_size", 64usize)?;
        let render_spacing = t.get("study.render_spacing", 1.0f64)?;
        let mesh_size = t.get("study.mesh_size", render_size)?;
        let geometry = |n: usize| Geometry::centered_cube(n, render_spacing).map_err(|e| Error::Config(e.to_string()));
        let study = StudyConfig {
            n_pdm_train: t.get("study.n_pdm_train", d.n_pdm_train)?,
            n_held_out: t.get("study.n_held_out", d.n_held_out)?,
            n_unseen_normal: t.get("study.n_unseen_normal", d.n_unseen_normal)?,
            n_unseen_pathological: t.get("study.n_unseen_pathological", d.n_unseen_pathological)?,
            points: t.get("study.points", d.points)?,
            mean_semi_axes: t.list("study.mean_semi_axes", d.mean_semi_axes)?,
            semi_axis_sigma: t.get("study.semi_axis_sigma", d.semi_axis_sigma)?,
            harmonic_sigma: t.list("study.harmonic_sigma", d.harmonic_sigma)?,
            bump_amplitude_range: t.list("study.bump_amplitude_range", d.bump_amplitude_range)?,
            bump_direction: {
                let [x, y, z] = t.list("study.bump_direction", [d.bump_direction.x, d.bump_direction.y, d.bump_direction.z])?;
                let v = Vec3::new(x, y, z);
                if !(v.norm() > 0.0) {
                    return Err(Error::Config("study.bump_direction must be nonzero".into()));
                }
                v.normalize()
            },
            bump_width: t.get("study.bump_width", d.bump_width)?,
            flip_probability: t.get("study.flip_probability", d.flip_probability)?,
            render_geometry: geometry(render_size)?,
            downsample: t.get("study.downsample", d.downsample)?,
            mesh_geometry: geometry(mesh_size)?,
            foreground: t.get("study.foreground", d.foreground)?,
            background: t.get("study.background", d.background)?,
            edge_softness: t.get("study.edge_softness", d.edge_softness)?,
            noise_sigma: t.get("study.noise_sigma", d.noise_sigma)?,
            gain_range: t.list("study.gain_range", d.gain_range)?,
            bias_sigma: t.get("study.bias_sigma", d.bias_sigma)?,
        };
        let study_seed = t.required("study.seed")?;
        let corpus = t.take("run.corpus").map(|(_, v)| PathBuf::from(v));
        let out = PathBuf::from(t.get("run.out", "shapeforge-out".to_string())?);
        let variance_target = t.get("pdm.variance_target", 0.99)?;
        let max_modes = t.get("pdm.max_modes", 20usize)?;
        let reject_threshold = match t.take("augment.reject_threshold") {
            None => None,
            Some((_, v)) if v == "auto" => None,
            Some((line, v)) => {
                Some(v.parse().map_err(|_| Error::Config(format!("line {line}: bad value `{v}` for augment.reject_threshold")))?)
            }
        };
        let augment = AugmentConfig {
            n_samples: t.get("augment.n_samples", 2000usize)?,
            reject_threshold: reject_threshold.unwrap_or(0.0),
            seed: t.required("augment.seed")?,
            tps_regularization: t.get("augment.tps_regularization", 0.0)?,
        };
        let val_fraction = t.get("augment.val_fraction", 0.2)?;
        let net_width = t.get("net.width", 8usize)?;
        let net_hidden = t.get("net.hidden", 128usize)?;
        let td = TrainConfig::default();
        let train_seed: u64 = t.required("train.seed")?;
        let train = TrainConfig {
            epochs: t.get("train.epochs", td.epochs)?,
            batch_size: t.get("train.batch_size", td.batch_size)?,
            lr: t.get("train.lr", td.lr)?,
            eps: t.get("train.eps", td.eps)?,
            seed: train_seed,
        };
        let init_seed = t.get("train.init_seed", train_seed.wrapping_add(1))?;
        let histogram_bins = t.get("eval.histogram_bins", 20usize)?;
        let md = MlpConfig::default();
        let downstream_seed: u64 = t.required("downstream.seed")?;
        let downstream = DownstreamConfig {
            mlp: MlpConfig {
                hidden: t.get("downstream.hidden", md.hidden)?,
                train: TrainConfig {
                    epochs: t.get("downstream.epochs", md.train.epochs)?,
                    batch_size: t.get("downstream.batch_size", md.train.batch_size)?,
                    lr: t.get("downstream.lr", md.train.lr)?,
                    eps: md.train.eps,
                    seed: downstream_seed,
                },
                init_seed: downstream_seed,
            },
            bound: t.get("downstream.bound", crate::evalstats::DEFAULT_TOST_BOUND)?,
            alpha: t.get("downstream.alpha", 0.05)?,
        };
        if let Some((k, (line, _))) = t.entries.iter().next() {
            return Err(Error::Config(format!("line {line}: unknown key `{k}`")));
        }
        let cfg = Self {
            study,
            study_seed,
            render_size,
            render_spacing,
            mesh_size,
            corpus,
            out,
            variance_target,
            max_modes,
            reject_threshold,
            augment,
            val_fraction,
            net_width,
            net_hidden,
            train,
            init_seed,
            histogram_bins,
            downstream,
            sha256: sha256_hex(text.as_bytes()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.study.n_pdm_train < 2 {
            return bad("study.n_pdm_train must be at least 2".into());
        }
        if self.study.points < 4 {
            return bad("study.points must be at least 4".into());
        }
        if self.study.downsample == 0 || self.render_size % self.study.downsample != 0 {
            return bad("study.downsample must divide study.render_size".into());
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return bad("pdm.variance_target must lie in (0, 1]".into());
        }
        if self.max_modes == 0 {
            return bad("pdm.max_modes must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("augment.val_fraction must lie in [0, 1)".into());
        }
        if self.histogram_bins == 0 {
            return bad("eval.histogram_bins must be at least 1".into());
        }
        if self.net_width == 0 || self.net_hidden == 0 {
            return bad("net.width and net.hidden must be positive".into());
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.lr > 0.0) {
            return bad("train.epochs, train.batch_size and train.lr must be positive".into());
        }
        let mut aug = self.augment.clone();
        if self.reject_threshold.is_none() {
            aug.reject_threshold = 1.0;
        }
        aug.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.out.join("corpus"))
    }

    /// Side length of the network input (scan after downsampling).
    pub fn input_size(&self) -> usize {
        self.render_size / self.study.downsample
    }

    pub fn net_spec(&self, m: usize) -> Result<NetSpec> {
        NetSpec::loadings_regressor([self.input_size(); 3], m, self.net_width, self.net_hidden)
    }
}
