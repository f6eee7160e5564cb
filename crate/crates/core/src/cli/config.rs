//! Run configuration file.
//!
//! ```text
//! # comment
//! [data]
//! input = runs/synth.neeg
//! split = 70,15,15
//!
//! [model]
//! depth = 9
//! n_train = auto
//!
//! [train]
//! lr = 0.0001
//! folds = 5
//!
//! [output]
//! checkpoint = runs/model.nlmd
//! metrics = runs/metrics.txt
//! ```
//!
//! Every key is optional; unknown sections and keys are errors.

use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub split: (u32, u32, u32),
    pub model: ModelConfig,
    /// `None` derives the training-set size from the data.
    pub n_train: Option<usize>,
    pub train: TrainConfig,
    pub folds: usize,
    pub jobs: usize,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            split: (70, 15, 15),
            model: ModelConfig::default(),
            n_train: None,
            train: TrainConfig::default(),
            folds: 5,
            jobs: 1,
            checkpoint: None,
            metrics: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_split(value: &str) -> Result<(u32, u32, u32)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts[..] {
        [a, b, c] => Ok((parse("split", a)?, parse("split", b)?, parse("split", c)?)),
        _ => Err(Error::Config(format!(
            "split: expected three comma-separated ratios, got {value:?}"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["data", "model", "train", "output"].contains(&section.as_str()) {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{section}]",
                        n + 1
                    )));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value",
                    n + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.set(&section, key, value).map_err(|e| {
                Error::Config(format!(
                    "line {}: {}",
                    n + 1,
                    e.to_string().trim_start_matches("config error: ")
                ))
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Assigns one `section.key`.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match (section, key) {
            ("data", "input") => self.input = Some(value.into()),
            ("data", "split") => self.split = parse_split(value)?,
            ("model", "channels") => m.channels = parse(key, value)?,
            ("model", "samples") => m.samples = parse(key, value)?,
            ("model", "depth") => m.depth = parse(key, value)?,
            ("model", "temporal_kernels") => m.temporal_kernels = parse(key, value)?,
            ("model", "temporal_len") => m.temporal_len = parse(key, value)?,
            ("model", "spatial_kernels") => m.spatial_kernels = parse(key, value)?,
            ("model", "depth_attn_kernel") => m.depth_attn_kernel = parse(key, value)?,
            ("model", "attn_hidden") => m.attn_hidden = parse(key, value)?,
            ("model", "n_classes") => m.n_classes = parse(key, value)?,
            ("model", "fs_hz") => m.fs_hz = parse(key, value)?,
            ("model", "n_train") => {
                self.n_train = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            ("model", "use_batchnorm") => m.use_batchnorm = parse_bool(key, value)?,
            ("model", "seed") => m.seed = parse(key, value)?,
            ("train", "epochs") => t.epochs = parse(key, value)?,
            ("train", "batch_size") => t.batch_size = parse(key, value)?,
            ("train", "lr") => t.adam.lr = parse(key, value)?,
            ("train", "beta1") => t.adam.beta1 = parse(key, value)?,
            ("train", "beta2") => t.adam.beta2 = parse(key, value)?,
            ("train", "eps") => t.adam.eps = parse(key, value)?,
            ("train", "seed") => t.seed = parse(key, value)?,
            ("train", "shuffle") => t.shuffle = parse_bool(key, value)?,
            ("train", "stop_at_perfect_val") => t.stop_at_perfect_val = parse_bool(key, value)?,
            ("train", "folds") => self.folds = parse(key, value)?,
            ("train", "jobs") => self.jobs = parse(key, value)?,
            ("output", "checkpoint") => self.checkpoint = Some(value.into()),
            ("output", "metrics") => self.metrics = Some(value.into()),
            ("", _) => {
                return Err(Error::Config(format!(
                    "key {key:?} appears before any section"
                )))
            }
            _ => return Err(Error::Config(format!("unknown key {key:?} in [{section}]"))),
        }
        Ok(())
    }

    /// The configuration in the file syntax; parsing it gives back `self`.
    pub fn to_ini(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut s = String::from("[data]\n");
        if let Some(p) = path(&self.input) {
            let _ = writeln!(s, "input = {p}");
        }
        let _ = writeln!(
            s,
            "split = {},{},{}",
            self.split.0, self.split.1, self.split.2
        );
        let _ = writeln!(s, "\n[model]");
        for (k, v) in [
            ("channels", m.channels),
            ("samples", m.samples),
            ("depth", m.depth),
            ("temporal_kernels", m.temporal_kernels),
            ("temporal_len", m.temporal_len),
            ("spatial_kernels", m.spatial_kernels),
            ("depth_attn_kernel", m.depth_attn_kernel),
            ("attn_hidden", m.attn_hidden),
            ("n_classes", m.n_classes),
            ("fs_hz", m.fs_hz),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(
            s,
            "n_train = {}",
            self.n_train.map_or("auto".into(), |n| n.to_string())
        );
        let _ = writeln!(s, "use_batchnorm = {}", m.use_batchnorm);
        let _ = writeln!(s, "seed = {}", m.seed);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "lr = {:?}", t.adam.lr);
        let _ = writeln!(s, "beta1 = {:?}", t.adam.beta1);
        let _ = writeln!(s, "beta2 = {:?}", t.adam.beta2);
        let _ = writeln!(s, "eps = {:?}", t.adam.eps);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "shuffle = {}", t.shuffle);
        let _ = writeln!(s, "stop_at_perfect_val = {}", t.stop_at_perfect_val);
        let _ = writeln!(s, "folds = {}", self.folds);
        let _ = writeln!(s, "jobs = {}", self.jobs);
        let _ = writeln!(s, "\n[output]");
        if let Some(p) = path(&self.checkpoint) {
            let _ = writeln!(s, "checkpoint = {p}");
        }
        if let Some(p) = path(&self.metrics) {
            let _ = writeln!(s, "metrics = {p}");
        }
        s
    }

    /// Flat `section.key=value` pairs for metrics headers.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut section = String::new();
        self.to_ini()
            .lines()
            .filter_map(|l| {
                if let Some(name) = l.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                    section = name.to_string();
                    return None;
                }
                let (k, v) = l.split_once(" = ")?;
                Some((format!("config.{section}.{k}"), v.to_string()))
            })
            .collect()
    }

    /// Checks values and paths before any computation starts.
    pub fn validate(&self, needs_input: bool) -> Result<()> {
        let mut model = self.model.clone();
        if let Some(n) = self.n_train {
            model.n_train = n;
        }
        model.validate()?;
        self.train.validate(self.model.use_batchnorm)?;
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.split.0 == 0 {
            return Err(Error::Config(
                "the training share of the split must be positive".into(),
            ));
        }
        match &self.input {
            Some(p) if !p.is_file() => {
                return Err(Error::Config(format!(
                    "input file {} does not exist",
                    p.display()
                )))
            }
            None if needs_input => return Err(Error::Config("no input data file given".into())),
            _ => {}
        }
        for p in [&self.checkpoint, &self.metrics].into_iter().flatten() {
            check_output_path(p)?;
        }
        Ok(())
    }
}

/// Fails unless the parent directory of `path` exists.
pub fn check_output_path(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Config(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg);
    }

    #[test]
    fn file_values_override_defaults() {
        let cfg = RunConfig::parse("[model]\ndepth = 4 # fewer\n[train]\nlr=0.001\n").unwrap();
        assert_eq!(cfg.model.depth, 4);
        assert_eq!(cfg.train.adam.lr, 0.001);
        assert_eq!(cfg.model.channels, 17);
    }

    #[test]
    fn unknown_entries_rejected() {
        assert!(matches!(
            RunConfig::parse("[model]\ndepthh = 4\n"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::parse("[extra]\n").is_err());
        assert!(RunConfig::parse("depth = 4\n").is_err());
        assert!(RunConfig::parse("[train]\nlr = fast\n").is_err());
        assert!(RunConfig::parse("[train]\nshuffle\n").is_err());
    }
}
