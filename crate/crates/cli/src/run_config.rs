//! Sectioned `key = value` run configuration.
//!
//! ```text
//! [model]
//! stage_dims = 32,64,128
//! [train]
//! max_epochs = 20
//! [data]
//! manifest = data/manifest.txt
//! bands = b00,b01,b02
//! split_seed = 0
//! fractions = 0.7,0.15,0.15
//! [output]
//! dir = runs/a
//! ```
//!
//! Model keys left unset are taken from the dataset (`in_channels`,
//! `height`, `width`, `num_classes`, `task`) or from the model defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use vig_core::train::TrainConfig;
use vig_core::{ModelConfig, Task};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    /// Overrides the band list of the manifest header.
    pub bands: Option<Vec<String>>,
    pub split_seed: u64,
    pub fractions: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            bands: None,
            split_seed: 0,
            fractions: [0.7, 0.15, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    /// Model overrides in file order, applied on top of the dataset layout.
    pub model: Vec<(String, String)>,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: Option<PathBuf>,
}

fn line_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("config line {line}: {msg}"))
}

impl RunConfig {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        // catches unknown or malformed model keys before any data is read
        let mut probe = ModelConfig::new(1, (4, 4), 1, Task::Multiclass);
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["model", "train", "data", "output"].contains(&name) {
                    return Err(line_err(ln, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some(sec) = section.as_deref() else {
                return Err(line_err(ln, "key outside of a [section]"));
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| line_err(ln, format!("expected 'key = value', got '{line}'")))?;
            if !seen.insert(format!("{sec}.{key}")) {
                return Err(line_err(ln, format!("duplicate key '{key}' in [{sec}]")));
            }
            let wrap = |e: vig_core::VigError| line_err(ln, e.to_string().trim_start_matches("usage error: "));
            match sec {
                "model" => {
                    probe.set(key, value).map_err(wrap)?;
                    cfg.model.push((key.to_string(), value.to_string()));
                }
                "train" => cfg.train.set(key, value).map_err(wrap)?,
                "data" => cfg.data.set(key, value, base).map_err(|m| line_err(ln, m))?,
                _ => match key {
                    "dir" => cfg.output = Some(base.join(value)),
                    _ => return Err(line_err(ln, format!("unknown output key '{key}'"))),
                },
            }
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Builds the model configuration for a dataset layout and applies the
    /// overrides.
    pub fn model_config(
        &self,
        channels: usize,
        hw: (usize, usize),
        classes: usize,
        task: Task,
    ) -> Result<ModelConfig, CliError> {
        let mut m = ModelConfig::new(channels, hw, classes, task);
        for (k, v) in &self.model {
            m.set(k, v).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(m)
    }

    /// Every setting with defaults expanded, in the same text format.
    pub fn render(&self, model: &ModelConfig) -> String {
        let mut s = String::from("[model]\n");
        for (k, v) in model.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n[train]\n");
        for (k, v) in self.train.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        let d = &self.data;
        s.push_str("\n[data]\n");
        if let Some(m) = &d.manifest {
            let _ = writeln!(s, "manifest = {}", m.display());
        }
        if let Some(b) = &d.bands {
            let _ = writeln!(s, "bands = {}", b.join(","));
        }
        let _ = writeln!(s, "split_seed = {}", d.split_seed);
        let f = d.fractions;
        let _ = writeln!(s, "fractions = {},{},{}", f[0], f[1], f[2]);
        if let Some(o) = &self.output {
            let _ = writeln!(s, "\n[output]\ndir = {}", o.display());
        }
        s
    }
}

impl DataConfig {
    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        match key {
            "manifest" => self.manifest = Some(base.join(value)),
            "bands" => {
                let b: Vec<String> = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                self.bands = (!b.is_empty()).then_some(b);
            }
            "split_seed" => {
                self.split_seed = value.parse().map_err(|_| format!("split_seed: cannot parse '{value}'"))?
            }
            "fractions" => {
                let v: Vec<f64> = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| format!("fractions: '{value}' is not a list of numbers"))?;
                self.fractions = v
                    .try_into()
                    .map_err(|_| format!("fractions: need train,val,test, got '{value}'"))?;
            }
            _ => return Err(format!("unknown data key '{key}'")),
        }
        Ok(())
    }
}
