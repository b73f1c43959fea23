//! Seeded synthetic datasets with class-specific spectral and spatial
//! signatures, for smoke tests and overfitting checks.
//!
//! Class `c` adds, on band `b`, a constant offset of +-0.5 chosen by the
//! `b`-th base-`L` digit of `c` plus a cosine pattern whose frequency
//! depends on `c`. Pixels get N(0, 0.1) noise. Multilabel images superimpose
//! the templates of one to three classes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{Dataset, Sample};
use super::manifest::{Manifest, ManifestHeader, ManifestRecord};
use super::tensor_file::{write_tensors, NamedTensor, TensorData};
use crate::error::{Result, VigError};
use crate::model::Task;

pub const NOISE_STD: f64 = 0.1;
pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub task: Task,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.per_class == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(VigError::Config("synthetic dataset sizes must be positive".into()));
        }
        Ok(())
    }
}

fn levels(classes: usize, channels: usize) -> usize {
    let mut l = 2usize;
    while (l as f64).powi(channels as i32) < classes as f64 {
        l += 1;
    }
    l
}

/// Noise-free template of one class, `[C,H,W]`.
pub fn class_template(class: usize, spec: &SynthSpec) -> Vec<f32> {
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let l = levels(spec.num_classes, c);
    let fy = (1 + class % 4) as f64;
    let fx = (1 + (class / 4) % 4) as f64;
    let mut out = Vec::with_capacity(c * h * w);
    for b in 0..c {
        let digit = (class / l.pow(b as u32)) % l;
        let offset = 0.5 * (2.0 * digit as f64 / (l - 1) as f64 - 1.0);
        let phase = b as f64 * PI / 3.0;
        for y in 0..h {
            for x in 0..w {
                let arg = 2.0 * PI * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64) + phase;
                out.push((offset + 0.5 * arg.cos()) as f32);
            }
        }
    }
    out
}

/// Generates the dataset in memory. Samples are ordered class by class.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let templates: Vec<Vec<f32>> = (0..spec.num_classes).map(|c| class_template(c, spec)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let mut samples = Vec::with_capacity(spec.num_classes * spec.per_class);
    for class in 0..spec.num_classes {
        for _ in 0..spec.per_class {
            let mut labels = vec![class];
            if spec.task == Task::Multilabel && spec.num_classes > 1 {
                let extra = rng.gen_range(0..=2usize).min(spec.num_classes - 1);
                let others: Vec<usize> = (0..spec.num_classes).filter(|&c| c != class).collect();
                labels.extend(sample(&mut rng, others.len(), extra).into_iter().map(|i| others[i]));
                labels.sort_unstable();
            }
            let mut pixels: Vec<f32> = (0..templates[0].len())
                .map(|_| noise.sample(&mut rng) as f32)
                .collect();
            for &c in &labels {
                pixels.iter_mut().zip(&templates[c]).for_each(|(p, t)| *p += t);
            }
            samples.push(Sample {
                id: format!("samples/s{:05}.vigt", samples.len()),
                pixels,
                labels,
            });
        }
    }
    Ok(Dataset {
        channels: spec.channels,
        height: spec.height,
        width: spec.width,
        num_classes: spec.num_classes,
        task: spec.task,
        samples,
    })
}

pub fn band_name(b: usize) -> String {
    format!("b{b:02}")
}

/// Writes a dataset as one tensor file per sample (one `[H,W]` tensor per
/// band) plus a manifest, and returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("samples"))?;
    let plane = ds.height * ds.width;
    let mut records = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let rel = format!("samples/s{i:05}.vigt");
        let bands: Vec<NamedTensor> = s
            .pixels
            .chunks_exact(plane)
            .enumerate()
            .map(|(b, p)| {
                NamedTensor::new(
                    band_name(b),
                    vec![ds.height as u64, ds.width as u64],
                    TensorData::F32(p.to_vec()),
                )
            })
            .collect();
        write_tensors(dir.join(&rel), &bands)?;
        records.push(ManifestRecord {
            path: rel,
            labels: s.labels.clone(),
        });
    }
    let manifest = Manifest {
        header: ManifestHeader {
            channels: ds.channels,
            height: ds.height,
            width: ds.width,
            classes: ds.num_classes,
            task: ds.task,
            bands: Some((0..ds.channels).map(band_name).collect()),
        },
        records,
    };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.render())?;
    Ok(path)
}

/// Generates and writes a dataset in one step.
pub fn synthesize_dataset(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    write_dataset(&generate(spec)?, dir)
}
