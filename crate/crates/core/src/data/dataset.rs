//! In-memory datasets: loading from a manifest, batching and splitting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, ManifestHeader};
use super::tensor_file::{read_tensors, NamedTensor, TensorData};
use crate::error::{Result, VigError};
use crate::model::Task;
use crate::tensor::{Real, Tensor};
use crate::train::Targets;

/// One image, stored `[C,H,W]` row-major, with its sorted label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub task: Task,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            task: self.task,
            samples: Vec::new(),
        }
    }

    /// Multi-hot row of one sample.
    pub fn label_row(&self, i: usize) -> Vec<u8> {
        let mut row = vec![0u8; self.num_classes];
        for &c in &self.samples[i].labels {
            row[c] = 1;
        }
        row
    }

    /// Stacks the selected samples into `[B,C,H,W]` and matching targets.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<(Tensor<T>, Targets)> {
        if indices.is_empty() {
            return Err(VigError::Usage("empty batch".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| VigError::Usage(format!("sample index {i} out of range")))?;
            data.extend(s.pixels.iter().map(|&v| T::lit(v as f64)));
        }
        let x = Tensor::new(data, &[indices.len(), self.channels, self.height, self.width])?;
        let rows: Vec<Vec<u8>> = indices.iter().map(|&i| self.label_row(i)).collect();
        let refs: Vec<&[u8]> = rows.iter().map(Vec::as_slice).collect();
        Ok((x, Targets::from_rows(self.task, &refs)?))
    }

    /// Label sets of every sample, in order.
    pub fn label_sets(&self) -> Vec<Vec<usize>> {
        self.samples.iter().map(|s| s.labels.clone()).collect()
    }
}

/// Splits `order` into consecutive batches of `batch_size`. A trailing
/// single-sample batch is merged into the one before it, since batch
/// statistics need at least two samples.
pub fn plan_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let bs = batch_size.max(1);
    let mut out: Vec<Vec<usize>> = order.chunks(bs).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

fn band_plane(t: &NamedTensor, sample: &str) -> Result<(usize, usize, Vec<f32>)> {
    let dims: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
    let (h, w) = match dims.as_slice() {
        [h, w] | [1, h, w] => (*h, *w),
        _ => {
            return Err(VigError::Data(format!(
                "{sample}: band '{}' has shape {:?}, expected [H,W]",
                t.name, dims
            )))
        }
    };
    let v = match &t.data {
        TensorData::F32(v) => v.clone(),
        TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        TensorData::U8(_) => {
            return Err(VigError::Data(format!("{sample}: band '{}' is not real-valued", t.name)))
        }
    };
    Ok((h, w, v))
}

fn resample(h: usize, w: usize, plane: Vec<f32>, out_h: usize, out_w: usize) -> Result<Vec<f32>> {
    if (h, w) == (out_h, out_w) {
        return Ok(plane);
    }
    Ok(Tensor::new(plane, &[1, 1, h, w])?.bilinear_resize(out_h, out_w)?.to_vec())
}

/// Assembles one `[C,H,W]` image from the tensors of a sample file.
///
/// Bands are picked by name when the header lists them, otherwise a single
/// `[C,h,w]` tensor or all tensors in file order are used. Each band is
/// resampled bilinearly to the declared grid.
pub fn assemble_image(header: &ManifestHeader, tensors: &[NamedTensor], sample: &str) -> Result<Vec<f32>> {
    let (c, hh, ww) = (header.channels, header.height, header.width);
    let planes: Vec<(usize, usize, Vec<f32>)> = match &header.bands {
        Some(names) => names
            .iter()
            .map(|n| {
                let t = tensors
                    .iter()
                    .find(|t| &t.name == n)
                    .ok_or_else(|| VigError::Data(format!("{sample}: missing band '{n}'")))?;
                band_plane(t, sample)
            })
            .collect::<Result<_>>()?,
        None if tensors.len() == 1 && tensors[0].dims.len() == 3 && tensors[0].dims[0] as usize == c && c > 1 => {
            let t = &tensors[0];
            let (h, w) = (t.dims[1] as usize, t.dims[2] as usize);
            let v = match &t.data {
                TensorData::F32(v) => v.clone(),
                TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
                TensorData::U8(_) => return Err(VigError::Data(format!("{sample}: image is not real-valued"))),
            };
            v.chunks_exact(h * w).map(|p| (h, w, p.to_vec())).collect()
        }
        None => tensors.iter().map(|t| band_plane(t, sample)).collect::<Result<_>>()?,
    };
    if planes.len() != c {
        return Err(VigError::Data(format!(
            "{sample}: {} bands found, manifest declares {c}",
            planes.len()
        )));
    }
    let mut out = Vec::with_capacity(c * hh * ww);
    for (h, w, p) in planes {
        if h == 0 || w == 0 {
            return Err(VigError::Data(format!("{sample}: empty band")));
        }
        out.extend(resample(h, w, p, hh, ww)?);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(VigError::Data(format!("{sample}: non-finite pixel values")));
    }
    Ok(out)
}

/// Loads every sample listed in the manifest. Paths are relative to the
/// manifest's directory.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::read(manifest_path)?;
    load_manifest(&manifest, manifest_path.parent().unwrap_or(Path::new(".")))
}

/// Loads the samples of an already parsed manifest, resolving record
/// paths against `root`.
pub fn load_manifest(manifest: &Manifest, root: &Path) -> Result<Dataset> {
    let h = &manifest.header;
    let samples = manifest
        .records
        .iter()
        .map(|r| {
            let tensors = read_tensors(root.join(&r.path))
                .map_err(|e| VigError::Data(format!("{}: {e}", r.path)))?;
            Ok(Sample {
                id: r.path.clone(),
                pixels: assemble_image(h, &tensors, &r.path)?,
                labels: r.labels.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(VigError::Data("manifest lists no samples".into()));
    }
    Ok(Dataset {
        channels: h.channels,
        height: h.height,
        width: h.width,
        num_classes: h.classes,
        task: h.task,
        samples,
    })
}

/// Sizes of a train/val/test split: validation and test get the floor of
/// their share, train takes the remainder.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(VigError::Config(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let share = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let (val, test) = (share(fractions[1]), share(fractions[2]));
    Ok([n - val - test, val, test])
}

/// Seeded random split into (train, val, test).
pub fn split_dataset(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [tr, va, _] = split_sizes(ds.len(), fractions)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((
        ds.subset(&order[..tr]),
        ds.subset(&order[tr..tr + va]),
        ds.subset(&order[tr + va..]),
    ))
}
