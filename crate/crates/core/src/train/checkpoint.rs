//! Model, optimizer and metadata persistence in the tensor container.
//!
//! Entry names: `param/<name>`, `buffer/<norm>.running_mean|running_var`,
//! `opt/step`, `opt/<name>.m|v`, `meta/model_config` (text),
//! `meta/train_config` (text), `meta/epoch`, `meta/best_val_loss`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::optim::{AdamW, AdamWConfig, Moments};
use crate::data::tensor_file::{decode, encode, NamedTensor, TensorData};
use crate::error::{Result, VigError};
use crate::model::{ModelConfig, VigModel};
use crate::nn::Parameterized;
use crate::tensor::{BatchNormState, Real, Tensor};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub best_val_loss: f64,
    /// Free-form echo of the training configuration.
    pub train_config: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Real> {
    pub model: VigModel<T>,
    pub optimizer: Option<AdamW<T>>,
    pub meta: CheckpointMeta,
}

fn reals<T: Real>(name: String, shape: &[usize], data: &[T]) -> NamedTensor {
    let dims = shape.iter().map(|&d| d as u64).collect();
    let data = match T::DTYPE_CODE {
        1 => TensorData::F32(data.iter().map(|v| v.as_f64() as f32).collect()),
        _ => TensorData::F64(data.iter().map(|v| v.as_f64()).collect()),
    };
    NamedTensor::new(name, dims, data)
}

fn text(name: &str, s: &str) -> NamedTensor {
    NamedTensor::new(name, vec![s.len() as u64], TensorData::U8(s.as_bytes().to_vec()))
}

fn scalar(name: &str, v: f64) -> NamedTensor {
    NamedTensor::new(name, vec![1], TensorData::F64(vec![v]))
}

pub fn encode_checkpoint<T: Real>(
    model: &VigModel<T>,
    optimizer: Option<&AdamW<T>>,
    meta: &CheckpointMeta,
) -> Result<Vec<u8>> {
    let mut out = vec![
        text("meta/model_config", &model.config.to_text()),
        text("meta/train_config", &meta.train_config),
        scalar("meta/epoch", meta.epoch as f64),
        scalar("meta/best_val_loss", meta.best_val_loss),
    ];
    for (name, p) in model.named_params() {
        out.push(reals(format!("param/{name}"), p.shape(), p.data()));
    }
    for (name, bn) in model.named_norms() {
        let st = bn.state();
        let c = st.running_mean.len();
        out.push(reals(format!("buffer/{name}.running_mean"), &[c], &st.running_mean));
        out.push(reals(format!("buffer/{name}.running_var"), &[c], &st.running_var));
    }
    if let Some(opt) = optimizer {
        let c = &opt.config;
        out.push(NamedTensor::new(
            "opt/hyper",
            vec![5],
            TensorData::F64(vec![c.lr, c.beta1, c.beta2, c.eps, c.weight_decay]),
        ));
        out.push(scalar("opt/step", opt.step as f64));
        let mut names: Vec<&String> = opt.state.keys().collect();
        names.sort();
        for name in names {
            let mo = &opt.state[name];
            out.push(reals(format!("opt/{name}.m"), &[mo.m.len()], &mo.m));
            out.push(reals(format!("opt/{name}.v"), &[mo.v.len()], &mo.v));
        }
    }
    encode(&out)
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    model: &VigModel<T>,
    optimizer: Option<&AdamW<T>>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, optimizer, meta)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn values<T: Real>(t: &NamedTensor) -> Result<Vec<T>> {
    match &t.data {
        TensorData::F32(v) if T::DTYPE_CODE == 1 => Ok(v.iter().map(|&x| T::lit(x as f64)).collect()),
        TensorData::F64(v) if T::DTYPE_CODE == 2 => Ok(v.iter().map(|&x| T::lit(x)).collect()),
        _ => Err(VigError::Data(format!(
            "entry '{}' has dtype code {}, expected {} ({})",
            t.name,
            t.data.dtype_code(),
            T::DTYPE_CODE,
            T::NAME
        ))),
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let entries = decode(bytes)?;
    let mut by_name: HashMap<&str, &NamedTensor> = entries.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut take = |name: &str| -> Result<&NamedTensor> {
        by_name
            .remove(name)
            .ok_or_else(|| VigError::Data(format!("checkpoint lacks entry '{name}'")))
    };
    let cfg_text = take("meta/model_config")?
        .as_text()
        .ok_or_else(|| VigError::Data("meta/model_config is not text".into()))?
        .to_string();
    let config = ModelConfig::from_text(&cfg_text)?;
    let train_config = take("meta/train_config")?.as_text().unwrap_or_default().to_string();
    let num = |t: &NamedTensor| {
        t.as_f64_scalar()
            .ok_or_else(|| VigError::Data(format!("'{}' is not a scalar", t.name)))
    };
    let meta = CheckpointMeta {
        epoch: num(take("meta/epoch")?)? as usize,
        best_val_loss: num(take("meta/best_val_loss")?)?,
        train_config,
    };

    let mut model = VigModel::<T>::build(&config, 0)?;
    for (name, p) in model.named_params_mut() {
        let e = take(&format!("param/{name}"))?;
        let shape: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
        if shape != p.shape() {
            return Err(VigError::Data(format!(
                "param '{name}' has shape {shape:?}, model expects {:?}",
                p.shape()
            )));
        }
        *p = Tensor::param(values(e)?, &shape)?;
    }
    for (name, bn) in model.named_norms() {
        let mean = values::<T>(take(&format!("buffer/{name}.running_mean"))?)?;
        let var = values::<T>(take(&format!("buffer/{name}.running_var"))?)?;
        let mut st: BatchNormState<T> = bn.state();
        if mean.len() != st.running_mean.len() || var.len() != st.running_var.len() {
            return Err(VigError::Data(format!("buffer '{name}' has the wrong length")));
        }
        st.running_mean = mean;
        st.running_var = var;
        bn.set_state(st);
    }

    let optimizer = match take("opt/hyper") {
        Err(_) => None,
        Ok(h) => {
            let TensorData::F64(h) = &h.data else {
                return Err(VigError::Data("opt/hyper must be f64".into()));
            };
            let [lr, beta1, beta2, eps, weight_decay] = h[..] else {
                return Err(VigError::Data("opt/hyper must hold 5 values".into()));
            };
            let mut opt = AdamW::new(AdamWConfig {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            });
            opt.step = num(take("opt/step")?)? as u64;
            let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
            for name in names {
                let (Ok(m), Ok(v)) = (take(&format!("opt/{name}.m")), take(&format!("opt/{name}.v"))) else {
                    continue;
                };
                opt.state.insert(name, Moments { m: values(m)?, v: values(v)? });
            }
            Some(opt)
        }
    };
    if let Some(extra) = by_name.keys().min() {
        return Err(VigError::Data(format!("unexpected checkpoint entry '{extra}'")));
    }
    Ok(Checkpoint { model, optimizer, meta })
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode_checkpoint(&fs::read(path)?)
}
