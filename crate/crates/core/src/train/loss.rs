use crate::error::{Result, VigError};
use crate::model::Task;
use crate::tensor::{sigmoid, softmax_rows};
use crate::tensor::{Real, Tensor};

/// Ground truth for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One class index per sample.
    Classes(Vec<usize>),
    /// Row-major `[batch, classes]` indicator matrix.
    MultiHot { classes: usize, bits: Vec<u8> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::MultiHot { classes, bits } => bits.len() / classes.max(&1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds targets from multi-hot label rows: class indices for
    /// multiclass (each row must hold exactly one positive).
    pub fn from_rows(task: Task, rows: &[&[u8]]) -> Result<Self> {
        let classes = rows.first().map_or(0, |r| r.len());
        match task {
            Task::Multiclass => rows
                .iter()
                .map(|r| {
                    let pos: Vec<usize> = r.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect();
                    match pos.as_slice() {
                        [c] => Ok(*c),
                        _ => Err(VigError::Data(format!(
                            "multiclass label row has {} positives",
                            pos.len()
                        ))),
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map(Targets::Classes),
            Task::Multilabel => Ok(Targets::MultiHot {
                classes,
                bits: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            }),
        }
    }
}

/// Mean softmax cross-entropy for multiclass, mean per-class sigmoid binary
/// cross-entropy for multilabel. Both are evaluated in logit space.
pub fn loss<T: Real>(task: Task, logits: &Tensor<T>, targets: &Targets) -> Result<Tensor<T>> {
    logits.expect_rank("loss", 2)?;
    let (b, n) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != b {
        return Err(VigError::Data(format!("{} targets for a batch of {b}", targets.len())));
    }
    match (task, targets) {
        (Task::Multiclass, Targets::Classes(cls)) => softmax_cross_entropy(logits, cls),
        (Task::Multilabel, Targets::MultiHot { classes, bits }) if *classes == n => {
            bce_with_logits(logits, bits)
        }
        (Task::Multilabel, Targets::MultiHot { classes, .. }) => Err(VigError::Data(format!(
            "targets cover {classes} classes but logits have {n}"
        ))),
        (task, _) => Err(VigError::Data(format!("target kind does not match {task} task"))),
    }
}

pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, classes: &[usize]) -> Result<Tensor<T>> {
    let (b, n) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&bad) = classes.iter().find(|&&c| c >= n) {
        return Err(VigError::Data(format!("class index {bad} out of range for {n} classes")));
    }
    let z = logits.data();
    let mut total = T::zero();
    for (row, &c) in z.chunks_exact(n).zip(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        total = total + (lse - row[c]);
    }
    let inv_b = T::one() / T::lit(b as f64);
    let classes = classes.to_vec();
    Ok(Tensor::from_op(
        "softmax_cross_entropy",
        vec![total * inv_b],
        vec![1],
        vec![logits.clone()],
        Box::new(move |ctx| {
            let mut g = softmax_rows(ctx.inputs[0].data(), n);
            for (row, &c) in g.chunks_exact_mut(n).zip(&classes) {
                row[c] = row[c] - T::one();
            }
            let scale = ctx.grad[0] * inv_b;
            g.iter_mut().for_each(|v| *v = *v * scale);
            vec![Some(g)]
        }),
    ))
}

pub fn bce_with_logits<T: Real>(logits: &Tensor<T>, bits: &[u8]) -> Result<Tensor<T>> {
    if bits.len() != logits.numel() {
        return Err(VigError::Data(format!(
            "{} target bits for {} logits",
            bits.len(),
            logits.numel()
        )));
    }
    if let Some(bad) = bits.iter().find(|&&v| v > 1) {
        return Err(VigError::Data(format!("multilabel target value {bad} is not 0/1")));
    }
    let z = logits.data();
    let total: T = z
        .iter()
        .zip(bits)
        .map(|(&v, &y)| {
            let y = T::lit(y as f64);
            v.max(T::zero()) - v * y + (T::one() + (-v.abs()).exp()).ln()
        })
        .sum();
    let inv = T::one() / T::lit(z.len() as f64);
    let bits = bits.to_vec();
    Ok(Tensor::from_op(
        "bce_with_logits",
        vec![total * inv],
        vec![1],
        vec![logits.clone()],
        Box::new(move |ctx| {
            let scale = ctx.grad[0] * inv;
            vec![Some(
                ctx.inputs[0]
                    .data()
                    .iter()
                    .zip(&bits)
                    .map(|(&v, &y)| (sigmoid(v) - T::lit(y as f64)) * scale)
                    .collect(),
            )]
        }),
    ))
}
