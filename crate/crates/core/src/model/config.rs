use std::fmt;
use std::str::FromStr;

use crate::error::{Result, VigError};

/// Classification regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Exactly one class per image; softmax outputs, argmax decision.
    Multiclass,
    /// Any subset of classes; independent sigmoid outputs, threshold decision.
    Multilabel,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Multiclass => "multiclass",
            Task::Multilabel => "multilabel",
        })
    }
}

impl FromStr for Task {
    type Err = VigError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(Task::Multiclass),
            "multilabel" => Ok(Task::Multilabel),
            other => Err(VigError::Config(format!("unknown task '{other}'"))),
        }
    }
}

pub const NUM_STAGES: usize = 3;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// (height, width) in pixels.
    pub input_hw: (usize, usize),
    pub stage_dims: Vec<usize>,
    pub stage_depths: Vec<usize>,
    pub heads: usize,
    /// Neighbors per patch in every Grapher layer.
    pub k: usize,
    pub num_classes: usize,
    pub task: Task,
    pub head_hidden: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub const DEFAULT_DIMS: [usize; 3] = [128, 256, 512];
    pub const DEFAULT_DEPTHS: [usize; 3] = [3, 3, 1];
    pub const DEFAULT_HEADS: usize = 16;
    pub const DEFAULT_K: usize = 9;
    pub const DEFAULT_HEAD_HIDDEN: usize = 1024;

    pub fn new(in_channels: usize, input_hw: (usize, usize), num_classes: usize, task: Task) -> Self {
        ModelConfig {
            in_channels,
            input_hw,
            stage_dims: Self::DEFAULT_DIMS.to_vec(),
            stage_depths: Self::DEFAULT_DEPTHS.to_vec(),
            heads: Self::DEFAULT_HEADS,
            k: Self::DEFAULT_K,
            num_classes,
            task,
            head_hidden: Self::DEFAULT_HEAD_HIDDEN,
            dropout: 0.0,
        }
    }

    /// Checks every structural constraint, naming the first one that fails.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(VigError::Config(msg));
        if self.stage_dims.len() != NUM_STAGES || self.stage_depths.len() != NUM_STAGES {
            return fail(format!(
                "stage_dims and stage_depths must both have {NUM_STAGES} entries, got {} and {}",
                self.stage_dims.len(),
                self.stage_depths.len()
            ));
        }
        if self.in_channels == 0 || self.num_classes == 0 || self.head_hidden == 0 {
            return fail("in_channels, num_classes and head_hidden must be positive".into());
        }
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return fail(format!("input_hw {h}x{w} must be positive and divisible by 4 (stem stride)"));
        }
        if !self.stage_dims[0].is_multiple_of(2) {
            return fail(format!("stage_dims[0] = {} must be even (stem halves it)", self.stage_dims[0]));
        }
        if self.heads == 0 {
            return fail("heads must be positive".into());
        }
        for (s, &d) in self.stage_dims.iter().enumerate() {
            if d == 0 || (2 * d) % self.heads != 0 || d % self.heads != 0 {
                return fail(format!(
                    "stage {} width {d}: 2*{d} and {d} must be divisible by heads = {}",
                    s + 1,
                    self.heads
                ));
            }
        }
        if self.stage_depths.contains(&0) {
            return fail("every stage needs at least one block".into());
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Patch grid (rows, cols) of each stage. Odd grids are padded to even
    /// before downsampling, so the next grid is the ceiling of half.
    pub fn stage_grids(&self) -> [(usize, usize); NUM_STAGES] {
        let g0 = (self.input_hw.0 / 4, self.input_hw.1 / 4);
        let half = |(a, b): (usize, usize)| (a.div_ceil(2), b.div_ceil(2));
        let g1 = half(g0);
        [g0, g1, half(g1)]
    }

    pub fn stage_patches(&self) -> [usize; NUM_STAGES] {
        self.stage_grids().map(|(a, b)| a * b)
    }

    /// Neighbor count actually used in a stage: `min(k, patches - 1)`.
    pub fn effective_k(&self, stage: usize) -> usize {
        self.k.min(self.stage_patches()[stage] - 1)
    }
}

/// Parses a comma-separated list of integers.
pub(crate) fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| VigError::Usage(format!("{key}: '{value}' is not a comma-separated integer list")))
        })
        .collect()
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse::<V>()
        .map_err(|_| VigError::Usage(format!("{key}: cannot parse '{value}'")))
}

fn join_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Every field as `(key, value)` text, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("in_channels", self.in_channels.to_string()),
            ("height", self.input_hw.0.to_string()),
            ("width", self.input_hw.1.to_string()),
            ("stage_dims", join_list(&self.stage_dims)),
            ("stage_depths", join_list(&self.stage_depths)),
            ("heads", self.heads.to_string()),
            ("k", self.k.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("task", self.task.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("dropout", self.dropout.to_string()),
        ]
    }

    /// Sets one field from text. Unknown keys are a usage error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "in_channels" => self.in_channels = parse_value(key, value)?,
            "height" => self.input_hw.0 = parse_value(key, value)?,
            "width" => self.input_hw.1 = parse_value(key, value)?,
            "stage_dims" => self.stage_dims = parse_list(key, value)?,
            "stage_depths" => self.stage_depths = parse_list(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "task" => self.task = value.trim().parse()?,
            "head_hidden" => self.head_hidden = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            _ => return Err(VigError::Usage(format!("unknown model key '{key}'"))),
        }
        Ok(())
    }

    /// `key = value` lines, one per field.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ModelConfig::new(1, (4, 4), 1, Task::Multiclass);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| VigError::Usage(format!("expected key = value, got '{line}'")))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }
}
