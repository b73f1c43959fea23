use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, NUM_STAGES};
use crate::error::{Result, VigError};
use crate::graph::PatchGraph;
use crate::grapher::{FfnBlock, GrapherBlock};
use crate::nn::{join, zeros_param, BatchNorm, Conv2d, Linear, Parameterized};
use crate::tensor::{Conv2dSpec, Mode, Real, Tensor};

const STRIDE2: Conv2dSpec = Conv2dSpec { stride: 2, pad: 1 };

/// Two stride-2 3x3 conv + norm + relu blocks: C -> D/2 -> D at a quarter of
/// the input resolution.
#[derive(Debug, Clone)]
pub struct Stem<T: Real> {
    pub conv1: Conv2d<T>,
    pub norm1: BatchNorm<T>,
    pub conv2: Conv2d<T>,
    pub norm2: BatchNorm<T>,
}

impl<T: Real> Stem<T> {
    pub fn new(rng: &mut ChaCha8Rng, in_channels: usize, dim: usize) -> Self {
        Stem {
            conv1: Conv2d::new(rng, in_channels, dim / 2, 3, STRIDE2),
            norm1: BatchNorm::new(dim / 2),
            conv2: Conv2d::new(rng, dim / 2, dim, 3, STRIDE2),
            norm2: BatchNorm::new(dim),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        x.expect_rank("stem", 4)?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if h % 4 != 0 || w % 4 != 0 {
            return Err(VigError::Config(format!("stem input {h}x{w} is not divisible by 4")));
        }
        let y = self.norm1.forward(&self.conv1.forward(x)?, mode)?.relu();
        Ok(self.norm2.forward(&self.conv2.forward(&y)?, mode)?.relu())
    }
}

impl<T: Real> Parameterized<T> for Stem<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv1.params(&join(prefix, "conv1"), out);
        self.norm1.params(&join(prefix, "norm1"), out);
        self.conv2.params(&join(prefix, "conv2"), out);
        self.norm2.params(&join(prefix, "norm2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv1.params_mut(&join(prefix, "conv1"), out);
        self.norm1.params_mut(&join(prefix, "norm1"), out);
        self.conv2.params_mut(&join(prefix, "conv2"), out);
        self.norm2.params_mut(&join(prefix, "norm2"), out);
    }

    fn norms<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a BatchNorm<T>)>) {
        self.norm1.norms(&join(prefix, "norm1"), out);
        self.norm2.norms(&join(prefix, "norm2"), out);
    }
}

/// Stride-2 3x3 conv + norm halving each spatial extent (patch count / 4).
#[derive(Debug, Clone)]
pub struct Downsample<T: Real> {
    pub conv: Conv2d<T>,
    pub norm: BatchNorm<T>,
}

impl<T: Real> Downsample<T> {
    pub fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        Downsample {
            conv: Conv2d::new(rng, d_in, d_out, 3, STRIDE2),
            norm: BatchNorm::new(d_out),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        x.expect_rank("downsample", 4)?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(VigError::Config(format!("downsample input grid {h}x{w} must be even")));
        }
        self.norm.forward(&self.conv.forward(x)?, mode)
    }
}

impl<T: Real> Parameterized<T> for Downsample<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv.params(&join(prefix, "conv"), out);
        self.norm.params(&join(prefix, "norm"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv.params_mut(&join(prefix, "conv"), out);
        self.norm.params_mut(&join(prefix, "norm"), out);
    }

    fn norms<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a BatchNorm<T>)>) {
        self.norm.norms(&join(prefix, "norm"), out);
    }
}

/// One Grapher layer followed by its FFN.
#[derive(Debug, Clone)]
pub struct EncoderBlock<T: Real> {
    pub grapher: GrapherBlock<T>,
    pub ffn: FfnBlock<T>,
}

impl<T: Real> Parameterized<T> for EncoderBlock<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.grapher.params(&join(prefix, "grapher"), out);
        self.ffn.params(&join(prefix, "ffn"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.grapher.params_mut(&join(prefix, "grapher"), out);
        self.ffn.params_mut(&join(prefix, "ffn"), out);
    }

    fn norms<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a BatchNorm<T>)>) {
        self.grapher.norms(&join(prefix, "grapher"), out);
    }
}

/// Pooled features -> hidden -> relu -> dropout -> logits.
#[derive(Debug, Clone)]
pub struct Head<T: Real> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> Parameterized<T> for Head<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.fc1.params(&join(prefix, "fc1"), out);
        self.fc2.params(&join(prefix, "fc2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.fc1.params_mut(&join(prefix, "fc1"), out);
        self.fc2.params_mut(&join(prefix, "fc2"), out);
    }
}

/// Adds the learnable per-patch encoding to every image of `[B, N, D]`.
pub fn add_positional_encoding<T: Real>(patches: &Tensor<T>, pe: &Tensor<T>) -> Result<Tensor<T>> {
    patches.add_broadcast_leading(pe)
}

/// What one stage did during an instrumented forward pass.
#[derive(Debug, Clone)]
pub struct StageTrace {
    pub dim: usize,
    pub grid: (usize, usize),
    pub num_patches: usize,
    pub k: usize,
    pub blocks: usize,
    /// KNN graph constructions performed in this stage (per batch).
    pub graphs_built: usize,
    /// The stage's graph for every image of the batch.
    pub graphs: Vec<PatchGraph>,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub stages: Vec<StageTrace>,
    pub downsamples: usize,
    pub batch: usize,
}

impl ForwardTrace {
    /// Graph constructions per image across the whole network.
    pub fn graphs_per_image(&self) -> usize {
        self.stages.iter().map(|s| s.graphs_built).sum()
    }
}

/// The assembled three-stage pyramid encoder with its classification head.
#[derive(Debug)]
pub struct VigModel<T: Real = f32> {
    pub config: ModelConfig,
    pub stem: Stem<T>,
    /// `[patches at stage 1, stage_dims[0]]`.
    pub pos_embed: Tensor<T>,
    pub stages: Vec<Vec<EncoderBlock<T>>>,
    /// Between stages 1->2 and 2->3; the last stage has none.
    pub downsamples: Vec<Downsample<T>>,
    pub head: Head<T>,
    dropout_rng: Mutex<ChaCha8Rng>,
}

impl<T: Real> Clone for VigModel<T> {
    fn clone(&self) -> Self {
        VigModel {
            config: self.config.clone(),
            stem: self.stem.clone(),
            pos_embed: self.pos_embed.clone(),
            stages: self.stages.clone(),
            downsamples: self.downsamples.clone(),
            head: self.head.clone(),
            dropout_rng: Mutex::new(self.dropout_rng.lock().expect("rng lock").clone()),
        }
    }
}

impl<T: Real> VigModel<T> {
    /// Builds and initializes a model. All draws come from one ChaCha8
    /// stream seeded with `seed`, in parameter order.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = &config.stage_dims;
        let stem = Stem::new(&mut rng, config.in_channels, dims[0]);
        let pos_embed = zeros_param(&[config.stage_patches()[0], dims[0]]);
        let mut stages = Vec::with_capacity(NUM_STAGES);
        let mut downsamples = Vec::with_capacity(NUM_STAGES - 1);
        for s in 0..NUM_STAGES {
            let blocks = (0..config.stage_depths[s])
                .map(|_| {
                    Ok(EncoderBlock {
                        grapher: GrapherBlock::new(&mut rng, dims[s], config.heads)?,
                        ffn: FfnBlock::new(&mut rng, dims[s]),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
            if s + 1 < NUM_STAGES {
                downsamples.push(Downsample::new(&mut rng, dims[s], dims[s + 1]));
            }
        }
        let head = Head {
            fc1: Linear::new(&mut rng, dims[NUM_STAGES - 1], config.head_hidden, true),
            fc2: Linear::new(&mut rng, config.head_hidden, config.num_classes, true),
        };
        let dropout_rng = Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d50f));
        Ok(VigModel {
            config: config.clone(),
            stem,
            pos_embed,
            stages,
            downsamples,
            head,
            dropout_rng,
        })
    }

    /// Logits `[B, num_classes]` for images `[B, C, H, W]`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x, mode)?.0)
    }

    /// Forward pass that also reports the per-stage graph structure.
    pub fn forward_traced(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardTrace)> {
        let mut trace = ForwardTrace::default();
        let tokens = self.encode(x, mode, None, &mut trace)?;
        let (h, w) = trace.stages.last().expect("three stages").grid;
        let pooled = tokens.tokens_to_nchw(h, w)?.global_avg_pool()?;
        let mut hidden = self.head.fc1.forward(&pooled)?.relu();
        if mode == Mode::Train && self.config.dropout > 0.0 {
            let mut rng = self.dropout_rng.lock().expect("rng lock");
            hidden = hidden.dropout(self.config.dropout, &mut *rng);
        }
        Ok((self.head.fc2.forward(&hidden)?, trace))
    }

    /// Runs the encoder up to and including the first Grapher layer of
    /// `stage` (0-based) and returns that layer's per-image graphs.
    pub fn stage_graphs(&self, x: &Tensor<T>, stage: usize) -> Result<Vec<PatchGraph>> {
        if stage >= NUM_STAGES {
            return Err(VigError::Usage(format!("stage must be in 1..={NUM_STAGES}, got {}", stage + 1)));
        }
        let mut trace = ForwardTrace::default();
        self.encode(x, Mode::Eval, Some(stage), &mut trace)?;
        Ok(trace.stages.pop().map(|s| s.graphs).unwrap_or_default())
    }

    /// Stem, positional encoding and the Grapher/FFN stages. With
    /// `stop_at = Some(s)` returns right after the first Grapher layer of
    /// stage `s`.
    fn encode(&self, x: &Tensor<T>, mode: Mode, stop_at: Option<usize>, trace: &mut ForwardTrace) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let (h, w) = cfg.input_hw;
        if x.rank() != 4 || x.shape()[1..] != [cfg.in_channels, h, w] {
            return Err(VigError::dim(
                "forward",
                format!("model expects [B, {}, {h}, {w}], got {:?}", cfg.in_channels, x.shape()),
            ));
        }
        trace.batch = x.shape()[0];
        let fmap = self.stem.forward(x, mode)?;
        let (mut gh, mut gw) = (fmap.shape()[2], fmap.shape()[3]);
        let mut tokens = add_positional_encoding(&fmap.nchw_to_tokens()?, &self.pos_embed)?;

        for (s, blocks) in self.stages.iter().enumerate() {
            let k = cfg.effective_k(s);
            let mut graphs: Option<Vec<PatchGraph>> = None;
            let mut built = 0;
            for block in blocks {
                let (t, g) = block.grapher.forward_with(&tokens, k, graphs.as_deref(), mode)?;
                if graphs.is_none() {
                    built += 1;
                    graphs = Some(g);
                }
                if stop_at == Some(s) {
                    trace.stages.push(StageTrace {
                        dim: cfg.stage_dims[s],
                        grid: (gh, gw),
                        num_patches: gh * gw,
                        k,
                        blocks: 1,
                        graphs_built: built,
                        graphs: graphs.unwrap_or_default(),
                    });
                    return Ok(t);
                }
                tokens = block.ffn.forward(&t)?;
            }
            trace.stages.push(StageTrace {
                dim: cfg.stage_dims[s],
                grid: (gh, gw),
                num_patches: gh * gw,
                k,
                blocks: blocks.len(),
                graphs_built: built,
                graphs: graphs.unwrap_or_default(),
            });
            if let Some(down) = self.downsamples.get(s) {
                let fmap = tokens.tokens_to_nchw(gh, gw)?.pad_replicate_even()?;
                let fmap = down.forward(&fmap, mode)?;
                (gh, gw) = (fmap.shape()[2], fmap.shape()[3]);
                tokens = fmap.nchw_to_tokens()?;
                trace.downsamples += 1;
            }
        }
        Ok(tokens)
    }
}

impl<T: Real> Parameterized<T> for VigModel<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.stem.params(&join(prefix, "stem"), out);
        out.push((join(prefix, "pos_embed"), self.pos_embed.clone()));
        for (s, blocks) in self.stages.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                block.params(&join(prefix, &format!("stages.{s}.{b}")), out);
            }
            if let Some(d) = self.downsamples.get(s) {
                d.params(&join(prefix, &format!("downsample.{s}")), out);
            }
        }
        self.head.params(&join(prefix, "head"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.stem.params_mut(&join(prefix, "stem"), out);
        out.push((join(prefix, "pos_embed"), &mut self.pos_embed));
        let mut downs = self.downsamples.iter_mut();
        for (s, blocks) in self.stages.iter_mut().enumerate() {
            for (b, block) in blocks.iter_mut().enumerate() {
                block.params_mut(&join(prefix, &format!("stages.{s}.{b}")), out);
            }
            if s + 1 < NUM_STAGES {
                if let Some(d) = downs.next() {
                    d.params_mut(&join(prefix, &format!("downsample.{s}")), out);
                }
            }
        }
        self.head.params_mut(&join(prefix, "head"), out);
    }

    fn norms<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a BatchNorm<T>)>) {
        self.stem.norms(&join(prefix, "stem"), out);
        for (s, blocks) in self.stages.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                block.norms(&join(prefix, &format!("stages.{s}.{b}")), out);
            }
            if let Some(d) = self.downsamples.get(s) {
                d.norms(&join(prefix, &format!("downsample.{s}")), out);
            }
        }
    }
}
