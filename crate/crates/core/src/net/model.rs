//! Network parameters: embedding stack, attention blocks, classifier head.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geom::FEATURE_WIDTH;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { feat_dim: FEATURE_WIDTH, d_model: 128, heads: 4, blocks: 3 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.blocks == 0 {
            return Err(Error::Config {
                key: "model".into(),
                msg: "dimensions must be positive".into(),
            });
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config {
                key: "heads".into(),
                msg: format!("d_model {} not divisible by heads {}", self.d_model, self.heads),
            });
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config {
                key: "d_model".into(),
                msg: "d_model must be even (head layer is d/2 wide)".into(),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn head_hidden(&self) -> usize {
        self.d_model / 2
    }
}

/// Affine layer: `y = x W + b` with W stored input-major (in x out).
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: xavier(rng, fan_in, fan_out),
            b: Tensor::zeros(&[1, fan_out]),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Linear {
        Linear { w: Tensor::zeros(&[fan_in, fan_out]), b: Tensor::zeros(&[1, fan_out]) }
    }
}

/// Projection weights of one attention layer (no biases).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

impl AttentionWeights {
    fn init(rng: &mut ChaCha8Rng, d: usize) -> AttentionWeights {
        AttentionWeights {
            wq: xavier(rng, d, d),
            wk: xavier(rng, d, d),
            wv: xavier(rng, d, d),
            wo: xavier(rng, d, d),
        }
    }

    fn zeros(d: usize) -> AttentionWeights {
        AttentionWeights {
            wq: Tensor::zeros(&[d, d]),
            wk: Tensor::zeros(&[d, d]),
            wv: Tensor::zeros(&[d, d]),
            wo: Tensor::zeros(&[d, d]),
        }
    }
}

/// A self-attention / cross-attention pair. Within a block the self layer is
/// shared by the local and global branches, and the cross layer by both
/// directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub self_attn: AttentionWeights,
    pub cross_attn: AttentionWeights,
}

/// Full parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embed1: Linear,
    pub embed2: Linear,
    pub blocks: Vec<Block>,
    pub head1: Linear,
    pub head2: Linear,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).unwrap()
}

impl Model {
    /// Seeded Xavier-uniform initialization; biases start at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let blocks = (0..config.blocks)
            .map(|_| Block {
                self_attn: AttentionWeights::init(&mut rng, d),
                cross_attn: AttentionWeights::init(&mut rng, d),
            })
            .collect();
        Ok(Model {
            config,
            embed1: Linear::init(&mut rng, config.feat_dim, d),
            embed2: Linear::init(&mut rng, d, d),
            blocks,
            head1: Linear::init(&mut rng, d, config.head_hidden()),
            head2: Linear::init(&mut rng, config.head_hidden(), 1),
        })
    }

    /// Same shapes, all zeros. Used for gradients and optimizer state.
    pub fn zeros_like(&self) -> Model {
        let d = self.config.d_model;
        Model {
            config: self.config,
            embed1: Linear::zeros(self.config.feat_dim, d),
            embed2: Linear::zeros(d, d),
            blocks: (0..self.config.blocks)
                .map(|_| Block {
                    self_attn: AttentionWeights::zeros(d),
                    cross_attn: AttentionWeights::zeros(d),
                })
                .collect(),
            head1: Linear::zeros(d, self.config.head_hidden()),
            head2: Linear::zeros(self.config.head_hidden(), 1),
        }
    }

    /// Parameter tensors in declaration order. The checkpoint format and the
    /// optimizer both rely on this order being stable.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed1.w, &self.embed1.b, &self.embed2.w, &self.embed2.b];
        for block in &self.blocks {
            out.extend([
                &block.self_attn.wq,
                &block.self_attn.wk,
                &block.self_attn.wv,
                &block.self_attn.wo,
                &block.cross_attn.wq,
                &block.cross_attn.wk,
                &block.cross_attn.wv,
                &block.cross_attn.wo,
            ]);
        }
        out.extend([&self.head1.w, &self.head1.b, &self.head2.w, &self.head2.b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.embed1.w,
            &mut self.embed1.b,
            &mut self.embed2.w,
            &mut self.embed2.b,
        ];
        for block in &mut self.blocks {
            out.extend([
                &mut block.self_attn.wq,
                &mut block.self_attn.wk,
                &mut block.self_attn.wv,
                &mut block.self_attn.wo,
                &mut block.cross_attn.wq,
                &mut block.cross_attn.wk,
                &mut block.cross_attn.wv,
                &mut block.cross_attn.wo,
            ]);
        }
        out.extend([
            &mut self.head1.w,
            &mut self.head1.b,
            &mut self.head2.w,
            &mut self.head2.b,
        ]);
        out
    }

    /// Human-readable tensor names matching [`Model::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec![
            "embed1.w".to_string(),
            "embed1.b".to_string(),
            "embed2.w".to_string(),
            "embed2.b".to_string(),
        ];
        for l in 0..self.blocks.len() {
            for part in ["self", "cross"] {
                for w in ["wq", "wk", "wv", "wo"] {
                    out.push(format!("block{l}.{part}.{w}"));
                }
            }
        }
        out.extend([
            "head1.w".to_string(),
            "head1.b".to_string(),
            "head2.w".to_string(),
            "head2.b".to_string(),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|t| t.all_finite())
    }
}
