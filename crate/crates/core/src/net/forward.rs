//! Forward pass: embedding, consistency-reweighted attention over the
//! hierarchical graph, and the classification head.
//!
//! Every stage records the intermediates the reverse pass needs, so the same
//! code path serves inference and training.

use super::model::{AttentionWeights, Model};
use super::tensor::Tensor;
use super::{NetOptions, PreparedScene};
use crate::error::{Error, Result};
use crate::geom::CorrespondenceSet;

/// Threshold below which a consistency weight counts as masked in mask mode.
pub const MASK_EPS: f64 = 1e-6;

pub(super) struct AttnCache {
    pub fq: Tensor,
    pub fkv: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// Row-stochastic attention matrices, one per head.
    pub probs: Vec<Tensor>,
    /// Concatenated head outputs before the output projection.
    pub ho: Tensor,
    /// The weight matrix actually multiplied into the logits (None = ones).
    pub theta: Option<Tensor>,
    pub mask_mode: bool,
}

pub(super) struct EmbedCache {
    pub x0: Tensor,
    pub a1: Tensor,
    pub f0: Tensor,
}

pub(super) struct HeadCache {
    pub f_asc: Tensor,
    pub t1: Tensor,
    pub scores: Vec<f64>,
}

pub(super) struct BlockTrace {
    pub self_local: Vec<AttnCache>,
    pub self_global: Vec<AttnCache>,
    pub cross_local: Vec<AttnCache>,
    pub cross_global: Vec<AttnCache>,
}

pub(super) struct ForwardTrace {
    pub emb: EmbedCache,
    pub blocks: Vec<BlockTrace>,
    pub final_local: Vec<Tensor>,
    pub final_global: Vec<Tensor>,
    /// Local-group slot count per correspondence (zero = passthrough).
    pub counts: Vec<usize>,
    pub head: HeadCache,
}

/// Final per-group branch features, exposed for inspection.
pub struct PerGroupFeatures {
    pub local: Vec<Tensor>,
    pub global: Vec<Tensor>,
}

/// Leaky ReLU keeps gradients alive across the stack and maps 0 to 0, which
/// the zero-input embedding contract relies on.
pub(super) const LEAK: f64 = 0.1;

fn act_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { LEAK * v })
}

fn linear_forward(x: &Tensor, layer: &super::model::Linear) -> Tensor {
    let mut y = x.matmul(&layer.w);
    let bias = layer.b.row(0);
    for r in 0..y.rows() {
        for (v, b) in y.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
    y
}

pub(super) fn embed_forward(model: &Model, feats: &Tensor) -> Result<EmbedCache> {
    if feats.cols() != model.config.feat_dim {
        return Err(Error::FeatureWidth { expected: model.config.feat_dim, got: feats.cols() });
    }
    let a1 = act_forward(&linear_forward(feats, &model.embed1));
    let f0 = act_forward(&linear_forward(&a1, &model.embed2));
    if !f0.all_finite() {
        return Err(Error::NonFinite { context: "embedding output".into() });
    }
    Ok(EmbedCache { x0: feats.clone(), a1, f0 })
}

/// Deterministic forward pass of the two-layer embedding stack.
pub fn embed_initial(model: &Model, feats: &Tensor) -> Result<Tensor> {
    Ok(embed_forward(model, feats)?.f0)
}

fn softmax_rows(z: &mut Tensor) {
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub(super) fn attention_forward(
    fq: &Tensor,
    fkv: &Tensor,
    theta: Option<&Tensor>,
    weights: &AttentionWeights,
    heads: usize,
    mask_mode: bool,
    context: &str,
) -> Result<(Tensor, AttnCache)> {
    let d = fq.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = fq.matmul(&weights.wq);
    let k = fkv.matmul(&weights.wk);
    let v = fkv.matmul(&weights.wv);

    let mut ho = Tensor::zeros(&[fq.rows(), d]);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.col_block(h * dh, dh);
        let kh = k.col_block(h * dh, dh);
        let vh = v.col_block(h * dh, dh);

        let mut logits = qh.matmul_nt(&kh);
        logits.scale_assign(scale);
        if let Some(t) = theta {
            if mask_mode {
                for (l, &w) in logits.data_mut().iter_mut().zip(t.data()) {
                    if w < MASK_EPS {
                        *l = -1e30;
                    }
                }
            } else {
                for (l, &w) in logits.data_mut().iter_mut().zip(t.data()) {
                    *l *= w;
                }
            }
        }
        softmax_rows(&mut logits);
        let oh = logits.matmul(&vh);
        ho.add_col_block(h * dh, &oh);
        probs.push(logits);
    }
    let out = ho.matmul(&weights.wo);
    if !out.all_finite() {
        return Err(Error::NonFinite { context: context.to_string() });
    }
    Ok((
        out,
        AttnCache {
            fq: fq.clone(),
            fkv: fkv.clone(),
            q,
            k,
            v,
            probs,
            ho,
            theta: theta.cloned(),
            mask_mode,
        },
    ))
}

/// Multi-head attention with the consistency weights multiplied into the
/// scaled logits before the row softmax. `theta = None` is plain attention.
///
/// A zero weight neutralizes a logit (the softmax then sees 0.0 there), it
/// does not remove the key from the distribution; pass `mask_mode = true` to
/// substitute hard masking for weights below [`MASK_EPS`].
pub fn reweighted_attention(
    fq: &Tensor,
    fkv: &Tensor,
    theta: Option<&Tensor>,
    weights: &AttentionWeights,
    heads: usize,
    mask_mode: bool,
) -> Result<Tensor> {
    attention_forward(fq, fkv, theta, weights, heads, mask_mode, "reweighted attention")
        .map(|(out, _)| out)
}

pub(super) fn forward_trace(
    model: &Model,
    scene: &PreparedScene,
    opts: &NetOptions,
) -> Result<ForwardTrace> {
    let n = scene.features.rows();
    let heads = model.config.heads;
    let emb = embed_forward(model, &scene.features)?;

    let graph = &scene.graph;
    let vcount = graph.node_count();
    let mut fl: Vec<Tensor> = graph
        .local_groups
        .iter()
        .map(|g| emb.f0.gather_rows(g))
        .collect();
    let mut fg: Vec<Tensor> = graph
        .global_groups
        .iter()
        .map(|g| {
            let corr: Vec<usize> = g.iter().map(|&ki| graph.global_keypoints[ki]).collect();
            emb.f0.gather_rows(&corr)
        })
        .collect();

    let theta_local = scene.theta_local(opts);
    let theta_global = scene.theta_global(opts);
    let cross_lg = scene.cross_theta_lg(opts);

    let mut blocks = Vec::with_capacity(model.config.blocks);
    for (l, block) in model.blocks.iter().enumerate() {
        let mut self_local = Vec::with_capacity(vcount);
        let mut self_global = Vec::with_capacity(vcount);
        for j in 0..vcount {
            let ctx = format!("block {l} self-attention local node {j}");
            let (out, cache) = attention_forward(
                &fl[j],
                &fl[j],
                theta_local[j],
                &block.self_attn,
                heads,
                opts.mask_mode,
                &ctx,
            )?;
            fl[j] = fl[j].add(&out);
            self_local.push(cache);

            let ctx = format!("block {l} self-attention global node {j}");
            let (out, cache) = attention_forward(
                &fg[j],
                &fg[j],
                theta_global[j],
                &block.self_attn,
                heads,
                opts.mask_mode,
                &ctx,
            )?;
            fg[j] = fg[j].add(&out);
            self_global.push(cache);
        }

        let mut cross_local = Vec::new();
        let mut cross_global = Vec::new();
        if opts.cross_attention {
            for j in 0..vcount {
                let theta_lg = cross_lg.map(|v| &v[j]);
                let theta_gl = theta_lg.map(transpose);

                let ctx = format!("block {l} cross-attention local node {j}");
                let (out_l, cache_l) = attention_forward(
                    &fl[j],
                    &fg[j],
                    theta_lg,
                    &block.cross_attn,
                    heads,
                    opts.mask_mode,
                    &ctx,
                )?;
                let ctx = format!("block {l} cross-attention global node {j}");
                let (out_g, cache_g) = attention_forward(
                    &fg[j],
                    &fl[j],
                    theta_gl.as_ref(),
                    &block.cross_attn,
                    heads,
                    opts.mask_mode,
                    &ctx,
                )?;
                fl[j] = fl[j].add(&out_l);
                fg[j] = fg[j].add(&out_g);
                cross_local.push(cache_l);
                cross_global.push(cache_g);
            }
        }
        blocks.push(BlockTrace { self_local, self_global, cross_local, cross_global });
    }

    // scatter local-branch rows back onto correspondences, averaging over
    // overlapping groups; uncovered correspondences pass their embedding
    // through unchanged
    let d = model.config.d_model;
    let mut f_asc = Tensor::zeros(&[n, d]);
    let mut counts = vec![0usize; n];
    for (j, group) in graph.local_groups.iter().enumerate() {
        for (slot, &i) in group.iter().enumerate() {
            counts[i] += 1;
            let src = fl[j].row(slot).to_vec();
            for (dst, s) in f_asc.row_mut(i).iter_mut().zip(&src) {
                *dst += s;
            }
        }
    }
    for i in 0..n {
        if counts[i] > 0 {
            let inv = 1.0 / counts[i] as f64;
            for v in f_asc.row_mut(i) {
                *v *= inv;
            }
        } else {
            f_asc.row_mut(i).copy_from_slice(emb.f0.row(i));
        }
    }

    let t1 = act_forward(&linear_forward(&f_asc, &model.head1));
    let z2 = linear_forward(&t1, &model.head2);
    let scores: Vec<f64> = z2.data().iter().map(|&z| sigmoid(z)).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { context: "classifier scores".into() });
    }

    Ok(ForwardTrace {
        emb,
        blocks,
        final_local: fl,
        final_global: fg,
        counts,
        head: HeadCache { f_asc, t1, scores },
    })
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            out.set(j, i, t.at(i, j));
        }
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Runs the full feature-refinement pipeline and returns the per-
/// correspondence features plus the final branch features.
pub fn hierarchical_forward(
    model: &Model,
    scene: &PreparedScene,
    opts: &NetOptions,
) -> Result<(Tensor, PerGroupFeatures)> {
    let trace = forward_trace(model, scene, opts)?;
    Ok((
        trace.head.f_asc,
        PerGroupFeatures { local: trace.final_local, global: trace.final_global },
    ))
}

/// Sigmoid confidence scores from refined features.
pub fn classify(model: &Model, f_asc: &Tensor) -> Result<Vec<f64>> {
    if f_asc.cols() != model.config.d_model {
        return Err(Error::FeatureWidth { expected: model.config.d_model, got: f_asc.cols() });
    }
    let t1 = act_forward(&linear_forward(f_asc, &model.head1));
    let z2 = linear_forward(&t1, &model.head2);
    Ok(z2.data().iter().map(|&z| sigmoid(z)).collect())
}

/// End-to-end scoring of one prepared scene.
pub fn score_scene(model: &Model, scene: &PreparedScene, opts: &NetOptions) -> Result<Vec<f64>> {
    Ok(forward_trace(model, scene, opts)?.head.scores)
}

/// Result of thresholding scores at tau.
pub struct FilterResult {
    pub retained: CorrespondenceSet,
    pub kept_indices: Vec<usize>,
    /// Set when nothing survived the threshold; downstream pose estimation
    /// will reject the empty set.
    pub empty_warning: bool,
}

/// Keeps correspondences with `score >= tau`, preserving order and labels.
pub fn filter(corrs: &CorrespondenceSet, scores: &[f64], tau: f64) -> Result<FilterResult> {
    if scores.len() != corrs.len() {
        return Err(Error::CountExceedsPoints { requested: corrs.len(), available: scores.len() });
    }
    let keep: Vec<bool> = scores.iter().map(|&s| s >= tau).collect();
    let kept_indices = keep
        .iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect::<Vec<_>>();
    let retained = corrs.retain_by_mask(&keep);
    let empty_warning = retained.is_empty();
    Ok(FilterResult { retained, kept_indices, empty_warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Model, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(r, c, data).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one_in_every_head() {
        let model =
            Model::init(ModelConfig { feat_dim: 24, d_model: 16, heads: 4, blocks: 1 }, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = rand_matrix(&mut rng, 9, 16);
        let theta_data: Vec<f64> = (0..81).map(|_| rng.random_range(0.0..1.0)).collect();
        let theta = Tensor::matrix(9, 9, theta_data).unwrap();
        for (theta_opt, mask) in [(None, false), (Some(&theta), false), (Some(&theta), true)] {
            let (_, cache) = attention_forward(
                &f,
                &f,
                theta_opt,
                &model.blocks[0].self_attn,
                4,
                mask,
                "test",
            )
            .unwrap();
            for probs in &cache.probs {
                for r in 0..probs.rows() {
                    let sum: f64 = probs.row(r).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
                }
            }
        }
    }

    #[test]
    fn mask_mode_excludes_near_zero_weights_from_the_distribution() {
        let model =
            Model::init(ModelConfig { feat_dim: 24, d_model: 8, heads: 2, blocks: 1 }, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = rand_matrix(&mut rng, 4, 8);
        // row 0 keeps only its diagonal
        let mut theta_data = vec![1.0; 16];
        for j in 1..4 {
            theta_data[j] = 0.0;
        }
        let theta = Tensor::matrix(4, 4, theta_data).unwrap();
        let (_, cache) = attention_forward(
            &f,
            &f,
            Some(&theta),
            &model.blocks[0].self_attn,
            2,
            true,
            "test",
        )
        .unwrap();
        for probs in &cache.probs {
            assert!((probs.at(0, 0) - 1.0).abs() < 1e-12);
            for j in 1..4 {
                assert!(probs.at(0, j) < 1e-12);
            }
        }
    }
}
