//! Reverse-mode gradients through the full pipeline: classifier head,
//! scatter/gather aggregation, every attention layer, and the embedding.

use super::forward::{forward_trace, AttnCache, MASK_EPS};
use super::model::{AttentionWeights, Linear, Model};
use super::tensor::Tensor;
use super::{NetOptions, PreparedScene};
use crate::error::{Error, Result};

/// Binary classification loss family.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum LossKind {
    #[default]
    Bce,
    /// Focal loss with the usual (alpha, gamma) weighting.
    Focal { alpha: f64, gamma: f64 },
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "focal" => Ok(LossKind::Focal { alpha: 0.25, gamma: 2.0 }),
            other => Err(Error::Config {
                key: "loss".into(),
                msg: format!("expected bce|focal, got {other}"),
            }),
        }
    }
}

const SCORE_CLAMP: f64 = 1e-7;

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

/// Mean binary cross-entropy of scores against boolean labels.
pub fn bce_loss(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = clamp_score(s);
            if y {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum::<f64>()
        / n
}

fn focal_loss(scores: &[f64], labels: &[bool], alpha: f64, gamma: f64) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = clamp_score(s);
            if y {
                -alpha * (1.0 - s).powf(gamma) * s.ln()
            } else {
                -(1.0 - alpha) * s.powf(gamma) * (1.0 - s).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// Mean loss plus d(loss)/d(pre-sigmoid logit) per correspondence.
fn loss_and_dz(scores: &[f64], labels: &[bool], kind: LossKind) -> (f64, Vec<f64>) {
    let n = scores.len() as f64;
    match kind {
        LossKind::Bce => {
            let loss = bce_loss(scores, labels);
            let dz = scores
                .iter()
                .zip(labels)
                .map(|(&s, &y)| (s - f64::from(y as u8)) / n)
                .collect();
            (loss, dz)
        }
        LossKind::Focal { alpha, gamma } => {
            let loss = focal_loss(scores, labels, alpha, gamma);
            let dz = scores
                .iter()
                .zip(labels)
                .map(|(&s, &y)| {
                    let s = clamp_score(s);
                    if y {
                        alpha * (1.0 - s).powf(gamma) * (gamma * s * s.ln() - (1.0 - s)) / n
                    } else {
                        (1.0 - alpha) * s.powf(gamma) * (s - gamma * (1.0 - s) * (1.0 - s).ln())
                            / n
                    }
                })
                .collect();
            (loss, dz)
        }
    }
}

fn column_sums_into(dy: &Tensor, acc: &mut Tensor) {
    for r in 0..dy.rows() {
        for (a, v) in acc.row_mut(0).iter_mut().zip(dy.row(r)) {
            *a += v;
        }
    }
}

/// Accumulates dW, db and returns dx for `y = x W + b`.
fn linear_backward(dy: &Tensor, x: &Tensor, layer: &Linear, grad: &mut Linear) -> Tensor {
    grad.w.add_assign(&x.matmul_tn(dy));
    column_sums_into(dy, &mut grad.b);
    dy.matmul_nt(&layer.w)
}

/// dx for the leaky ReLU given its output (monotone, so the output sign
/// determines the branch).
fn act_backward(dy: &Tensor, y: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &t) in dx.data_mut().iter_mut().zip(y.data()) {
        if t <= 0.0 {
            *d *= super::forward::LEAK;
        }
    }
    dx
}

/// Reverse pass of one attention call; returns (d_fq, d_fkv).
fn attention_backward(
    d_out: &Tensor,
    cache: &AttnCache,
    weights: &AttentionWeights,
    grad: &mut AttentionWeights,
    heads: usize,
) -> (Tensor, Tensor) {
    let d = cache.q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let kq = cache.fq.rows();
    let kkv = cache.fkv.rows();

    grad.wo.add_assign(&cache.ho.matmul_tn(d_out));
    let dho = d_out.matmul_nt(&weights.wo);

    let mut dq = Tensor::zeros(&[kq, d]);
    let mut dk = Tensor::zeros(&[kkv, d]);
    let mut dv = Tensor::zeros(&[kkv, d]);

    for h in 0..heads {
        let doh = dho.col_block(h * dh, dh);
        let probs = &cache.probs[h];
        let vh = cache.v.col_block(h * dh, dh);

        let da = doh.matmul_nt(&vh);
        let dvh = probs.matmul_tn(&doh);

        // softmax rows: dz = a * (da - sum(da * a))
        let mut dz = Tensor::zeros(&[kq, kkv]);
        for r in 0..kq {
            let a_row = probs.row(r);
            let da_row = da.row(r);
            let mut dot = 0.0;
            for (a, g) in a_row.iter().zip(da_row) {
                dot += a * g;
            }
            for (c, out) in dz.row_mut(r).iter_mut().enumerate() {
                *out = a_row[c] * (da_row[c] - dot);
            }
        }

        // undo the reweighting (theta scales the logits, masking blocks them)
        let mut ds = dz;
        if let Some(theta) = &cache.theta {
            if cache.mask_mode {
                for (g, &w) in ds.data_mut().iter_mut().zip(theta.data()) {
                    if w < MASK_EPS {
                        *g = 0.0;
                    }
                }
            } else {
                for (g, &w) in ds.data_mut().iter_mut().zip(theta.data()) {
                    *g *= w;
                }
            }
        }
        ds.scale_assign(scale);

        let qh = cache.q.col_block(h * dh, dh);
        let kh = cache.k.col_block(h * dh, dh);
        let dqh = ds.matmul(&kh);
        let dkh = ds.matmul_tn(&qh);

        dq.add_col_block(h * dh, &dqh);
        dk.add_col_block(h * dh, &dkh);
        dv.add_col_block(h * dh, &dvh);
    }

    grad.wq.add_assign(&cache.fq.matmul_tn(&dq));
    grad.wk.add_assign(&cache.fkv.matmul_tn(&dk));
    grad.wv.add_assign(&cache.fkv.matmul_tn(&dv));

    let dfq = dq.matmul_nt(&weights.wq);
    let mut dfkv = dk.matmul_nt(&weights.wk);
    dfkv.add_assign(&dv.matmul_nt(&weights.wv));
    (dfq, dfkv)
}

/// Loss of one labeled scene plus model-shaped analytic gradients.
pub fn loss_and_grad(
    model: &Model,
    scene: &PreparedScene,
    labels: &[bool],
    opts: &NetOptions,
    kind: LossKind,
) -> Result<(f64, Model)> {
    if labels.len() != scene.correspondence_count() {
        return Err(Error::MissingLabels);
    }
    let trace = forward_trace(model, scene, opts)?;
    let n = scene.correspondence_count();
    let d = model.config.d_model;
    let heads = model.config.heads;
    let graph = &scene.graph;

    let (loss, dz) = loss_and_dz(&trace.head.scores, labels, kind);
    let mut grad = model.zeros_like();

    // classifier head
    let dz2 = Tensor::matrix(n, 1, dz)?;
    let dt1 = linear_backward(&dz2, &trace.head.t1, &model.head2, &mut grad.head2);
    let dz1 = act_backward(&dt1, &trace.head.t1);
    let mut df_asc = linear_backward(&dz1, &trace.head.f_asc, &model.head1, &mut grad.head1);

    // scatter-mean backward: each group slot holding correspondence i gets
    // dF_asc[i] / count[i]; uncovered correspondences route straight to f0
    let mut df0 = Tensor::zeros(&[n, d]);
    for i in 0..n {
        if trace.counts[i] == 0 {
            let src = df_asc.row(i).to_vec();
            for (dst, s) in df0.row_mut(i).iter_mut().zip(&src) {
                *dst += s;
            }
        } else {
            let inv = 1.0 / trace.counts[i] as f64;
            for v in df_asc.row_mut(i) {
                *v *= inv;
            }
        }
    }
    let vcount = graph.node_count();
    let mut dfl: Vec<Tensor> = graph
        .local_groups
        .iter()
        .map(|g| df_asc.gather_rows(g))
        .collect();
    let kg = graph.global_groups.first().map_or(0, |g| g.len());
    let mut dfg: Vec<Tensor> = (0..vcount).map(|_| Tensor::zeros(&[kg, d])).collect();

    // blocks in reverse
    for (l, block_cache) in trace.blocks.iter().enumerate().rev() {
        let weights = &model.blocks[l];
        let grads = &mut grad.blocks[l];

        if !block_cache.cross_local.is_empty() {
            for j in 0..vcount {
                // forward: fl' = fl + cross(fl, fg); fg' = fg + cross(fg, fl)
                let (dq_l, dkv_g) = attention_backward(
                    &dfl[j],
                    &block_cache.cross_local[j],
                    &weights.cross_attn,
                    &mut grads.cross_attn,
                    heads,
                );
                let (dq_g, dkv_l) = attention_backward(
                    &dfg[j],
                    &block_cache.cross_global[j],
                    &weights.cross_attn,
                    &mut grads.cross_attn,
                    heads,
                );
                let mut dl = dfl[j].clone();
                dl.add_assign(&dq_l);
                dl.add_assign(&dkv_l);
                let mut dg = dfg[j].clone();
                dg.add_assign(&dq_g);
                dg.add_assign(&dkv_g);
                dfl[j] = dl;
                dfg[j] = dg;
            }
        }
        for j in 0..vcount {
            // forward: fl' = fl + self(fl, fl)
            let (dq, dkv) = attention_backward(
                &dfl[j],
                &block_cache.self_local[j],
                &weights.self_attn,
                &mut grads.self_attn,
                heads,
            );
            let mut dl = dfl[j].clone();
            dl.add_assign(&dq);
            dl.add_assign(&dkv);
            dfl[j] = dl;

            let (dq, dkv) = attention_backward(
                &dfg[j],
                &block_cache.self_global[j],
                &weights.self_attn,
                &mut grads.self_attn,
                heads,
            );
            let mut dg = dfg[j].clone();
            dg.add_assign(&dq);
            dg.add_assign(&dkv);
            dfg[j] = dg;
        }
    }

    // gather backward
    for (j, group) in graph.local_groups.iter().enumerate() {
        for (slot, &i) in group.iter().enumerate() {
            let src = dfl[j].row(slot).to_vec();
            for (dst, s) in df0.row_mut(i).iter_mut().zip(&src) {
                *dst += s;
            }
        }
    }
    for (j, group) in graph.global_groups.iter().enumerate() {
        for (slot, &ki) in group.iter().enumerate() {
            let i = graph.global_keypoints[ki];
            let src = dfg[j].row(slot).to_vec();
            for (dst, s) in df0.row_mut(i).iter_mut().zip(&src) {
                *dst += s;
            }
        }
    }

    // embedding backward
    let dh2 = act_backward(&df0, &trace.emb.f0);
    let da1 = linear_backward(&dh2, &trace.emb.a1, &model.embed2, &mut grad.embed2);
    let dh1 = act_backward(&da1, &trace.emb.a1);
    let _dx0 = linear_backward(&dh1, &trace.emb.x0, &model.embed1, &mut grad.embed1);

    if !grad.all_finite() {
        return Err(Error::NonFinite { context: "gradients".into() });
    }
    Ok((loss, grad))
}

/// Loss of one labeled scene without gradients.
pub fn loss_only(
    model: &Model,
    scene: &PreparedScene,
    labels: &[bool],
    opts: &NetOptions,
    kind: LossKind,
) -> Result<f64> {
    if labels.len() != scene.correspondence_count() {
        return Err(Error::MissingLabels);
    }
    let trace = forward_trace(model, scene, opts)?;
    Ok(match kind {
        LossKind::Bce => bce_loss(&trace.head.scores, labels),
        LossKind::Focal { alpha, gamma } => focal_loss(&trace.head.scores, labels, alpha, gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_half_is_ln_two() {
        let scores = vec![0.5; 7];
        let labels = vec![true, false, true, false, true, false, true];
        assert!((bce_loss(&scores, &labels) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_scores_give_negligible_loss() {
        let scores = vec![1.0, 0.0, 1.0];
        let labels = vec![true, false, true];
        assert!(bce_loss(&scores, &labels) < 1e-6);
    }

    #[test]
    fn focal_loss_is_smaller_on_easy_examples() {
        let scores = vec![0.9];
        let labels = vec![true];
        let bce = bce_loss(&scores, &labels);
        let focal = focal_loss(&scores, &labels, 0.25, 2.0);
        assert!(focal < bce);
    }
}
