//! Hierarchical attention network with consistency-reweighted attention,
//! analytic gradients, and training.

mod backward;
mod forward;
mod model;
mod tensor;
mod train;

pub use backward::{bce_loss, loss_and_grad, loss_only, LossKind};
pub use forward::{
    classify, embed_initial, filter, hierarchical_forward, reweighted_attention, score_scene,
    FilterResult, PerGroupFeatures, MASK_EPS,
};
pub use model::{AttentionWeights, Block, Linear, Model, ModelConfig};
pub use tensor::Tensor;
pub use train::{train, EpochRecord, LabeledScene, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::graph::HierGraph;

/// Behavioral switches of the attention stack. The ablation flags of the
/// command line map straight onto these.
#[derive(Clone, Copy, Debug)]
pub struct NetOptions {
    /// Multiply consistency weights into the attention logits. Off = the
    /// all-ones path (plain attention).
    pub reweight: bool,
    /// Run the local/global cross-attention exchange.
    pub cross_attention: bool,
    /// Replace near-zero consistency weights with hard -inf masking.
    pub mask_mode: bool,
}

impl Default for NetOptions {
    fn default() -> Self {
        NetOptions { reweight: true, cross_attention: true, mask_mode: false }
    }
}

/// A scene ready for the network: feature rows plus the hierarchical graph
/// with its consistency matrices lifted into tensors.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub features: Tensor,
    pub graph: HierGraph,
    theta_local_t: Vec<Tensor>,
    theta_global_t: Vec<Tensor>,
    /// Optional geometric cross-branch weights, one (k_local x k_global)
    /// block per node. None = cross-attention runs unweighted.
    cross_theta_t: Option<Vec<Tensor>>,
}

impl PreparedScene {
    pub fn new(features: Tensor, graph: HierGraph) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Format("features must be a 2D tensor".into()));
        }
        let theta_local_t = graph
            .theta_local
            .iter()
            .map(|m| Tensor::matrix(m.size(), m.size(), m.data().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let theta_global_t = graph
            .theta_global
            .iter()
            .map(|m| Tensor::matrix(m.size(), m.size(), m.data().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedScene { features, graph, theta_local_t, theta_global_t, cross_theta_t: None })
    }

    pub fn with_cross_theta(mut self, cross: Vec<Tensor>) -> Result<Self> {
        if cross.len() != self.graph.node_count() {
            return Err(Error::CountExceedsPoints {
                requested: self.graph.node_count(),
                available: cross.len(),
            });
        }
        self.cross_theta_t = Some(cross);
        Ok(self)
    }

    pub fn correspondence_count(&self) -> usize {
        self.features.rows()
    }

    pub(crate) fn theta_local(&self, opts: &NetOptions) -> Vec<Option<&Tensor>> {
        self.theta_local_t
            .iter()
            .map(|t| opts.reweight.then_some(t))
            .collect()
    }

    pub(crate) fn theta_global(&self, opts: &NetOptions) -> Vec<Option<&Tensor>> {
        self.theta_global_t
            .iter()
            .map(|t| opts.reweight.then_some(t))
            .collect()
    }

    pub(crate) fn cross_theta_lg(&self, opts: &NetOptions) -> Option<&[Tensor]> {
        if !opts.reweight {
            return None;
        }
        self.cross_theta_t.as_deref()
    }
}
