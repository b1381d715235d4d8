//! Seeded training loop: adaptive-moment gradient descent with decoupled
//! weight decay over labeled synthetic scenes.

use super::backward::{loss_and_grad, LossKind};
use super::forward::score_scene;
use super::model::Model;
use super::{NetOptions, PreparedScene};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Optimization hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Scenes accumulated per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Score threshold used for the validation inlier ratio.
    pub tau: f64,
    /// Consistency sensitivity the scenes were prepared with; recorded so a
    /// checkpoint can be audited against its data.
    pub sigma_d: f64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            epochs: 50,
            batch_size: 1,
            seed: 0,
            tau: 0.2,
            sigma_d: 0.1,
            loss: LossKind::Bce,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config {
                key: "learning_rate".into(),
                msg: format!("must be positive, got {}", self.learning_rate),
            });
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config {
                key: "tau".into(),
                msg: format!("must lie in (0, 1), got {}", self.tau),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Config { key: "batch_size".into(), msg: "must be >= 1".into() });
        }
        Ok(())
    }
}

/// A prepared scene with its ground-truth inlier labels.
#[derive(Clone, Debug)]
pub struct LabeledScene {
    pub scene: PreparedScene,
    pub labels: Vec<bool>,
}

/// One line of the training history CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_ir: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamW {
    m: Model,
    v: Model,
    step: u64,
}

impl AdamW {
    fn new(model: &Model) -> AdamW {
        AdamW { m: model.zeros_like(), v: model.zeros_like(), step: 0 }
    }

    fn apply(&mut self, model: &mut Model, grads: &Model, lr: f64, wd: f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let params = model.params_mut();
        let gs = grads.params();
        let ms = self.m.params_mut();
        let vs = self.v.params_mut();
        for (((p, g), m), v) in params.into_iter().zip(gs).zip(ms).zip(vs) {
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = BETA1 * md[i] + (1.0 - BETA1) * gd[i];
                vd[i] = BETA2 * vd[i] + (1.0 - BETA2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * (mhat / (vhat.sqrt() + ADAM_EPS) + wd * pd[i]);
            }
        }
    }
}

/// Post-filter inlier precision of one scene at threshold tau.
fn filtered_ir(scores: &[f64], labels: &[bool], tau: f64) -> f64 {
    let mut kept = 0usize;
    let mut kept_inliers = 0usize;
    for (&s, &y) in scores.iter().zip(labels) {
        if s >= tau {
            kept += 1;
            if y {
                kept_inliers += 1;
            }
        }
    }
    if kept == 0 {
        0.0
    } else {
        kept_inliers as f64 / kept as f64
    }
}

fn validation_ir(
    model: &Model,
    val: &[LabeledScene],
    opts: &NetOptions,
    tau: f64,
) -> Result<f64> {
    if val.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for ls in val {
        let scores = score_scene(model, &ls.scene, opts)?;
        sum += filtered_ir(&scores, &ls.labels, tau);
    }
    Ok(sum / val.len() as f64)
}

/// Trains the model in place over the labeled scenes. Deterministic for a
/// fixed seed: scene order is shuffled by a seeded generator and gradient
/// accumulation runs in a fixed order.
pub fn train(
    mut model: Model,
    train_set: &[LabeledScene],
    val_set: &[LabeledScene],
    config: &TrainConfig,
    opts: &NetOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(TrainOutcome { model, history: Vec::new() });
    }
    if train_set.is_empty() {
        return Err(Error::EmptyPointSet);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdamW::new(&model);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Model> = None;
            let mut batch_loss = 0.0;
            for &idx in batch {
                let ls = &train_set[idx];
                let (loss, grads) = loss_and_grad(&model, &ls.scene, &ls.labels, opts, config.loss)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                batch_loss += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (t, g) in a.params_mut().into_iter().zip(grads.params()) {
                            t.add_assign(g);
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            for t in grads.params_mut() {
                t.scale_assign(inv);
            }
            optimizer.apply(&mut model, &grads, config.learning_rate, config.weight_decay);
            epoch_loss += batch_loss;
        }
        epoch_loss /= train_set.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: epoch_loss });
        }
        let val_ir = validation_ir(&model, val_set, opts, config.tau)?;
        history.push(EpochRecord { epoch, loss: epoch_loss, val_ir });
    }
    Ok(TrainOutcome { model, history })
}
