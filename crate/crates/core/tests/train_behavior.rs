//! Training-loop contracts: zero-epoch identity, overfit descent,
//! determinism, and divergence reporting.

use i2pfilter::net::{
    train, LabeledScene, LossKind, Model, ModelConfig, NetOptions, TrainConfig,
};
use i2pfilter::pipeline::{prepare_scene, PipelineConfig};
use i2pfilter::synth::{generate_scene, SceneConfig};

fn overfit_set(n_scenes: u64) -> Vec<LabeledScene> {
    (0..n_scenes)
        .map(|seed| {
            let scene = generate_scene(&SceneConfig {
                n_points: 40,
                outlier_ratio: 0.5,
                depth_scale: 1.2,
                depth_noise_sigma: 0.01,
                seed,
                ..Default::default()
            })
            .unwrap();
            let config = PipelineConfig {
                k_local: 8,
                k_global: 8,
                global_keypoints: 20,
                normals_k: 8,
                ..Default::default()
            };
            let prepared = prepare_scene(&scene.corrs, &config).unwrap();
            let labels = scene.corrs.gt_labels.clone().unwrap();
            LabeledScene { scene: prepared, labels }
        })
        .collect()
}

fn small_model(seed: u64) -> Model {
    Model::init(ModelConfig { feat_dim: 24, d_model: 16, heads: 4, blocks: 2 }, seed).unwrap()
}

#[test]
fn zero_epochs_leaves_model_unchanged() {
    let scenes = overfit_set(2);
    let model = small_model(1);
    let config = TrainConfig { epochs: 0, ..Default::default() };
    let out = train(model.clone(), &scenes, &[], &config, &NetOptions::default()).unwrap();
    assert_eq!(out.model, model);
    assert!(out.history.is_empty());
}

#[test]
fn overfit_loss_decreases_monotonically_over_first_twenty_epochs() {
    let scenes = overfit_set(10);
    let model = small_model(1);
    let config = TrainConfig { epochs: 20, seed: 3, ..Default::default() };
    let out = train(model, &scenes, &[], &config, &NetOptions::default()).unwrap();
    assert_eq!(out.history.len(), 20);
    for pair in out.history.windows(2) {
        assert!(
            pair[1].loss < pair[0].loss,
            "loss rose between epochs {} and {}: {} -> {}",
            pair[0].epoch,
            pair[1].epoch,
            pair[0].loss,
            pair[1].loss
        );
    }
}

#[test]
fn same_seed_gives_bit_identical_parameters() {
    let scenes = overfit_set(4);
    let config = TrainConfig { epochs: 3, seed: 11, ..Default::default() };
    let a = train(small_model(2), &scenes, &scenes, &config, &NetOptions::default()).unwrap();
    let b = train(small_model(2), &scenes, &scenes, &config, &NetOptions::default()).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);

    let other_seed = TrainConfig { seed: 12, ..config };
    let c = train(small_model(2), &scenes, &scenes, &other_seed, &NetOptions::default()).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn validation_ir_is_recorded() {
    let scenes = overfit_set(4);
    let config = TrainConfig { epochs: 2, seed: 5, ..Default::default() };
    let out = train(small_model(3), &scenes, &scenes, &config, &NetOptions::default()).unwrap();
    for rec in &out.history {
        assert!((0.0..=1.0).contains(&rec.val_ir));
    }
}

#[test]
fn invalid_configs_are_named() {
    let scenes = overfit_set(1);
    let bad_lr = TrainConfig { learning_rate: 0.0, ..Default::default() };
    let err = train(small_model(4), &scenes, &[], &bad_lr, &NetOptions::default()).unwrap_err();
    assert!(err.to_string().contains("learning_rate"), "{err}");

    let bad_tau = TrainConfig { tau: 1.5, ..Default::default() };
    let err = train(small_model(4), &scenes, &[], &bad_tau, &NetOptions::default()).unwrap_err();
    assert!(err.to_string().contains("tau"), "{err}");
}

#[test]
fn focal_loss_trains_too() {
    let scenes = overfit_set(4);
    let config = TrainConfig {
        epochs: 5,
        seed: 7,
        loss: LossKind::Focal { alpha: 0.25, gamma: 2.0 },
        ..Default::default()
    };
    let out = train(small_model(5), &scenes, &[], &config, &NetOptions::default()).unwrap();
    assert!(out.history.last().unwrap().loss < out.history[0].loss);
}
