//! Built-in invariant suite: brute-force oracles and algebraic identities,
//! runnable in the field without the test harness.

use i2pfilter::geom::{
    back_project, consistency_matrix_points, project, CameraIntrinsics, CenteredClouds,
    ConsistencyConfig, ConsistencyMode, Correspondence, CorrespondenceSet, Pixel, Point3,
};
use i2pfilter::graph::{knn_assign, sample_nodes};
use i2pfilter::net::{
    loss_and_grad, loss_only, reweighted_attention, LossKind, Model, ModelConfig, NetOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn rand_point(rng: &mut ChaCha8Rng, span: f64) -> Point3 {
    Point3::new(
        rng.random_range(-span..span),
        rng.random_range(-span..span),
        rng.random_range(-span..span),
    )
}

fn test_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0, 640.0, 480.0).unwrap()
}

fn random_set(n: usize, seed: u64) -> CorrespondenceSet {
    let k = test_intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|_| Correspondence {
            pixel: Pixel::new(rng.random_range(5.0..635.0), rng.random_range(5.0..475.0)),
            point: rand_point(&mut rng, 3.0),
            est_depth: rng.random_range(0.5..6.0),
            est_point: rand_point(&mut rng, 3.0),
        })
        .collect();
    CorrespondenceSet::new(items, k)
}

fn check_scale_translation_invariance() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..200 {
        let n = rng.random_range(8..48);
        let est: Vec<Point3> = (0..n).map(|_| rand_point(&mut rng, 3.0)).collect();
        let refp: Vec<Point3> = (0..n).map(|_| rand_point(&mut rng, 3.0)).collect();
        let s = rng.random_range(0.1..10.0);
        let t = rand_point(&mut rng, 5.0);
        let moved: Vec<Point3> = est.iter().map(|p| p.scaled(s) + t).collect();
        let group: Vec<usize> = (0..n).collect();
        let cfg = ConsistencyConfig::default();
        let a = consistency_matrix_points(&CenteredClouds::from_points(&est, &refp).unwrap(), &group, &cfg)
            .unwrap();
        let b =
            consistency_matrix_points(&CenteredClouds::from_points(&moved, &refp).unwrap(), &group, &cfg)
                .unwrap();
        let max = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if max > 1e-9 {
            return Err(format!("case {case}: max deviation {max}"));
        }
    }
    Ok(())
}

fn check_consistency_brute_force() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for case in 0..20 {
        let n = rng.random_range(10..80);
        let set = random_set(n, 300 + case);
        let clouds = CenteredClouds::from_set(&set).unwrap();
        let group: Vec<usize> = (0..n).collect();
        for mode in [ConsistencyMode::Angle, ConsistencyMode::Distance] {
            let cfg = ConsistencyConfig { mode, ..Default::default() };
            let m = consistency_matrix_points(&clouds, &group, &cfg).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j {
                        1.0
                    } else {
                        match mode {
                            ConsistencyMode::Angle => {
                                let (oi, oj) = (&clouds.est[i], &clouds.est[j]);
                                let (pi, pj) = (&clouds.refp[i], &clouds.refp[j]);
                                let co = oi.dot(oj) / (oi.norm() * oj.norm());
                                let cp = pi.dot(pj) / (pi.norm() * pj.norm());
                                let delta = (co.abs() - cp.abs()).abs();
                                (1.0 - delta * delta / (cfg.sigma_d * cfg.sigma_d)).max(0.0)
                            }
                            ConsistencyMode::Distance => {
                                let d = (clouds.est_raw[i] - clouds.est_raw[j]).norm()
                                    - (clouds.ref_raw[i] - clouds.ref_raw[j]).norm();
                                (1.0 - d * d / (cfg.sigma_d * cfg.sigma_d)).max(0.0)
                            }
                        }
                    };
                    if m.get(i, j) != expect {
                        return Err(format!(
                            "case {case} mode {mode:?} ({i},{j}): {} vs oracle {expect}",
                            m.get(i, j)
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_knn_and_fps() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for case in 0..10 {
        let n = rng.random_range(20..100);
        let set = random_set(n, 500 + case);
        let v = rng.random_range(2..8).min(n);
        let nodes = sample_nodes(&set, v, 0).map_err(|e| e.to_string())?;
        let again = sample_nodes(&set, v, 0).map_err(|e| e.to_string())?;
        if nodes != again {
            return Err(format!("case {case}: FPS not deterministic"));
        }
        let k = rng.random_range(1..10).min(n);
        let groups = knn_assign(&nodes, &set, k).map_err(|e| e.to_string())?;
        let refp = set.ref_points();
        for (node, group) in nodes.points.iter().zip(&groups) {
            let mut remaining: Vec<usize> = (0..n).collect();
            let mut expect = Vec::new();
            for _ in 0..k {
                let mut best = 0;
                for pos in 1..remaining.len() {
                    let (i, j) = (remaining[pos], remaining[best]);
                    let di = (refp[i] - *node).norm_squared();
                    let dj = (refp[j] - *node).norm_squared();
                    if di < dj || (di == dj && i < j) {
                        best = pos;
                    }
                }
                expect.push(remaining.remove(best));
            }
            if group != &expect {
                return Err(format!("case {case}: knn differs from oracle"));
            }
        }
    }
    Ok(())
}

fn check_projection_roundtrip() -> Result<(), String> {
    let k = test_intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    for _ in 0..500 {
        let pixel = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        let depth = rng.random_range(0.05..50.0);
        let p = back_project(&pixel, depth, &k).map_err(|e| e.to_string())?;
        let back = project(&p, &k).map_err(|e| e.to_string())?;
        if back.distance(&pixel) > 1e-9 {
            return Err(format!("roundtrip error {}", back.distance(&pixel)));
        }
    }
    Ok(())
}

fn check_attention_identity() -> Result<(), String> {
    let model = Model::init(ModelConfig { feat_dim: 24, d_model: 16, heads: 4, blocks: 1 }, 1)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let data: Vec<f64> = (0..160).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = i2pfilter::net::Tensor::matrix(10, 16, data).unwrap();
    let ones = i2pfilter::net::Tensor::matrix(10, 10, vec![1.0; 100]).unwrap();
    let w = &model.blocks[0].self_attn;
    let weighted = reweighted_attention(&f, &f, Some(&ones), w, 4, false).map_err(|e| e.to_string())?;
    let plain = reweighted_attention(&f, &f, None, w, 4, false).map_err(|e| e.to_string())?;
    let max = weighted
        .data()
        .iter()
        .zip(plain.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if max > 1e-12 {
        return Err(format!("identity deviation {max}"));
    }
    Ok(())
}

fn check_gradient_spot() -> Result<(), String> {
    use i2pfilter::graph::{build_graphs, GraphConfig};
    use i2pfilter::net::PreparedScene;
    let set = random_set(12, 800);
    let nodes = sample_nodes(&set, 2, 0).map_err(|e| e.to_string())?;
    let graph = build_graphs(
        &set,
        &nodes,
        &GraphConfig { k_local: 5, k_global: 4, global_keypoints: 8, ..Default::default() },
    )
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let feats_data: Vec<f64> = (0..12 * 24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let feats = i2pfilter::net::Tensor::matrix(12, 24, feats_data).unwrap();
    let scene = PreparedScene::new(feats, graph).map_err(|e| e.to_string())?;
    let labels: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
    let model = Model::init(ModelConfig { feat_dim: 24, d_model: 8, heads: 2, blocks: 1 }, 2)
        .map_err(|e| e.to_string())?;
    let opts = NetOptions::default();
    let (_, grads) =
        loss_and_grad(&model, &scene, &labels, &opts, LossKind::Bce).map_err(|e| e.to_string())?;
    let step = 1e-5;
    let gs = grads.params();
    for pi in (0..gs.len()).step_by(3) {
        let vi = gs[pi].len() / 2;
        let mut plus = model.clone();
        plus.params_mut()[pi].data_mut()[vi] += step;
        let lp = loss_only(&plus, &scene, &labels, &opts, LossKind::Bce).map_err(|e| e.to_string())?;
        let mut minus = model.clone();
        minus.params_mut()[pi].data_mut()[vi] -= step;
        let lm =
            loss_only(&minus, &scene, &labels, &opts, LossKind::Bce).map_err(|e| e.to_string())?;
        let numeric = (lp - lm) / (2.0 * step);
        let analytic = gs[pi].data()[vi];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        if rel > 1e-4 {
            return Err(format!("param {pi}: rel error {rel}"));
        }
    }
    Ok(())
}

fn check_text_roundtrip() -> Result<(), String> {
    let scene = i2pfilter::synth::generate_scene(&i2pfilter::synth::SceneConfig {
        n_points: 30,
        outlier_ratio: 0.3,
        depth_scale: 1.7,
        depth_noise_sigma: 0.01,
        seed: 900,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let text = i2pfilter::io::write_set_to_string(&scene.corrs);
    let parsed = i2pfilter::io::parse_set_from_str(&text).map_err(|e| e.to_string())?;
    if i2pfilter::io::write_set_to_string(&parsed) != text {
        return Err("text format does not round-trip".into());
    }
    Ok(())
}

/// Runs every suite, printing one line each; returns the number of failures.
pub fn run_selftest() -> usize {
    let suites: Vec<(&str, fn() -> Result<(), String>)> = vec![
        ("scale-translation invariance", check_scale_translation_invariance),
        ("consistency brute-force equality", check_consistency_brute_force),
        ("knn + fps oracles", check_knn_and_fps),
        ("projection roundtrip", check_projection_roundtrip),
        ("attention all-ones identity", check_attention_identity),
        ("analytic gradient spot check", check_gradient_spot),
        ("correspondence text roundtrip", check_text_roundtrip),
    ];
    let mut failures = 0;
    for (name, suite) in suites {
        let start = Instant::now();
        match suite() {
            Ok(()) => println!("selftest {name:<36} ok ({:?})", start.elapsed()),
            Err(msg) => {
                failures += 1;
                println!("selftest {name:<36} FAIL: {msg}");
            }
        }
    }
    failures
}
