//! Command implementations: generate, train, filter, evaluate, ablate.

use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use i2pfilter::eval::{aggregate, evaluate_scene, SceneEvaluation};
use i2pfilter::geom::CorrespondenceSet;
use i2pfilter::io;
use i2pfilter::net::{score_scene, train, LabeledScene, Model, NetOptions};
use i2pfilter::pipeline::{prepare_scene, PipelineConfig};
use i2pfilter::synth::{make_dataset, DatasetConfig, ManifestEntry, Split};
use std::fs;
use std::path::{Path, PathBuf};

pub fn ensure_out_dir(out: &Option<PathBuf>, command: &str, seed: u64) -> Result<PathBuf> {
    let dir = match out {
        Some(d) => d.clone(),
        None => {
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from("runs").join(format!("{command}-{stamp}-seed{seed}"))
        }
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join("config.txt"), cfg.echo())?;
    Ok(())
}

pub fn run_generate(cfg: &RunConfig, out: &Option<PathBuf>) -> Result<()> {
    let dir = ensure_out_dir(out, "generate", cfg.seed)?;
    let dataset_config = DatasetConfig {
        n_scenes: cfg.scenes,
        template: cfg.scene_template(),
        scale_range: (cfg.scale_min, cfg.scale_max),
        master_seed: cfg.seed,
        force_test: cfg.force_test,
    };
    let (scenes, manifest) = make_dataset(&dataset_config)?;
    let mut files = Vec::with_capacity(scenes.len());
    for (scene, entry) in scenes.iter().zip(&manifest) {
        let name = format!("scene_{:04}.txt", entry.index);
        io::save_set(&scene.corrs, &dir.join(&name))?;
        files.push(name);
    }
    fs::write(dir.join("manifest.txt"), io::write_manifest(&manifest, &files))?;
    echo_config(cfg, &dir)?;
    println!("wrote {} scenes to {}", scenes.len(), dir.display());
    Ok(())
}

pub struct LoadedScene {
    pub file: String,
    pub entry: ManifestEntry,
    pub corrs: CorrespondenceSet,
}

pub fn load_dataset(data: &Path) -> Result<Vec<LoadedScene>> {
    let manifest_path = data.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let entries = io::parse_manifest(&text)?;
    let mut out = Vec::with_capacity(entries.len());
    for (file, entry) in entries {
        let corrs = io::load_set(&data.join(&file))?;
        out.push(LoadedScene { file, entry, corrs });
    }
    Ok(out)
}

fn labeled(scene: &LoadedScene, pipe: &PipelineConfig) -> Result<LabeledScene> {
    let prepared = prepare_scene(&scene.corrs, pipe)?;
    let labels = scene
        .corrs
        .gt_labels
        .clone()
        .with_context(|| format!("{} carries no labels", scene.file))?;
    Ok(LabeledScene { scene: prepared, labels })
}

fn train_model_on(
    cfg: &RunConfig,
    pipe: &PipelineConfig,
    opts: &NetOptions,
    scenes: &[LoadedScene],
) -> Result<(Model, Vec<i2pfilter::net::EpochRecord>)> {
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    for scene in scenes {
        match scene.entry.split {
            Split::Train => train_set.push(labeled(scene, pipe)?),
            Split::Val => val_set.push(labeled(scene, pipe)?),
            Split::Test => {}
        }
    }
    if train_set.is_empty() {
        bail!("dataset contains no training scenes");
    }
    let model = Model::init(cfg.model_config(), cfg.seed)?;
    let outcome = train(model, &train_set, &val_set, &cfg.train_config(), opts)?;
    Ok((outcome.model, outcome.history))
}

pub fn run_train(cfg: &RunConfig, data: &Path, out: &Option<PathBuf>) -> Result<()> {
    let dir = ensure_out_dir(out, "train", cfg.seed)?;
    let scenes = load_dataset(data)?;
    let (model, history) = train_model_on(cfg, &cfg.pipeline(), &cfg.net_options(), &scenes)?;
    io::save_model(&model, &dir.join("checkpoint.bin"))?;
    fs::write(dir.join("history.csv"), io::write_history_csv(&history))?;
    echo_config(cfg, &dir)?;
    if let Some(last) = history.last() {
        println!(
            "trained {} epochs, final loss {:.6}, val IR {:.4} -> {}",
            history.len(),
            last.loss,
            last.val_ir,
            dir.display()
        );
    }
    Ok(())
}

pub fn run_filter(
    cfg: &RunConfig,
    data_file: &Path,
    model_path: &Path,
    out: &Option<PathBuf>,
) -> Result<()> {
    let dir = ensure_out_dir(out, "filter", cfg.seed)?;
    let corrs = io::load_set(data_file)?;
    let model = io::load_model(model_path)?;
    let prepared = prepare_scene(&corrs, &cfg.pipeline())?;
    let scores = score_scene(&model, &prepared, &cfg.net_options())?;
    let result = i2pfilter::net::filter(&corrs, &scores, cfg.tau)?;
    if result.empty_warning {
        eprintln!("warning: no correspondence scored above tau = {}", cfg.tau);
    }

    io::save_set(&result.retained, &dir.join("filtered.txt"))?;
    let mut csv = String::from("index,score,kept\n");
    for (i, s) in scores.iter().enumerate() {
        csv.push_str(&format!("{},{},{}\n", i, s, u8::from(result.kept_indices.contains(&i))));
    }
    fs::write(dir.join("scores.csv"), csv)?;
    echo_config(cfg, &dir)?;
    println!(
        "kept {}/{} correspondences at tau {} -> {}",
        result.retained.len(),
        corrs.len(),
        cfg.tau,
        dir.display()
    );
    Ok(())
}

fn evaluate_sets(
    cfg: &RunConfig,
    named_sets: &[(String, CorrespondenceSet)],
    model: Option<&Model>,
) -> Result<Vec<(String, SceneEvaluation)>> {
    let thresholds = cfg.thresholds();
    let opts = cfg.net_options();
    let pipe = cfg.pipeline();
    let mut rows = Vec::with_capacity(named_sets.len());
    for (name, corrs) in named_sets {
        let evaluated = match model {
            Some(m) => {
                let prepared = prepare_scene(corrs, &pipe)?;
                let scores = score_scene(m, &prepared, &opts)?;
                let result = i2pfilter::net::filter(corrs, &scores, cfg.tau)?;
                evaluate_scene(&result.retained, &thresholds)?
            }
            None => evaluate_scene(corrs, &thresholds)?,
        };
        rows.push((name.clone(), evaluated));
    }
    Ok(rows)
}

pub fn run_evaluate(
    cfg: &RunConfig,
    data: &Path,
    model_path: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let dir = ensure_out_dir(out, "evaluate", cfg.seed)?;
    let named_sets: Vec<(String, CorrespondenceSet)> = if data.is_dir() {
        load_dataset(data)?
            .into_iter()
            .filter(|s| s.entry.split == Split::Test)
            .map(|s| (s.file, s.corrs))
            .collect()
    } else {
        vec![(
            data.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scene".into()),
            io::load_set(data)?,
        )]
    };
    if named_sets.is_empty() {
        bail!("no test scenes found under {}", data.display());
    }
    let model = match model_path {
        Some(p) => Some(io::load_model(p)?),
        None => None,
    };
    let rows = evaluate_sets(cfg, &named_sets, model.as_ref())?;
    let evals: Vec<SceneEvaluation> = rows.iter().map(|(_, e)| *e).collect();
    let report = aggregate(&evals, cfg.thresholds());

    fs::write(dir.join("metrics.csv"), io::write_metrics_csv(&rows))?;
    fs::write(dir.join("summary.txt"), io::write_summary(&report))?;
    echo_config(cfg, &dir)?;
    println!(
        "{} scenes: IR {:.4}, MRE {:.4} deg, MTE {:.5} m, RR {:.4} -> {}",
        report.scenes,
        report.inlier_ratio,
        report.mean_rotation_error_deg,
        report.mean_translation_error_m,
        report.registration_recall,
        dir.display()
    );
    Ok(())
}

/// The ablation grid: the full pipeline, the three module removals, the
/// distance-consistency swap, and the tau sweep on the full model.
pub fn run_ablate(cfg: &RunConfig, data: &Path, out: &Option<PathBuf>) -> Result<()> {
    let dir = ensure_out_dir(out, "ablate", cfg.seed)?;
    let scenes = load_dataset(data)?;
    let test_sets: Vec<(String, CorrespondenceSet)> = scenes
        .iter()
        .filter(|s| s.entry.split == Split::Test)
        .map(|s| (s.file.clone(), s.corrs.clone()))
        .collect();
    if test_sets.is_empty() {
        bail!("no test scenes found under {}", data.display());
    }

    struct Variant {
        name: &'static str,
        cfg: RunConfig,
    }
    let mut variants = vec![Variant { name: "full", cfg: cfg.clone() }];
    variants.push(Variant {
        name: "no_scale_alignment",
        cfg: RunConfig { no_scale_alignment: true, ..cfg.clone() },
    });
    variants.push(Variant {
        name: "distance_consistency",
        cfg: RunConfig { mode: i2pfilter::geom::ConsistencyMode::Distance, ..cfg.clone() },
    });
    variants.push(Variant {
        name: "no_cross_attention",
        cfg: RunConfig { no_cross_attention: true, ..cfg.clone() },
    });
    variants.push(Variant {
        name: "no_reweight",
        cfg: RunConfig { no_reweight: true, ..cfg.clone() },
    });

    let mut csv = String::from("variant,tau,ir,rr,mre_deg,mte_m\n");
    let mut table = format!(
        "{:<24} {:>6} {:>8} {:>8} {:>9} {:>9}\n",
        "variant", "tau", "IR", "RR", "MRE_deg", "MTE_m"
    );
    let mut full_model: Option<Model> = None;

    for variant in &variants {
        let vcfg = &variant.cfg;
        let (model, _) = train_model_on(vcfg, &vcfg.pipeline(), &vcfg.net_options(), &scenes)?;
        let rows = evaluate_sets(vcfg, &test_sets, Some(&model))?;
        let evals: Vec<SceneEvaluation> = rows.iter().map(|(_, e)| *e).collect();
        let report = aggregate(&evals, vcfg.thresholds());
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            variant.name,
            vcfg.tau,
            report.inlier_ratio,
            report.registration_recall,
            report.mean_rotation_error_deg,
            report.mean_translation_error_m
        ));
        table.push_str(&format!(
            "{:<24} {:>6} {:>8.4} {:>8.4} {:>9.4} {:>9.5}\n",
            variant.name,
            vcfg.tau,
            report.inlier_ratio,
            report.registration_recall,
            report.mean_rotation_error_deg,
            report.mean_translation_error_m
        ));
        if variant.name == "full" {
            full_model = Some(model);
        }
        println!("ablation {}: IR {:.4} RR {:.4}", variant.name, report.inlier_ratio, report.registration_recall);
    }

    // tau sweep on the full model
    let full_model = full_model.expect("full variant runs first");
    for tau in [0.2, 0.4, 0.5] {
        let sweep_cfg = RunConfig { tau, ..cfg.clone() };
        let rows = evaluate_sets(&sweep_cfg, &test_sets, Some(&full_model))?;
        let evals: Vec<SceneEvaluation> = rows.iter().map(|(_, e)| *e).collect();
        let report = aggregate(&evals, sweep_cfg.thresholds());
        csv.push_str(&format!(
            "tau_sweep,{},{},{},{},{}\n",
            tau,
            report.inlier_ratio,
            report.registration_recall,
            report.mean_rotation_error_deg,
            report.mean_translation_error_m
        ));
        table.push_str(&format!(
            "{:<24} {:>6} {:>8.4} {:>8.4} {:>9.4} {:>9.5}\n",
            "tau_sweep",
            tau,
            report.inlier_ratio,
            report.registration_recall,
            report.mean_rotation_error_deg,
            report.mean_translation_error_m
        ));
        println!("tau {}: IR {:.4} RR {:.4}", tau, report.inlier_ratio, report.registration_recall);
    }

    fs::write(dir.join("ablation.csv"), csv)?;
    fs::write(dir.join("table.txt"), table)?;
    echo_config(cfg, &dir)?;
    println!("ablation grid written to {}", dir.display());
    Ok(())
}
