//! Command-line front end: generate synthetic datasets, train the filter,
//! score and filter correspondence files, evaluate against ground truth,
//! and run the ablation grid.

mod commands;
mod config;
mod selftest;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "i2pfilter", version, about = "Outlier rejection for image-to-point-cloud correspondences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Args, Clone, Default)]
struct CommonFlags {
    /// Key-value config file (key = value per line)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<command>-<timestamp>-seed<seed>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score threshold for filtering
    #[arg(long)]
    tau: Option<f64>,
    /// Consistency sensitivity parameter
    #[arg(long)]
    sigma_d: Option<f64>,
    /// Consistency mode: angle | distance
    #[arg(long)]
    mode: Option<String>,
    /// Disable consistency reweighting in attention
    #[arg(long)]
    no_reweight: bool,
    /// Disable the local/global cross-attention exchange
    #[arg(long)]
    no_cross_attention: bool,
    /// Disable estimate-cloud scale alignment
    #[arg(long)]
    no_scale_alignment: bool,
    /// RANSAC iteration count
    #[arg(long)]
    ransac_iters: Option<usize>,
}

/// Graph/pipeline geometry, needed wherever scenes are prepared.
#[derive(Args, Clone, Default)]
struct PipelineFlags {
    /// Local group size K
    #[arg(long)]
    k: Option<usize>,
    /// Global group size
    #[arg(long)]
    k_global: Option<usize>,
    /// Global keypoint count M
    #[arg(long)]
    keypoints: Option<usize>,
    /// Node count V (0 = ceil(N/16))
    #[arg(long)]
    nodes: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Decoupled weight decay
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Scenes per optimizer step
    #[arg(long)]
    batch_size: Option<usize>,
    /// Loss: bce | focal
    #[arg(long)]
    loss: Option<String>,
    /// Feature width of the attention stack
    #[arg(long)]
    d_model: Option<usize>,
    /// Attention heads
    #[arg(long)]
    heads: Option<usize>,
    /// Attention block count
    #[arg(long)]
    blocks: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest
    Generate {
        #[command(flatten)]
        common: CommonFlags,
        /// Number of scenes
        #[arg(long)]
        scenes: Option<usize>,
        /// Correspondences per scene
        #[arg(long)]
        n_points: Option<usize>,
        /// Fraction of injected outliers
        #[arg(long)]
        outlier_ratio: Option<f64>,
        /// uniform_resample | pixel_shuffle
        #[arg(long)]
        outlier_mode: Option<String>,
        /// Lower bound of the per-scene depth scale
        #[arg(long)]
        scale_min: Option<f64>,
        /// Upper bound of the per-scene depth scale
        #[arg(long)]
        scale_max: Option<f64>,
        /// Constant per-scene depth bias, meters
        #[arg(long)]
        depth_bias: Option<f64>,
        /// Relative multiplicative depth noise
        #[arg(long)]
        depth_noise: Option<f64>,
        /// Gaussian pixel noise, pixels
        #[arg(long)]
        pixel_noise: Option<f64>,
        /// Put every scene in the test split
        #[arg(long)]
        force_test: bool,
    },
    /// Train the filter network on a generated dataset
    Train {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        pipeline: PipelineFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Dataset directory (holds manifest.txt)
        #[arg(long)]
        data: PathBuf,
    },
    /// Score one correspondence file and write the filtered set
    Filter {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        pipeline: PipelineFlags,
        /// Correspondence file
        #[arg(long)]
        data: PathBuf,
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
    },
    /// Evaluate scenes (optionally filtering through a checkpoint first)
    Evaluate {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        pipeline: PipelineFlags,
        /// Dataset directory or a single correspondence file
        #[arg(long)]
        data: PathBuf,
        /// Optional model checkpoint; metrics then cover the filtered sets
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the ablation grid and the tau sweep
    Ablate {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        pipeline: PipelineFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the built-in invariant suites
    Selftest,
}

fn merged_config(
    common: &CommonFlags,
    pipeline: Option<&PipelineFlags>,
    train: Option<&TrainFlags>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.tau {
        cfg.tau = v;
    }
    if let Some(v) = common.sigma_d {
        cfg.sigma_d = v;
    }
    if let Some(v) = &common.mode {
        cfg.apply_kv("mode", v)?;
    }
    if common.no_reweight {
        cfg.no_reweight = true;
    }
    if common.no_cross_attention {
        cfg.no_cross_attention = true;
    }
    if common.no_scale_alignment {
        cfg.no_scale_alignment = true;
    }
    if let Some(v) = common.ransac_iters {
        cfg.ransac_iters = v;
    }
    if let Some(p) = pipeline {
        if let Some(v) = p.k {
            cfg.k = v;
        }
        if let Some(v) = p.k_global {
            cfg.k_global = v;
        }
        if let Some(v) = p.keypoints {
            cfg.keypoints = v;
        }
        if let Some(v) = p.nodes {
            cfg.nodes = v;
        }
    }
    if let Some(t) = train {
        if let Some(v) = t.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = t.lr {
            cfg.lr = v;
        }
        if let Some(v) = t.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = t.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = &t.loss {
            cfg.apply_kv("loss", v)?;
        }
        if let Some(v) = t.d_model {
            cfg.d_model = v;
        }
        if let Some(v) = t.heads {
            cfg.heads = v;
        }
        if let Some(v) = t.blocks {
            cfg.blocks = v;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate {
            common,
            scenes,
            n_points,
            outlier_ratio,
            outlier_mode,
            scale_min,
            scale_max,
            depth_bias,
            depth_noise,
            pixel_noise,
            force_test,
        } => (|| -> Result<()> {
            let mut cfg = merged_config(common, None, None)?;
            if let Some(v) = scenes {
                cfg.scenes = *v;
            }
            if let Some(v) = n_points {
                cfg.n_points = *v;
            }
            if let Some(v) = outlier_ratio {
                cfg.outlier_ratio = *v;
            }
            if let Some(v) = outlier_mode {
                cfg.apply_kv("outlier_mode", v)?;
            }
            if let Some(v) = scale_min {
                cfg.scale_min = *v;
            }
            if let Some(v) = scale_max {
                cfg.scale_max = *v;
            }
            if let Some(v) = depth_bias {
                cfg.depth_bias = *v;
            }
            if let Some(v) = depth_noise {
                cfg.depth_noise = *v;
            }
            if let Some(v) = pixel_noise {
                cfg.pixel_noise = *v;
            }
            if *force_test {
                cfg.force_test = true;
            }
            cfg.validate()?;
            commands::run_generate(&cfg, &common.out)
        })(),
        Command::Train { common, pipeline, train, data } => {
            merged_config(common, Some(pipeline), Some(train))
                .and_then(|cfg| commands::run_train(&cfg, data, &common.out))
        }
        Command::Filter { common, pipeline, data, model } => {
            merged_config(common, Some(pipeline), None)
                .and_then(|cfg| commands::run_filter(&cfg, data, model, &common.out))
        }
        Command::Evaluate { common, pipeline, data, model } => {
            merged_config(common, Some(pipeline), None)
                .and_then(|cfg| commands::run_evaluate(&cfg, data, model, &common.out))
        }
        Command::Ablate { common, pipeline, train, data } => {
            merged_config(common, Some(pipeline), Some(train))
                .and_then(|cfg| commands::run_ablate(&cfg, data, &common.out))
        }
        Command::Selftest => {
            let failures = selftest::run_selftest();
            if failures == 0 {
                println!("selftest: all suites passed");
                return;
            }
            eprintln!("selftest: {failures} suite(s) failed");
            std::process::exit(1);
        }
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
