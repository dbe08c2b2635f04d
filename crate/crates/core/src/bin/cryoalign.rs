//! Command-line driver for the density-map alignment pipeline.
//!
//! Subcommands: `global` (two-stage whole-map alignment), `local` (sliding
//! translational masks, ranked candidates), `score` (evaluate a given
//! transform), `synth` (generate synthetic fixtures with ground truth), and
//! `sample` (debug export of the sampled cloud as PLY).
//!
//! Exit codes: 0 success, 1 I/O or parse errors, 2 no solution (empty cloud
//! or keypoints, coarse failure, no candidates).

use clap::{Args, Parser, Subcommand};
use cryoalign::cloud::{
    extract_keypoints_labeled, mean_shift_converge, sample_grid_with, write_cloud_ply,
    MeanShiftParams,
};
use cryoalign::config::{ConfigPatch, RunConfig, DEFAULT_INTERVAL_GLOBAL};
use cryoalign::local::FULL_WINDOW_RATIO;
use cryoalign::synth::build_synthetic;
use cryoalign::transform::SO3_INPUT_TOL;
use cryoalign::{
    align_global, align_local, read_mrc, similarity, write_mrc, DensityMap, Error, RigidTransform,
    SynthSpec,
};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Rigid alignment of cryo-EM density maps via feature matching.
#[derive(Parser)]
#[command(name = "cryoalign", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Sampling interval in Å (default 5.0; use ~3.0 for small inputs).
    #[arg(short = 'i', long)]
    interval: Option<f64>,

    /// Contour level override applied to every input map.
    #[arg(long)]
    contour: Option<f32>,

    /// Seed for all randomized choices.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (default: all cores; env CRYOALIGN_THREADS as
    /// fallback).
    #[arg(long)]
    threads: Option<usize>,

    /// Config file: JSON or `key = value` lines. Flags override the file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Align map A onto map B with the two-stage global pipeline.
    Global {
        /// Source map (MRC).
        #[arg(short = 'a')]
        map_a: PathBuf,
        /// Target map (MRC).
        #[arg(short = 'b')]
        map_b: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Fit a small map into a large one with sliding translational masks.
    Local {
        /// Small map (MRC); inputs are swapped internally if it is larger.
        #[arg(short = 'a')]
        map_a: PathBuf,
        /// Large map (MRC).
        #[arg(short = 'b')]
        map_b: PathBuf,
        /// Skip masking: single global alignment, emitted as one candidate.
        #[arg(long)]
        no_mask: bool,
        /// Ranked candidates to emit.
        #[arg(long)]
        candidates: Option<usize>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Score a given transform of map A against map B.
    Score {
        #[arg(short = 'a')]
        map_a: PathBuf,
        #[arg(short = 'b')]
        map_b: PathBuf,
        /// JSON file: a row-major 4×4 matrix array, or {"transform": [...]}.
        #[arg(short = 't', long)]
        transform: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Generate a synthetic map plus ground-truth JSON from a spec.
    Synth {
        /// Spec JSON path.
        #[arg(short = 's', long)]
        spec: PathBuf,
        /// Output MRC path.
        #[arg(long)]
        out_mrc: PathBuf,
        /// Ground-truth JSON path.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Export a map's sampled cloud, vectors, and keypoints as ASCII PLY.
    Sample {
        /// Input map (MRC).
        #[arg(short = 'a')]
        map: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_no_solution() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Global {
            map_a,
            map_b,
            common,
        } => cmd_global(&map_a, &map_b, &common),
        Command::Local {
            map_a,
            map_b,
            no_mask,
            candidates,
            common,
        } => cmd_local(&map_a, &map_b, no_mask, candidates, &common),
        Command::Score {
            map_a,
            map_b,
            transform,
            common,
        } => cmd_score(&map_a, &map_b, &transform, &common),
        Command::Synth {
            spec,
            out_mrc,
            truth_out,
        } => cmd_synth(&spec, &out_mrc, truth_out.as_deref()),
        Command::Sample { map, common } => cmd_sample(&map, &common),
    }
}

/// Builds the resolved config: defaults ← config file ← flags.
fn resolve_config(common: &CommonOpts, candidates: Option<usize>) -> Result<RunConfig, Error> {
    let file_patch = match &common.config {
        Some(path) => ConfigPatch::from_file(path)?,
        None => ConfigPatch::default(),
    };
    let flag_patch = ConfigPatch {
        sampling_interval: common.interval,
        seed: common.seed,
        candidates,
        ..Default::default()
    };
    RunConfig::resolve(
        DEFAULT_INTERVAL_GLOBAL,
        &flag_patch.merged_over(&file_patch),
    )
}

fn configure_threads(common: &CommonOpts) {
    let threads = common.threads.or_else(|| {
        std::env::var("CRYOALIGN_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        // A second build_global call (e.g. in tests driving the binary
        // twice) would fail; the pool is process-global and set-once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn load_map(path: &Path, common: &CommonOpts) -> Result<DensityMap, Error> {
    let mut map = read_mrc(path)?;
    if let Some(contour) = common.contour {
        map.contour_level = contour;
    }
    Ok(map)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, json.as_bytes()).map_err(|e| Error::io(path, e))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_global(map_a: &Path, map_b: &Path, common: &CommonOpts) -> Result<(), Error> {
    configure_threads(common);
    let cfg = resolve_config(common, None)?;
    let src = load_map(map_a, common)?;
    let tgt = load_map(map_b, common)?;
    let alignment = align_global(&src, &tgt, &cfg)?;
    emit(&alignment, common.out.as_deref())
}

#[derive(Serialize)]
struct LocalOutput<'a> {
    candidates: &'a [cryoalign::CandidateResult],
}

fn cmd_local(
    map_a: &Path,
    map_b: &Path,
    no_mask: bool,
    candidates: Option<usize>,
    common: &CommonOpts,
) -> Result<(), Error> {
    configure_threads(common);
    let cfg = resolve_config(common, candidates)?;
    let src = load_map(map_a, common)?;
    let tgt = load_map(map_b, common)?;

    let list = if no_mask {
        let vol_a = src.above_contour_bbox_volume();
        let vol_b = tgt.above_contour_bbox_volume();
        let ratio = if vol_a.max(vol_b) > 0.0 {
            vol_a.min(vol_b) / vol_a.max(vol_b)
        } else {
            0.0
        };
        if ratio < FULL_WINDOW_RATIO {
            eprintln!(
                "note: --no-mask with volume ratio {ratio:.2} (< {FULL_WINDOW_RATIO}); masked \
                 mode is usually more reliable at low overlap"
            );
        }
        let alignment = align_global(&src, &tgt, &cfg)?;
        vec![cryoalign::CandidateResult {
            transform: alignment.transform,
            score: alignment.score,
            mask_origin: [0.0, 0.0, 0.0],
            rank: 1,
        }]
    } else {
        align_local(&src, &tgt, &cfg)?
    };
    emit(&LocalOutput { candidates: &list }, common.out.as_deref())
}

/// Accepts either a bare row-major 16-array or {"transform": [...]}.
fn parse_transform_json(path: &Path) -> Result<RigidTransform, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let array = match &value {
        serde_json::Value::Object(map) => map.get("transform").cloned().ok_or_else(|| {
            Error::InvalidTransform("JSON object lacks a \"transform\" field".into())
        })?,
        other => other.clone(),
    };
    let numbers: Vec<f64> = serde_json::from_value(array)?;
    let matrix: [f64; 16] = numbers.try_into().map_err(|v: Vec<f64>| {
        Error::InvalidTransform(format!("expected 16 matrix entries, got {}", v.len()))
    })?;
    RigidTransform::from_mat4_row_major(&matrix, SO3_INPUT_TOL)
}

fn cmd_score(
    map_a: &Path,
    map_b: &Path,
    transform_path: &Path,
    common: &CommonOpts,
) -> Result<(), Error> {
    configure_threads(common);
    let cfg = resolve_config(common, None)?;
    let transform = parse_transform_json(transform_path)?;
    let src = load_map(map_a, common)?;
    let tgt = load_map(map_b, common)?;
    let src_cloud = cryoalign::sample_grid(&src, cfg.sampling_interval)?;
    let tgt_cloud = cryoalign::sample_grid(&tgt, cfg.sampling_interval)?;
    let score = similarity(
        &src_cloud.transformed(&transform),
        &tgt_cloud,
        cfg.dot_threshold,
        cfg.pair_radius,
        cfg.grid_cell,
    )?;
    emit(&score, common.out.as_deref())
}

fn cmd_synth(spec_path: &Path, out_mrc: &Path, truth_out: Option<&Path>) -> Result<(), Error> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SynthSpec = serde_json::from_str(&text)?;
    let (map, truth) = build_synthetic(&spec)?;
    write_mrc(&map, out_mrc)?;
    if let Some(path) = truth_out {
        let json = serde_json::to_string_pretty(&truth)?;
        std::fs::write(path, json.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleSummary {
    points: usize,
    keypoints: usize,
    sampling_interval: f64,
    contour_level: f32,
}

fn cmd_sample(map_path: &Path, common: &CommonOpts) -> Result<(), Error> {
    configure_threads(common);
    let cfg = resolve_config(common, None)?;
    let map = load_map(map_path, common)?;
    let ms_params = MeanShiftParams {
        bandwidth: cfg.bandwidth,
        max_iters: cfg.mean_shift_max_iters,
        tol: cfg.mean_shift_tol,
    };
    let cloud = sample_grid_with(&map, cfg.sampling_interval, &ms_params)?;
    let shifted = mean_shift_converge(&cloud, &map, &ms_params)?;
    let (keypoints, labels) = extract_keypoints_labeled(
        &shifted,
        cfg.dbscan_eps,
        cfg.dbscan_min_pts,
        cfg.sampling_interval,
    )?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| map_path.with_extension("ply"));
    write_cloud_ply(&out, &cloud, Some(&labels), Some(&keypoints))?;
    let summary = SampleSummary {
        points: cloud.len(),
        keypoints: keypoints.len(),
        sampling_interval: cfg.sampling_interval,
        contour_level: map.contour_level,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    println!("{json}");
    Ok(())
}
