//! End-to-end global alignment: sampling, keypoint extraction, description,
//! matching, coarse estimation, fine refinement, and scoring, with per-stage
//! wall-clock timings.

use crate::cloud::{extract_keypoints, mean_shift_converge, sample_grid_with, MeanShiftParams};
use crate::cloud::{KeyPointSet, SampledCloud};
use crate::config::RunConfig;
use crate::descriptor::{compute_descriptors, Descriptor};
use crate::error::{Error, Result};
use crate::map::DensityMap;
use crate::registration::{
    estimate_coarse, mutual_match, refine_sparse_icp, CoarseParams, FineParams,
};
use crate::scoring::{similarity, SimilarityScore};
use crate::transform::RigidTransform;
use nalgebra::Vector3;
use serde::Serialize;
use std::time::Instant;

/// Wall-clock milliseconds per pipeline stage.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimings {
    pub sample_ms: f64,
    pub keypoints_ms: f64,
    pub descriptors_ms: f64,
    pub match_ms: f64,
    pub coarse_ms: f64,
    pub fine_ms: f64,
    pub score_ms: f64,
}

impl StageTimings {
    /// Point-extraction share: everything up to and including descriptors.
    pub fn extract_ms(&self) -> f64 {
        self.sample_ms + self.keypoints_ms + self.descriptors_ms
    }

    /// Alignment share: matching through refinement.
    pub fn alignment_ms(&self) -> f64 {
        self.match_ms + self.coarse_ms + self.fine_ms
    }

    fn add(&mut self, other: &StageTimings) {
        self.sample_ms += other.sample_ms;
        self.keypoints_ms += other.keypoints_ms;
        self.descriptors_ms += other.descriptors_ms;
        self.match_ms += other.match_ms;
        self.coarse_ms += other.coarse_ms;
        self.fine_ms += other.fine_ms;
        self.score_ms += other.score_ms;
    }
}

/// Sampled cloud, keypoints, and descriptors of one map, with the timings
/// of the three extraction stages.
#[derive(Debug, Clone)]
pub struct ExtractedFeatures {
    pub cloud: SampledCloud,
    pub keypoints: KeyPointSet,
    pub descriptors: Vec<Descriptor>,
    pub timings: StageTimings,
}

/// Runs sampling → mean shift → clustering → description on one map.
pub fn extract_features(map: &DensityMap, cfg: &RunConfig) -> Result<ExtractedFeatures> {
    let ms_params = MeanShiftParams {
        bandwidth: cfg.bandwidth,
        max_iters: cfg.mean_shift_max_iters,
        tol: cfg.mean_shift_tol,
    };
    let mut timings = StageTimings::default();

    let start = Instant::now();
    let cloud = sample_grid_with(map, cfg.sampling_interval, &ms_params)?;
    timings.sample_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let shifted = mean_shift_converge(&cloud, map, &ms_params)?;
    let keypoints = extract_keypoints(
        &shifted,
        cfg.dbscan_eps,
        cfg.dbscan_min_pts,
        cfg.sampling_interval,
    )?;
    timings.keypoints_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let descriptors = compute_descriptors(&keypoints, &cloud, cfg.descriptor_radius)?;
    timings.descriptors_ms = start.elapsed().as_secs_f64() * 1e3;

    if descriptors.is_empty() {
        return Err(Error::EmptyKeypoints);
    }
    Ok(ExtractedFeatures {
        cloud,
        keypoints,
        descriptors,
        timings,
    })
}

/// Full global-alignment result.
#[derive(Debug, Clone, Serialize)]
pub struct GlobalAlignment {
    /// Rigid transform taking source-map world coordinates onto the target.
    pub transform: RigidTransform,
    pub score: SimilarityScore,
    pub timings: StageTimings,
    pub src_points: usize,
    pub tgt_points: usize,
    pub src_keypoints: usize,
    pub tgt_keypoints: usize,
    /// Mutual descriptor matches fed to the coarse stage.
    pub correspondences: usize,
    /// Size of the coarse consistency clique.
    pub coarse_clique: usize,
    /// Coarse inliers after graduated non-convexity.
    pub coarse_inliers: usize,
    /// Outer iterations of the fine stage.
    pub fine_iterations: usize,
    /// False when the fine stage found no correspondences and fell back to
    /// the coarse transform.
    pub fine_succeeded: bool,
}

/// Aligns the features of a source map onto the features of a target map.
/// Exposed separately from [`align_global`] so local alignment can reuse
/// extracted features across many mask windows.
pub fn align_features(
    src: &ExtractedFeatures,
    tgt_cloud: &SampledCloud,
    tgt_keypoints: &KeyPointSet,
    tgt_descriptors: &[Descriptor],
    cfg: &RunConfig,
) -> Result<(GlobalAlignment, StageTimings)> {
    let mut timings = StageTimings::default();

    let start = Instant::now();
    let matches = mutual_match(&src.descriptors, tgt_descriptors);
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = matches
        .iter()
        .map(|m| {
            (
                src.keypoints.positions[src.descriptors[m.source_index].keypoint_index],
                tgt_keypoints.positions[tgt_descriptors[m.target_index].keypoint_index],
            )
        })
        .collect();
    timings.match_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let coarse = estimate_coarse(
        &pairs,
        &CoarseParams {
            noise_bound: cfg.noise_bound,
            min_correspondences: cfg.min_correspondences,
        },
    )?;
    timings.coarse_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let fine = refine_sparse_icp(
        &src.cloud,
        tgt_cloud,
        &coarse.transform,
        &FineParams {
            p_exponent: cfg.p_exponent,
            max_iters: cfg.fine_max_iters,
            max_corr_dist: cfg.max_corr_dist,
            tol: cfg.fine_tol,
        },
    )?;
    timings.fine_ms = start.elapsed().as_secs_f64() * 1e3;
    let transform = if fine.succeeded {
        fine.transform
    } else {
        coarse.transform
    };

    let start = Instant::now();
    let score = similarity(
        &src.cloud.transformed(&transform),
        tgt_cloud,
        cfg.dot_threshold,
        cfg.pair_radius,
        cfg.grid_cell,
    )?;
    timings.score_ms = start.elapsed().as_secs_f64() * 1e3;

    let alignment = GlobalAlignment {
        transform,
        score,
        timings: StageTimings::default(),
        src_points: src.cloud.len(),
        tgt_points: tgt_cloud.len(),
        src_keypoints: src.keypoints.len(),
        tgt_keypoints: tgt_keypoints.len(),
        correspondences: matches.len(),
        coarse_clique: coarse.clique_size,
        coarse_inliers: coarse.inlier_count,
        fine_iterations: fine.iterations,
        fine_succeeded: fine.succeeded,
    };
    Ok((alignment, timings))
}

/// Two-stage global alignment of `src` onto `tgt`.
pub fn align_global(src: &DensityMap, tgt: &DensityMap, cfg: &RunConfig) -> Result<GlobalAlignment> {
    cfg.validate()?;
    let src_feat = extract_features(src, cfg)?;
    let tgt_feat = extract_features(tgt, cfg)?;
    let (mut alignment, align_timings) = align_features(
        &src_feat,
        &tgt_feat.cloud,
        &tgt_feat.keypoints,
        &tgt_feat.descriptors,
        cfg,
    )?;
    let mut timings = StageTimings::default();
    timings.add(&src_feat.timings);
    timings.add(&tgt_feat.timings);
    timings.add(&align_timings);
    alignment.timings = timings;
    Ok(alignment)
}
