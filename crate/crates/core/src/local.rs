//! Local alignment: fitting a small map into a larger one by sliding a
//! translational mask over the larger map's cloud, aligning the small map
//! against each window, and ranking the resulting candidates by similarity
//! against the full target cloud.

use crate::cloud::{extract_keypoints, mean_shift_converge, MeanShiftParams, SampledCloud};
use crate::config::RunConfig;
use crate::descriptor::compute_descriptors;
use crate::error::{Error, Result};
use crate::map::DensityMap;
use crate::pipeline::{align_features, extract_features, ExtractedFeatures};
use crate::scoring::{similarity, SimilarityScore};
use crate::transform::RigidTransform;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

/// Geometry of the sliding mask lattice.
#[derive(Debug, Clone)]
pub struct MaskSpec {
    /// Lattice spacing per axis (Å).
    pub stride: Vector3<f64>,
    /// Inflation of the mask box beyond the source bounding box (Å).
    pub margin: f64,
    /// Windows holding fewer target points than this are dropped.
    pub min_points: usize,
}

impl MaskSpec {
    /// Stride defaulting per axis to half the source span (so any placement
    /// of the source overlaps some window by at least half per axis),
    /// margin one sampling interval, minimum 50 points.
    pub fn for_source(src_span: &Vector3<f64>, cfg: &RunConfig) -> MaskSpec {
        let stride = match cfg.mask_stride {
            Some(s) => Vector3::repeat(s),
            // A degenerate (flat) source still needs a positive stride.
            None => src_span.map(|s| (s / 2.0).max(cfg.sampling_interval)),
        };
        MaskSpec {
            stride,
            margin: cfg.mask_margin,
            min_points: cfg.mask_min_points,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.stride.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "mask stride must be positive per axis, got {:?}",
                self.stride
            )));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "mask margin must be non-negative, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// One window of the target cloud.
#[derive(Debug, Clone)]
pub struct MaskWindow {
    /// Lower corner of the window box (world Å).
    pub origin: Vector3<f64>,
    /// Target points inside the box.
    pub cloud: SampledCloud,
    /// Indices of those points in the parent cloud.
    pub member_indices: Vec<usize>,
    /// Position in the deterministic lattice enumeration (x fastest);
    /// used to break ranking ties.
    pub lattice_index: usize,
}

/// One ranked local-alignment candidate.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateResult {
    pub transform: RigidTransform,
    pub score: SimilarityScore,
    /// Lower corner of the mask window that produced the candidate
    /// (world Å, in the larger map's frame).
    pub mask_origin: [f64; 3],
    /// 1-based rank after sorting by score.
    pub rank: usize,
}

/// Offsets of the window lattice along one axis: `0, stride, 2·stride, …`
/// up to `span − window`, plus a tail offset flush with the far edge when
/// the lattice does not land there exactly. A window at least as large as
/// the span yields the single offset 0.
fn axis_offsets(span: f64, window: f64, stride: f64) -> Vec<f64> {
    if window >= span {
        return vec![0.0];
    }
    let reach = span - window;
    let k_max = (reach / stride).floor() as i64;
    let mut out: Vec<f64> = (0..=k_max).map(|k| k as f64 * stride).collect();
    if reach > out.last().copied().unwrap_or(0.0) + 1e-12 {
        out.push(reach);
    }
    out
}

/// Enumerates mask windows over the target cloud: boxes of size
/// `src_span + 2·margin` on a stride lattice covering the target bounding
/// box (plus tail positions flush with the far edges), each holding the
/// target points inside it. Windows with fewer than `spec.min_points`
/// points are dropped; dropping all of them is a no-candidates error.
pub fn generate_masks(
    tgt: &SampledCloud,
    src_span: &Vector3<f64>,
    spec: &MaskSpec,
) -> Result<Vec<MaskWindow>> {
    spec.validate()?;
    if tgt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (tgt_lo, tgt_hi) = tgt.bbox();
    let tgt_span = tgt_hi - tgt_lo;
    let window = src_span.map(|s| s.max(0.0)) + Vector3::repeat(2.0 * spec.margin);

    let xs = axis_offsets(tgt_span.x, window.x, spec.stride.x);
    let ys = axis_offsets(tgt_span.y, window.y, spec.stride.y);
    let zs = axis_offsets(tgt_span.z, window.z, spec.stride.z);

    let mut windows = Vec::new();
    let mut lattice_index = 0usize;
    for oz in &zs {
        for oy in &ys {
            for ox in &xs {
                let origin = tgt_lo + Vector3::new(*ox, *oy, *oz);
                let hi = origin + window;
                let (cloud, member_indices) = tgt.crop(&origin, &hi);
                let index = lattice_index;
                lattice_index += 1;
                if cloud.len() < spec.min_points {
                    continue;
                }
                windows.push(MaskWindow {
                    origin,
                    cloud,
                    member_indices,
                    lattice_index: index,
                });
            }
        }
    }
    if windows.is_empty() {
        return Err(Error::NoCandidates(format!(
            "all {lattice_index} mask windows held fewer than {} points",
            spec.min_points
        )));
    }
    Ok(windows)
}

/// A candidate before ranking.
struct RawCandidate {
    transform: RigidTransform,
    score: SimilarityScore,
    mask_origin: Vector3<f64>,
    lattice_index: usize,
}

/// Aligns the source features against one target window. The window's
/// keypoints are re-clustered from the precomputed per-point mean-shift
/// modes (mode seeking is per-point and map-driven, so restricting to the
/// window after the fact is exact); descriptors see only the window's
/// points, exactly as if the window were a standalone cloud.
fn align_one_window(
    src_feat: &ExtractedFeatures,
    window: &MaskWindow,
    tgt_modes: &[Vector3<f64>],
    full_tgt: &SampledCloud,
    cfg: &RunConfig,
) -> Result<Option<RawCandidate>> {
    let run = || -> Result<RawCandidate> {
        let modes: Vec<Vector3<f64>> = window
            .member_indices
            .iter()
            .map(|&i| tgt_modes[i])
            .collect();
        let keypoints =
            extract_keypoints(&modes, cfg.dbscan_eps, cfg.dbscan_min_pts, cfg.sampling_interval)?;
        let descriptors = compute_descriptors(&keypoints, &window.cloud, cfg.descriptor_radius)?;
        if descriptors.is_empty() {
            return Err(Error::EmptyKeypoints);
        }
        let (alignment, _) =
            align_features(src_feat, &window.cloud, &keypoints, &descriptors, cfg)?;
        // Re-score against the full target cloud so candidates from
        // different windows are comparable.
        let score = similarity(
            &src_feat.cloud.transformed(&alignment.transform),
            full_tgt,
            cfg.dot_threshold,
            cfg.pair_radius,
            cfg.grid_cell,
        )?;
        Ok(RawCandidate {
            transform: alignment.transform,
            score,
            mask_origin: window.origin,
            lattice_index: window.lattice_index,
        })
    };
    match run() {
        Ok(c) => Ok(Some(c)),
        // A window that cannot produce a pose is skipped, not fatal.
        Err(e) if e.is_no_solution() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Two candidates are duplicates when their rotations differ by less than
/// the dedup angle and their translations by less than the dedup distance.
fn is_duplicate(a: &RigidTransform, b: &RigidTransform, cfg: &RunConfig) -> bool {
    a.rotation_angle_to(b).to_degrees() < cfg.dedup_rotation_deg
        && a.translation_distance_to(b) < cfg.dedup_translation
}

/// Volume ratio (smaller / larger) above which the whole target is also
/// tried as a single window, so the masked candidate list always contains
/// the global-path pose when the source occupies a substantial fraction of
/// the target.
pub const FULL_WINDOW_RATIO: f64 = 0.4;

/// Aligns a small map into a larger one and returns ranked candidates.
///
/// When `src` has the larger above-contour bounding-box volume the inputs
/// are swapped internally and the returned transforms inverted (and
/// re-scored in the caller's orientation), so the result always maps `src`
/// coordinates into `tgt`.
pub fn align_local(src: &DensityMap, tgt: &DensityMap, cfg: &RunConfig) -> Result<Vec<CandidateResult>> {
    cfg.validate()?;
    let src_vol = src.above_contour_bbox_volume();
    let tgt_vol = tgt.above_contour_bbox_volume();
    let swapped = src_vol > tgt_vol;
    let (small, large) = if swapped { (tgt, src) } else { (src, tgt) };
    let ratio = if tgt_vol.max(src_vol) > 0.0 {
        src_vol.min(tgt_vol) / src_vol.max(tgt_vol)
    } else {
        0.0
    };

    let small_feat = extract_features(small, cfg)?;
    let large_feat = extract_features(large, cfg)?;
    let ms_params = MeanShiftParams {
        bandwidth: cfg.bandwidth,
        max_iters: cfg.mean_shift_max_iters,
        tol: cfg.mean_shift_tol,
    };
    // Per-point modes of the large cloud, computed once and reused by every
    // window (mode seeking is independent per point).
    let large_modes = mean_shift_converge(&large_feat.cloud, large, &ms_params)?;

    let (small_lo, small_hi) = small_feat.cloud.bbox();
    let src_span = small_hi - small_lo;
    let spec = MaskSpec::for_source(&src_span, cfg);
    let mut windows = generate_masks(&large_feat.cloud, &src_span, &spec)?;

    // With substantial volume overlap the single full-cover window (the
    // global path) competes alongside the sliding windows.
    let full_window_index = windows.iter().map(|w| w.lattice_index).max().unwrap() + 1;
    if ratio >= FULL_WINDOW_RATIO {
        let (lo, hi) = large_feat.cloud.bbox();
        let covers_all = windows.iter().any(|w| {
            w.cloud.len() == large_feat.cloud.len()
        });
        if !covers_all {
            let (cloud, member_indices) = large_feat.cloud.crop(&lo, &hi);
            windows.push(MaskWindow {
                origin: lo,
                cloud,
                member_indices,
                lattice_index: full_window_index,
            });
        }
    }

    let raw: Vec<Option<RawCandidate>> = windows
        .par_iter()
        .map(|w| align_one_window(&small_feat, w, &large_modes, &large_feat.cloud, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut candidates: Vec<RawCandidate> = raw.into_iter().flatten().collect();
    if candidates.is_empty() {
        return Err(Error::NoCandidates(
            "no mask window produced a coarse alignment".into(),
        ));
    }

    // In swapped mode candidates currently map tgt→src; invert and re-score
    // them in the caller's orientation. Inversion can move a pose across the
    // scoring pairing radius, so the score must be recomputed, not reused.
    if swapped {
        let src_feat_cloud = &large_feat.cloud; // caller's src is the large map
        for c in &mut candidates {
            c.transform = c.transform.invert();
            c.score = similarity(
                &src_feat_cloud.transformed(&c.transform),
                &small_feat.cloud,
                cfg.dot_threshold,
                cfg.pair_radius,
                cfg.grid_cell,
            )?;
        }
    }

    // Rank by score (ties toward the lower lattice index), then merge
    // dedup-equivalent poses keeping the best-ranked representative.
    candidates.sort_by(|a, b| {
        b.score
            .score
            .partial_cmp(&a.score.score)
            .expect("scores are finite")
            .then(a.lattice_index.cmp(&b.lattice_index))
    });
    let mut kept: Vec<RawCandidate> = Vec::new();
    for c in candidates {
        if kept.iter().any(|k| is_duplicate(&k.transform, &c.transform, cfg)) {
            continue;
        }
        kept.push(c);
    }
    kept.truncate(cfg.candidates);

    Ok(kept
        .into_iter()
        .enumerate()
        .map(|(i, c)| CandidateResult {
            transform: c.transform,
            score: c.score,
            mask_origin: [c.mask_origin.x, c.mask_origin.y, c.mask_origin.z],
            rank: i + 1,
        })
        .collect())
}
