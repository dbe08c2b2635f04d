//! Two-stage registration: bidirectional descriptor matching, robust coarse
//! estimation on keypoint correspondences, and Lp-norm sparse ICP
//! refinement on the full clouds.

mod coarse;
mod icp;

pub use coarse::{estimate_coarse, truncated_objective, CoarseEstimate, CoarseParams};
pub use icp::{refine_sparse_icp, FineParams, RefineResult};

use crate::descriptor::Descriptor;
use crate::spatial::{nearest_linear, VpTree};
use crate::transform::{nearest_rotation, RigidTransform};
use nalgebra::{Matrix3, Vector3};

/// Above this many descriptors on either side, mutual matching switches
/// from brute force to an indexed search. Both paths are exact.
pub const MATCH_INDEX_THRESHOLD: usize = 5000;

/// A mutual (bidirectional nearest-neighbor) descriptor match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source_index: usize,
    pub target_index: usize,
    pub feature_distance: f64,
}

/// Keeps `(i, j)` iff `j` is `i`'s nearest target descriptor and `i` is
/// `j`'s nearest source descriptor (L2 in descriptor space). The result is
/// sorted ascending by feature distance (ties by index pair). Indices refer
/// to positions in the input slices; map through `keypoint_index` to reach
/// keypoints.
pub fn mutual_match(src: &[Descriptor], tgt: &[Descriptor]) -> Vec<Correspondence> {
    let use_index = src.len().max(tgt.len()) >= MATCH_INDEX_THRESHOLD;
    mutual_match_impl(src, tgt, use_index)
}

/// Same contract as [`mutual_match`] with the search strategy pinned —
/// exists so tests can hold both paths to the same oracle.
pub fn mutual_match_forced(
    src: &[Descriptor],
    tgt: &[Descriptor],
    use_index: bool,
) -> Vec<Correspondence> {
    mutual_match_impl(src, tgt, use_index)
}

fn mutual_match_impl(src: &[Descriptor], tgt: &[Descriptor], use_index: bool) -> Vec<Correspondence> {
    if src.is_empty() || tgt.is_empty() {
        return Vec::new();
    }
    let src_values: Vec<Vec<f64>> = src.iter().map(|d| d.values.clone()).collect();
    let tgt_values: Vec<Vec<f64>> = tgt.iter().map(|d| d.values.clone()).collect();

    let (src_to_tgt, tgt_to_src): (Vec<(usize, f64)>, Vec<usize>) = if use_index {
        let tgt_tree = VpTree::build(&tgt_values);
        let src_tree = VpTree::build(&src_values);
        (
            src_values
                .iter()
                .map(|q| tgt_tree.nearest(q).expect("non-empty target"))
                .collect(),
            tgt_values
                .iter()
                .map(|q| src_tree.nearest(q).expect("non-empty source").0)
                .collect(),
        )
    } else {
        (
            src_values
                .iter()
                .map(|q| nearest_linear(&tgt_values, q).expect("non-empty target"))
                .collect(),
            tgt_values
                .iter()
                .map(|q| nearest_linear(&src_values, q).expect("non-empty source").0)
                .collect(),
        )
    };

    let mut out: Vec<Correspondence> = src_to_tgt
        .iter()
        .enumerate()
        .filter(|&(i, &(j, _))| tgt_to_src[j] == i)
        .map(|(i, &(j, d))| Correspondence {
            source_index: i,
            target_index: j,
            feature_distance: d,
        })
        .collect();
    out.sort_by(|a, b| {
        a.feature_distance
            .partial_cmp(&b.feature_distance)
            .unwrap()
            .then(a.source_index.cmp(&b.source_index))
            .then(a.target_index.cmp(&b.target_index))
    });
    out
}

/// Weighted rigid fit (orthogonal Procrustes / Kabsch): the rotation and
/// translation minimizing `Σ wᵢ ‖tgtᵢ − R·srcᵢ − t‖²`.
///
/// Returns `None` when the fit is undefined: fewer than three pairs carry
/// positive weight, or the total weight vanishes. Callers keep their previous
/// estimate in that case. The returned rotation is a proper rotation
/// (det = +1) even when the cross-covariance favors a reflection.
pub fn fit_rigid_weighted(
    src: &[Vector3<f64>],
    tgt: &[Vector3<f64>],
    weights: &[f64],
) -> Option<RigidTransform> {
    assert_eq!(src.len(), tgt.len());
    assert_eq!(src.len(), weights.len());
    let total: f64 = weights.iter().sum();
    if total <= 1e-12 || weights.iter().filter(|&&w| w > 0.0).count() < 3 {
        return None;
    }
    let mut src_bar = Vector3::zeros();
    let mut tgt_bar = Vector3::zeros();
    for i in 0..src.len() {
        src_bar += weights[i] * src[i];
        tgt_bar += weights[i] * tgt[i];
    }
    src_bar /= total;
    tgt_bar /= total;
    let mut cross = Matrix3::zeros();
    for i in 0..src.len() {
        if weights[i] > 0.0 {
            cross += weights[i] * (tgt[i] - tgt_bar) * (src[i] - src_bar).transpose();
        }
    }
    let rotation = nearest_rotation(&cross);
    let translation = tgt_bar - rotation * src_bar;
    Some(RigidTransform::new(rotation, translation))
}
