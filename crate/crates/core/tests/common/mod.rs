//! Shared support for the integration tests: independent reference
//! implementations (re-derived from the definitions, not calling back into
//! the library's optimized paths) plus deterministic fixture builders.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use cryoalign::cloud::SampledCloud;
use cryoalign::descriptor::LocalReferenceFrame;
use cryoalign::transform::{random_rotation, random_unit_vector};
use cryoalign::{build_synthetic, DensityMap, RigidTransform, SynthSpec, TruthRecord};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Independent reference implementations (test oracles)
// ---------------------------------------------------------------------------

/// Brute-force DBSCAN: O(n²) neighbor scans, seeds visited in ascending
/// index, FIFO expansion. A point is core when at least `min_pts` points
/// (itself included) lie within `eps` (inclusive). Noise is −1; cluster ids
/// count up in seed order. Border points contested between clusters go to
/// the cluster seeded first, because clusters are grown to completion one
/// at a time.
pub fn quadratic_dbscan(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> Vec<i32> {
    const UNVISITED: i32 = -2;
    let n = points.len();
    let neighbors_of = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| (points[j] - points[i]).norm() <= eps)
            .collect()
    };
    let mut labels = vec![UNVISITED; n];
    let mut cluster = 0i32;
    for seed in 0..n {
        if labels[seed] != UNVISITED {
            continue;
        }
        let nb = neighbors_of(seed);
        if nb.len() < min_pts {
            labels[seed] = -1;
            continue;
        }
        labels[seed] = cluster;
        let mut queue: std::collections::VecDeque<usize> =
            nb.into_iter().filter(|&j| j != seed).collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == -1 {
                labels[j] = cluster;
                continue;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let nb_j = neighbors_of(j);
            if nb_j.len() >= min_pts {
                queue.extend(
                    nb_j.into_iter()
                        .filter(|&k| labels[k] == UNVISITED || labels[k] == -1),
                );
            }
        }
        cluster += 1;
    }
    labels
}

/// Relabels clusters by order of first appearance so two labelings can be
/// compared as partitions. Noise (−1) is preserved.
pub fn canonical_labels(labels: &[i32]) -> Vec<i32> {
    let mut remap: std::collections::HashMap<i32, i32> = std::collections::HashMap::new();
    let mut next = 0i32;
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                *remap.entry(l).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                })
            }
        })
        .collect()
}

/// Exhaustive bidirectional nearest-neighbor matching over raw feature
/// vectors: keeps (i, j) iff j minimizes the L2 distance from src[i] over
/// all targets and i minimizes it from tgt[j] over all sources, ties going
/// to the lowest index. Returned pairs are sorted by (distance, i, j).
pub fn exhaustive_mutual_match(src: &[Vec<f64>], tgt: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let argmin = |q: &[f64], pool: &[Vec<f64>]| -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, v) in pool.iter().enumerate() {
            let d = dist(q, v);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    };
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, s) in src.iter().enumerate() {
        let j = argmin(s, tgt);
        if argmin(&tgt[j], src) == i {
            pairs.push((dist(s, &tgt[j]), i, j));
        }
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pairs.into_iter().map(|(_, i, j)| (i, j)).collect()
}

/// Descriptor geometry, restated locally so the oracle does not read the
/// library's constants: 2 radial shells × 2 elevation bands × 8 azimuth
/// wedges, 11 cosine bins each.
pub const ORACLE_DESCRIPTOR_DIM: usize = 2 * 2 * 8 * 11;

/// Splits a continuous coordinate over `bins` equal bins of `[lo, hi]` into
/// the two straddled bins with linear weights (centers at lo + (k+0.5)·w).
/// Wrapping folds indices modulo `bins`; otherwise they clamp to the ends.
fn split_linear(value: f64, lo: f64, hi: f64, bins: usize, wrap: bool) -> Vec<(usize, f64)> {
    let pos = (value - lo) / (hi - lo) * bins as f64 - 0.5;
    let lower = pos.floor();
    let upper_w = pos - lower;
    let fold = |raw: i64| -> usize {
        let b = bins as i64;
        if wrap {
            raw.rem_euclid(b) as usize
        } else {
            raw.clamp(0, b - 1) as usize
        }
    };
    vec![
        (fold(lower as i64), 1.0 - upper_w),
        (fold(lower as i64 + 1), upper_w),
    ]
}

/// Direct-binning descriptor oracle: brute-force neighbor scan, explicit
/// per-point bin splitting, L2 normalization. The frame is an input (frame
/// construction is checked elsewhere); this checks the histogram itself.
pub fn direct_binned_descriptor(
    keypoint: &Vector3<f64>,
    lrf: &LocalReferenceFrame,
    cloud: &SampledCloud,
    radius: f64,
) -> Vec<f64> {
    let mut hist = vec![0.0f64; ORACLE_DESCRIPTOR_DIM];
    let z = lrf.z_axis();
    for (p, v) in cloud.points.iter().zip(&cloud.vectors) {
        let d = (p - keypoint).norm();
        if d > radius || d < 1e-9 {
            continue;
        }
        let local = lrf.to_local(&(p - keypoint));
        let cos_theta = v.dot(&z).clamp(-1.0, 1.0);
        let azimuth = local.y.atan2(local.x);
        let band = if local.z < 0.0 { 1 } else { 0 };
        for (shell, wr) in split_linear(d, 0.0, radius, 2, false) {
            for (wedge, wa) in split_linear(
                azimuth,
                -std::f64::consts::PI,
                std::f64::consts::PI,
                8,
                true,
            ) {
                for (cbin, wc) in split_linear(cos_theta, -1.0, 1.0, 11, false) {
                    let sector = (shell * 2 + band) * 8 + wedge;
                    hist[sector * 11 + cbin] += wr * wa * wc;
                }
            }
        }
    }
    let norm = hist.iter().map(|h| h * h).sum::<f64>().sqrt();
    if norm > 0.0 {
        for h in &mut hist {
            *h /= norm;
        }
    }
    hist
}

/// RMSD restated as the naive loop over reference points.
pub fn naive_rmsd(
    estimated: &RigidTransform,
    truth: &RigidTransform,
    reference: &[Vector3<f64>],
) -> f64 {
    let mut acc = 0.0;
    for x in reference {
        let a = estimated.apply(x);
        let b = truth.apply(x);
        acc += (a - b).norm_squared();
    }
    (acc / reference.len() as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Fixture builders
// ---------------------------------------------------------------------------

/// Draws `count` points uniformly inside a centered cube of edge `side`,
/// re-drawing any point closer than `min_sep` to an accepted one.
pub fn scattered_centers(
    rng: &mut ChaCha8Rng,
    count: usize,
    side: f64,
    min_sep: f64,
) -> Vec<[f64; 3]> {
    let half = side / 2.0;
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while centers.len() < count {
        attempts += 1;
        assert!(
            attempts < 100_000,
            "could not place {count} blobs with separation {min_sep} in a {side} box"
        );
        let c = [
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
        ];
        let ok = centers.iter().all(|e| {
            let dx = e[0] - c[0];
            let dy = e[1] - c[1];
            let dz = e[2] - c[2];
            (dx * dx + dy * dy + dz * dz).sqrt() >= min_sep
        });
        if ok {
            centers.push(c);
        }
    }
    centers
}

/// Spec with seeded scattered blob centers (minimum separation enforced)
/// inside a centered cube of edge `side`.
pub fn scattered_spec(
    rng: &mut ChaCha8Rng,
    count: usize,
    side: f64,
    min_sep: f64,
    resolution: f64,
    voxel_size: f64,
) -> SynthSpec {
    SynthSpec {
        centers: scattered_centers(rng, count, side, min_sep),
        weights: Vec::new(),
        random_blobs: None,
        resolution,
        voxel_size,
        padding: None,
        transform: None,
        noise_sigma_frac: 0.0,
        seed: 0,
    }
}

/// Scattered clusters of 4–6 blobs, each cluster built on a scalene
/// orthogonal skeleton (three arms of different random lengths and weights
/// along u, v, u×v, plus optional oblique extras). Two properties matter:
///
/// * every cluster mode sits in a neighbourhood whose point covariance has
///   three separated eigenvalues and no mirror symmetry, so local reference
///   frames reproduce under rotation and regridding — isolated spherical
///   blobs are the opposite, their frame axes degenerate to lattice noise;
/// * arm lengths, weights, and blob counts differ per cluster, so the
///   descriptors are distinctive and nearest-descriptor matching is
///   meaningful (identical motifs would all match each other: descriptors
///   are rotation-invariant by design).
pub fn tetra_cluster_spec(
    rng: &mut ChaCha8Rng,
    clusters: usize,
    side: f64,
    min_sep: f64,
    resolution: f64,
    voxel_size: f64,
) -> SynthSpec {
    tetra_cluster_spec_grouped(rng, clusters, side, min_sep, resolution, voxel_size).0
}

/// [`tetra_cluster_spec`] plus the number of blobs in each cluster, so
/// callers can slice `centers`/`weights` on whole-cluster boundaries.
pub fn tetra_cluster_spec_grouped(
    rng: &mut ChaCha8Rng,
    clusters: usize,
    side: f64,
    min_sep: f64,
    resolution: f64,
    voxel_size: f64,
) -> (SynthSpec, Vec<usize>) {
    let cluster_centers = scattered_centers(rng, clusters, side, min_sep);
    let mut centers = Vec::new();
    let mut weights = Vec::new();
    let mut group_sizes = Vec::with_capacity(clusters);
    for c in cluster_centers {
        let c = Vector3::from(c);
        let u = random_unit_vector(rng);
        let v = {
            let r = random_unit_vector(rng);
            (r - u * u.dot(&r)).normalize()
        };
        let w = u.cross(&v);
        let before = centers.len();
        let mut push = |p: Vector3<f64>, weight: f64| {
            centers.push([p.x, p.y, p.z]);
            weights.push(weight);
        };
        push(c, 1.0);
        push(c + u * rng.random_range(3.0..=4.2), rng.random_range(0.7..=0.9));
        push(c + v * rng.random_range(2.6..=3.8), rng.random_range(0.45..=0.65));
        push(c + w * rng.random_range(2.2..=3.2), rng.random_range(0.55..=0.8));
        for _ in 0..rng.random_range(0..=2) {
            let dir = random_unit_vector(rng);
            let reach = rng.random_range(2.4..=3.6);
            push(c + dir * reach, rng.random_range(0.4..=0.8));
        }
        group_sizes.push(centers.len() - before);
    }
    let spec = SynthSpec {
        centers,
        weights,
        random_blobs: None,
        resolution,
        voxel_size,
        padding: None,
        transform: None,
        noise_sigma_frac: 0.0,
        seed: 0,
    };
    (spec, group_sizes)
}

/// Like [`scattered_spec`], but the first two blobs are pinned to opposite
/// cube corners so the bounding box — and with it the voxel dimensions —
/// is `side + 2·padding` by construction.
pub fn corner_pinned_spec(
    rng: &mut ChaCha8Rng,
    count: usize,
    side: f64,
    min_sep: f64,
    resolution: f64,
    voxel_size: f64,
    padding: f64,
) -> SynthSpec {
    assert!(count >= 2);
    let half = side / 2.0;
    let mut centers = vec![[-half, -half, -half], [half, half, half]];
    // Interior blobs keep their distance from the pins too.
    let mut attempts = 0usize;
    while centers.len() < count {
        attempts += 1;
        assert!(attempts < 100_000, "interior blob placement stalled");
        let c = [
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
        ];
        let ok = centers.iter().all(|e| {
            let dx = e[0] - c[0];
            let dy = e[1] - c[1];
            let dz = e[2] - c[2];
            (dx * dx + dy * dy + dz * dz).sqrt() >= min_sep
        });
        if ok {
            centers.push(c);
        }
    }
    SynthSpec {
        centers,
        weights: Vec::new(),
        random_blobs: None,
        resolution,
        voxel_size,
        padding: Some(padding),
        transform: None,
        noise_sigma_frac: 0.0,
        seed: 0,
    }
}

/// Uniform random rigid pose: Haar-uniform rotation, translation in a
/// uniformly random direction with magnitude uniform in [0, max_translation].
pub fn random_pose(rng: &mut ChaCha8Rng, max_translation: f64) -> RigidTransform {
    let rotation = random_rotation(rng);
    let translation = random_unit_vector(rng) * rng.random_range(0.0..=max_translation);
    RigidTransform::new(rotation, translation)
}

/// Builds a spec and returns the rendered map with its ground truth.
pub fn build(spec: &SynthSpec) -> (DensityMap, TruthRecord) {
    build_synthetic(spec).expect("fixture spec must render")
}

/// A synthetic cloud for scoring properties: uniform points in a centered
/// cube of edge `side` shifted by `offset`, with random unit vectors.
pub fn synthetic_cloud(rng: &mut ChaCha8Rng, n: usize, side: f64, offset: f64) -> SampledCloud {
    let half = side / 2.0;
    let points = (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-half..=half) + offset,
                rng.random_range(-half..=half) + offset,
                rng.random_range(-half..=half) + offset,
            )
        })
        .collect();
    let vectors = (0..n).map(|_| random_unit_vector(rng)).collect();
    SampledCloud {
        points,
        vectors,
        sampling_interval: 1.0,
        source_contour: 0.0,
    }
}

// ---------------------------------------------------------------------------
// Binary-driving helpers
// ---------------------------------------------------------------------------

/// Command handle for the compiled CLI binary.
pub fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cryoalign"))
}

/// Runs the CLI with `args`, asserting nothing; returns the finished output.
pub fn run_cli(args: &[&str]) -> std::process::Output {
    cli()
        .args(args)
        .output()
        .expect("failed to spawn the cryoalign binary")
}

pub fn write_map(dir: &Path, name: &str, map: &DensityMap) -> PathBuf {
    let path = dir.join(name);
    cryoalign::write_mrc(map, &path).expect("fixture map write");
    path
}

pub fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

/// Extracts a row-major 4×4 transform from a JSON value (a bare 16-array).
pub fn transform_from_json(value: &serde_json::Value) -> RigidTransform {
    let numbers: Vec<f64> = value
        .as_array()
        .expect("transform must be a JSON array")
        .iter()
        .map(|v| v.as_f64().expect("transform entries must be numbers"))
        .collect();
    let arr: [f64; 16] = numbers.try_into().expect("transform must have 16 entries");
    RigidTransform::from_mat4_row_major(&arr, 1e-6).expect("transform must be rigid")
}

/// Degrees → radians.
pub fn deg(d: f64) -> f64 {
    d.to_radians()
}
