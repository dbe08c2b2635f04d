//! Point-cloud generation from density maps: uniform grid sampling with
//! density vectors, mean-shift convergence to density modes, and DBSCAN
//! cluster centers as keypoints.

mod ply;

pub use ply::write_cloud_ply;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::map::DensityMap;
use crate::spatial::PointGrid;
use crate::transform::RigidTransform;

/// Direction degeneracy threshold: a kernel mean closer than this to the
/// query point leaves the density vector undefined.
pub const DIRECTION_EPS: f64 = 1e-9;

/// Grid-sampled positions with unit density vectors. Every point had
/// interpolated density ≥ `source_contour` when sampled, and `vectors[i]`
/// is the unit direction from `points[i]` toward its kernel-weighted
/// density mean.
#[derive(Debug, Clone)]
pub struct SampledCloud {
    pub points: Vec<Vector3<f64>>,
    pub vectors: Vec<Vector3<f64>>,
    pub sampling_interval: f64,
    pub source_contour: f32,
}

impl SampledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies a rigid motion to the cloud: points are moved, vectors are
    /// rotated.
    pub fn transformed(&self, t: &RigidTransform) -> SampledCloud {
        SampledCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            vectors: self.vectors.iter().map(|v| t.apply_vector(v)).collect(),
            sampling_interval: self.sampling_interval,
            source_contour: self.source_contour,
        }
    }

    /// Axis-aligned bounding box of the points.
    pub fn bbox(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Sub-cloud of the points inside the closed box `[lo, hi]`, keeping
    /// point/vector pairs together. Returns the selected indices too.
    pub fn crop(&self, lo: &Vector3<f64>, hi: &Vector3<f64>) -> (SampledCloud, Vec<usize>) {
        let mut idx = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            if (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]) {
                idx.push(i);
            }
        }
        let cloud = SampledCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            vectors: idx.iter().map(|&i| self.vectors[i]).collect(),
            sampling_interval: self.sampling_interval,
            source_contour: self.source_contour,
        };
        (cloud, idx)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.vectors.len() {
            return Err(Error::InvalidMap(
                "cloud needs equal, non-zero point and vector counts".into(),
            ));
        }
        for v in &self.vectors {
            if (v.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidMap(format!(
                    "non-unit density vector (norm {})",
                    v.norm()
                )));
            }
        }
        Ok(())
    }
}

/// Kernel parameters for density vectors and mean-shift iteration:
/// weight of grid point `x_n` relative to query `x` is
/// `exp(−1.5·|x − x_n|²/bandwidth²) · Φ(x_n)`, truncated at 3·bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct MeanShiftParams {
    pub bandwidth: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl MeanShiftParams {
    /// Defaults tied to the sampling interval: bandwidth spans adjacent
    /// samples (2× interval); tolerance and iteration cap are convergence
    /// plumbing (the modes are separated by whole intervals, so 0.01 Å is
    /// far below anything the clustering can distinguish).
    pub fn for_interval(interval: f64) -> Self {
        MeanShiftParams {
            bandwidth: 2.0 * interval,
            max_iters: 100,
            tol: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.tol > 0.0 && self.max_iters >= 1) {
            return Err(Error::InvalidConfig(
                "mean-shift needs bandwidth > 0, tol > 0, max_iters ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Cluster centers of mean-shifted sample points.
#[derive(Debug, Clone)]
pub struct KeyPointSet {
    pub positions: Vec<Vector3<f64>>,
    pub member_counts: Vec<usize>,
    pub parent_cloud_interval: f64,
}

impl KeyPointSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Evaluates kernel-weighted density means against a fixed map/bandwidth.
/// Precomputes per-row occupancy spans so the all-zero bulk of a map is
/// never scanned, and uses per-axis Gaussian tables (the kernel separates
/// exactly across axes).
pub struct KernelEvaluator<'m> {
    map: &'m DensityMap,
    sigma: f64,
    cutoff: f64,
    /// Per (iz·ny + iy) row: inclusive x-index range of nonzero density.
    row_spans: Vec<Option<(u32, u32)>>,
}

impl<'m> KernelEvaluator<'m> {
    pub fn new(map: &'m DensityMap, bandwidth: f64) -> Self {
        assert!(bandwidth > 0.0, "bandwidth must be positive");
        let (nx, ny, nz) = map.dims;
        let mut row_spans = vec![None; ny * nz];
        for iz in 0..nz {
            for iy in 0..ny {
                let row = nx * (iy + ny * iz);
                let data = &map.data[row..row + nx];
                let first = data.iter().position(|&v| v != 0.0);
                if let Some(first) = first {
                    let last = nx - 1 - data.iter().rev().position(|&v| v != 0.0).unwrap();
                    row_spans[iy + ny * iz] = Some((first as u32, last as u32));
                }
            }
        }
        KernelEvaluator {
            map,
            sigma: bandwidth,
            cutoff: 3.0 * bandwidth,
            row_spans,
        }
    }

    /// Weighted mean `Σ k(x−x_n)·Φ(x_n)·x_n / Σ k(x−x_n)·Φ(x_n)` over grid
    /// points within 3σ of `x`. `None` when the denominator is not positive
    /// (no density in range, or negative values cancel it).
    pub fn kernel_mean(&self, x: &Vector3<f64>) -> Option<Vector3<f64>> {
        let map = self.map;
        let (nx, ny, nz) = map.dims;
        let v = &map.voxel_size;
        let o = &map.origin;
        let cut = self.cutoff;
        let cut2 = cut * cut;
        let scale = -1.5 / (self.sigma * self.sigma);

        let axis_range = |c: f64, org: f64, step: f64, n: usize| -> Option<(usize, usize)> {
            let lo = ((c - cut - org) / step).ceil().max(0.0);
            let hi = ((c + cut - org) / step).floor().min(n as f64 - 1.0);
            (lo <= hi).then(|| (lo as usize, hi as usize))
        };
        let (x0, x1) = axis_range(x.x, o.x, v.x, nx)?;
        let (y0, y1) = axis_range(x.y, o.y, v.y, ny)?;
        let (z0, z1) = axis_range(x.z, o.z, v.z, nz)?;

        let table = |lo: usize, hi: usize, org: f64, step: f64, c: f64| -> Vec<f64> {
            (lo..=hi)
                .map(|i| {
                    let d = org + i as f64 * step - c;
                    (scale * d * d).exp()
                })
                .collect()
        };
        let ex = table(x0, x1, o.x, v.x, x.x);
        let ey = table(y0, y1, o.y, v.y, x.y);
        let ez = table(z0, z1, o.z, v.z, x.z);

        let mut den = 0.0;
        let mut num = Vector3::zeros();
        for iz in z0..=z1 {
            let wz = o.z + iz as f64 * v.z;
            let dz = wz - x.z;
            let dz2 = dz * dz;
            let kz = ez[iz - z0];
            for iy in y0..=y1 {
                let wy = o.y + iy as f64 * v.y;
                let dy = wy - x.y;
                let dyz2 = dz2 + dy * dy;
                if dyz2 > cut2 {
                    continue;
                }
                let Some((sx0, sx1)) = self.row_spans[iy + ny * iz] else {
                    continue;
                };
                // Exact x half-width of the 3σ ball on this row.
                let hx = (cut2 - dyz2).sqrt();
                let bx0 = (((x.x - hx - o.x) / v.x).ceil().max(0.0)) as usize;
                let bx1 = ((x.x + hx - o.x) / v.x).floor();
                if bx1 < 0.0 {
                    continue;
                }
                let lo = bx0.max(x0).max(sx0 as usize);
                let hi = (bx1 as usize).min(x1).min(sx1 as usize);
                if lo > hi {
                    continue;
                }
                let kyz = kz * ey[iy - y0];
                let row = nx * (iy + ny * iz);
                let mut s_row = 0.0;
                let mut sx_row = 0.0;
                for ix in lo..=hi {
                    let phi = map.data[row + ix] as f64;
                    if phi == 0.0 {
                        continue;
                    }
                    let w = kyz * ex[ix - x0] * phi;
                    s_row += w;
                    sx_row += w * (o.x + ix as f64 * v.x);
                }
                den += s_row;
                num.x += sx_row;
                num.y += s_row * wy;
                num.z += s_row * wz;
            }
        }
        (den > 1e-300).then(|| num / den)
    }

    /// One point's mean-shift iteration: repeatedly move to the kernel mean
    /// until the displacement drops below `tol` or `max_iters` is reached.
    /// Returns the final iterate (the last well-defined one on degeneracy)
    /// and the number of steps taken.
    pub fn shift_to_mode(&self, start: &Vector3<f64>, max_iters: usize, tol: f64) -> (Vector3<f64>, usize) {
        let mut y = *start;
        for it in 0..max_iters {
            let Some(m) = self.kernel_mean(&y) else {
                return (y, it);
            };
            let step = (m - y).norm();
            y = m;
            if step < tol {
                return (y, it + 1);
            }
        }
        (y, max_iters)
    }
}

/// Unit direction from `x` toward its kernel-weighted density mean
/// (the density vector). Errors with [`Error::UndefinedDirection`] when the
/// mean coincides with `x` (symmetry) or no positive density is in range.
pub fn compute_density_vector(
    x: &Vector3<f64>,
    map: &DensityMap,
    params: &MeanShiftParams,
) -> Result<Vector3<f64>> {
    params.validate()?;
    let ev = KernelEvaluator::new(map, params.bandwidth);
    density_vector_with(&ev, x)
}

fn density_vector_with(ev: &KernelEvaluator, x: &Vector3<f64>) -> Result<Vector3<f64>> {
    let mean = ev.kernel_mean(x).ok_or(Error::UndefinedDirection)?;
    let diff = mean - x;
    let norm = diff.norm();
    if norm < DIRECTION_EPS {
        return Err(Error::UndefinedDirection);
    }
    Ok(diff / norm)
}

/// Samples the map on a world-space lattice of spacing `interval` anchored
/// at the map origin, keeping points whose interpolated density reaches the
/// contour level. Each point receives a density vector; symmetry-degenerate
/// points are dropped. Uses default kernel parameters for the interval.
pub fn sample_grid(map: &DensityMap, interval: f64) -> Result<SampledCloud> {
    sample_grid_with(map, interval, &MeanShiftParams::for_interval(interval))
}

pub fn sample_grid_with(
    map: &DensityMap,
    interval: f64,
    params: &MeanShiftParams,
) -> Result<SampledCloud> {
    if !(interval > 0.0 && interval.is_finite()) {
        return Err(Error::InvalidConfig("sampling interval must be > 0".into()));
    }
    params.validate()?;
    let (lo, hi) = map.bounds();
    let counts = [
        ((hi.x - lo.x) / interval).floor() as usize + 1,
        ((hi.y - lo.y) / interval).floor() as usize + 1,
        ((hi.z - lo.z) / interval).floor() as usize + 1,
    ];
    let contour = map.contour_level as f64;
    let mut kept = Vec::new();
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let p = lo
                    + Vector3::new(
                        i as f64 * interval,
                        j as f64 * interval,
                        k as f64 * interval,
                    );
                if matches!(map.trilinear(&p), Some(d) if d >= contour) {
                    kept.push(p);
                }
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyCloud);
    }

    let ev = KernelEvaluator::new(map, params.bandwidth);
    let resolved: Vec<(Vector3<f64>, Vector3<f64>)> = kept
        .par_iter()
        .filter_map(|p| density_vector_with(&ev, p).ok().map(|v| (*p, v)))
        .collect();
    if resolved.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (points, vectors) = resolved.into_iter().unzip();
    Ok(SampledCloud {
        points,
        vectors,
        sampling_interval: interval,
        source_contour: map.contour_level,
    })
}

/// Runs the mean-shift iteration from every cloud point. The output has the
/// same length and order as the input; points whose iteration degenerates
/// return their last well-defined iterate.
pub fn mean_shift_converge(
    cloud: &SampledCloud,
    map: &DensityMap,
    params: &MeanShiftParams,
) -> Result<Vec<Vector3<f64>>> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let ev = KernelEvaluator::new(map, params.bandwidth);
    Ok(cloud
        .points
        .par_iter()
        .map(|p| ev.shift_to_mode(p, params.max_iters, params.tol).0)
        .collect())
}

/// DBSCAN cluster labels: `−1` for noise, otherwise a cluster id. A point is
/// a core point when at least `min_pts` points (itself included) lie within
/// `eps`. Seeds are visited in ascending index and neighbor lists are index
/// -sorted, so labels are deterministic; the induced partition is order
/// -independent.
pub fn dbscan_labels(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> Vec<i32> {
    const UNVISITED: i32 = -2;
    let n = points.len();
    let mut labels = vec![UNVISITED; n];
    if n == 0 {
        return labels;
    }
    let grid = PointGrid::build(points, eps);
    let mut cluster = 0i32;
    let mut queue = std::collections::VecDeque::new();
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let neighbors = grid.within_radius(&points[i], eps);
        if neighbors.len() < min_pts {
            labels[i] = -1;
            continue;
        }
        labels[i] = cluster;
        queue.clear();
        queue.extend(neighbors.iter().map(|&(j, _)| j).filter(|&j| j != i));
        while let Some(j) = queue.pop_front() {
            if labels[j] == -1 {
                labels[j] = cluster; // border point adopted by the cluster
                continue;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let nb = grid.within_radius(&points[j], eps);
            if nb.len() >= min_pts {
                queue.extend(
                    nb.iter()
                        .map(|&(k, _)| k)
                        .filter(|&k| labels[k] == UNVISITED || labels[k] == -1),
                );
            }
        }
        cluster += 1;
    }
    labels
}

/// Clusters mean-shifted points with DBSCAN and returns one keypoint per
/// cluster at the arithmetic mean of its members. Noise points are
/// discarded; an all-noise result is an error.
pub fn extract_keypoints(
    shifted: &[Vector3<f64>],
    eps: f64,
    min_pts: usize,
    parent_cloud_interval: f64,
) -> Result<KeyPointSet> {
    Ok(extract_keypoints_labeled(shifted, eps, min_pts, parent_cloud_interval)?.0)
}

/// [`extract_keypoints`] plus the per-point cluster labels: element `i` is
/// the index of the keypoint that point `i` contributed to, or −1 for noise.
pub fn extract_keypoints_labeled(
    shifted: &[Vector3<f64>],
    eps: f64,
    min_pts: usize,
    parent_cloud_interval: f64,
) -> Result<(KeyPointSet, Vec<i32>)> {
    if shifted.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(eps > 0.0) || min_pts < 1 {
        return Err(Error::InvalidConfig(
            "DBSCAN needs eps > 0 and min_pts ≥ 1".into(),
        ));
    }
    let labels = dbscan_labels(shifted, eps, min_pts);
    let cluster_count = labels.iter().copied().max().unwrap_or(-1) + 1;
    if cluster_count == 0 {
        return Err(Error::EmptyKeypoints);
    }
    let mut sums = vec![Vector3::<f64>::zeros(); cluster_count as usize];
    let mut counts = vec![0usize; cluster_count as usize];
    for (p, &l) in shifted.iter().zip(&labels) {
        if l >= 0 {
            sums[l as usize] += p;
            counts[l as usize] += 1;
        }
    }
    let positions = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    Ok((
        KeyPointSet {
            positions,
            member_counts: counts,
            parent_cloud_interval,
        },
        labels,
    ))
}
