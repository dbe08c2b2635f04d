//! 352-dimensional orientation-histogram descriptors. Each keypoint gets a
//! disambiguated local reference frame from its neighborhood covariance;
//! neighbors are binned into 32 spatial sectors (2 radial shells × 2
//! elevation bands × 8 azimuth wedges), each holding an 11-bin histogram
//! over the cosine between the neighbor's density vector and the frame's
//! z axis.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::cloud::{KeyPointSet, SampledCloud};
use crate::error::{Error, Result};
use crate::spatial::PointGrid;

pub const RADIAL_SHELLS: usize = 2;
pub const ELEVATION_BANDS: usize = 2;
pub const AZIMUTH_WEDGES: usize = 8;
pub const COSINE_BINS: usize = 11;
pub const DESCRIPTOR_DIM: usize =
    RADIAL_SHELLS * ELEVATION_BANDS * AZIMUTH_WEDGES * COSINE_BINS;

/// Covariance rank threshold: λ₂/λ₁ below this means the neighborhood is
/// (numerically) collinear and no stable frame exists.
const RANK_RATIO_EPS: f64 = 1e-6;

/// Neighbors closer than this to the keypoint have no defined azimuth and
/// are skipped during binning.
const NEIGHBOR_DIST_EPS: f64 = 1e-9;

/// Orthonormal right-handed basis attached to a keypoint; rows are
/// (x̂, ŷ, ẑ) in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct LocalReferenceFrame {
    pub axes: Matrix3<f64>,
}

impl LocalReferenceFrame {
    pub fn x_axis(&self) -> Vector3<f64> {
        self.axes.row(0).transpose()
    }

    pub fn y_axis(&self) -> Vector3<f64> {
        self.axes.row(1).transpose()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.axes.row(2).transpose()
    }

    /// World offset → frame-local coordinates.
    pub fn to_local(&self, offset: &Vector3<f64>) -> Vector3<f64> {
        self.axes * offset
    }

    pub fn validate(&self) -> Result<()> {
        let gram = self.axes * self.axes.transpose();
        let ortho = (gram - Matrix3::identity()).abs().max();
        let det = self.axes.determinant();
        if ortho > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::DegenerateFrame(format!(
                "axes not right-handed orthonormal (ortho error {ortho:.2e}, det {det})"
            )));
        }
        Ok(())
    }
}

/// Orientation-histogram descriptor for one keypoint.
#[derive(Debug, Clone)]
pub struct Descriptor {
    pub values: Vec<f64>,
    pub keypoint_index: usize,
    pub support_radius: f64,
    pub lrf: LocalReferenceFrame,
}

impl Descriptor {
    pub fn distance(&self, other: &Descriptor) -> f64 {
        crate::spatial::l2_distance(&self.values, &other.values)
    }

    pub fn cosine_similarity(&self, other: &Descriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Weighted-covariance local reference frame with sign disambiguation:
/// eigenvectors of `Σ (radius − dᵢ)·oᵢoᵢᵀ / Σ (radius − dᵢ)` (offsets
/// `oᵢ` from the keypoint), eigenvalues descending; x̂ and ẑ are flipped
/// toward the positive side of the weighted neighbor-projection sum and
/// ŷ = ẑ × x̂ closes a right-handed frame.
pub fn compute_lrf(
    keypoint: &Vector3<f64>,
    cloud: &SampledCloud,
    radius: f64,
) -> Result<LocalReferenceFrame> {
    let grid = PointGrid::build(&cloud.points, radius);
    compute_lrf_indexed(keypoint, cloud, &grid, radius)
}

fn compute_lrf_indexed(
    keypoint: &Vector3<f64>,
    cloud: &SampledCloud,
    grid: &PointGrid,
    radius: f64,
) -> Result<LocalReferenceFrame> {
    let neighbors = grid.within_radius(keypoint, radius);
    if neighbors.len() < 3 {
        return Err(Error::DegenerateFrame(format!(
            "{} neighbors within {radius} Å (need ≥ 3)",
            neighbors.len()
        )));
    }
    let mut cov = Matrix3::zeros();
    let mut total = 0.0;
    for &(i, d) in &neighbors {
        let w = radius - d;
        let o = cloud.points[i] - keypoint;
        cov += w * o * o.transpose();
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::DegenerateFrame("zero covariance weight".into()));
    }
    cov /= total;

    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lambda = [
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    ];
    if !(lambda[0] > 0.0) || lambda[1] / lambda[0] < RANK_RATIO_EPS {
        return Err(Error::DegenerateFrame(format!(
            "rank-deficient covariance (eigenvalues {lambda:?})"
        )));
    }
    let e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let e3: Vector3<f64> = eig.eigenvectors.column(order[2]).into();

    // Sign disambiguation by the weighted projection sum Σ (radius − dᵢ)·⟨oᵢ, axis⟩.
    // Unlike a point-count majority, which can tie on even neighborhoods and
    // then inherit the eigen solver's arbitrary sign, the sum is a continuous
    // function of the neighborhood and rotates with it.
    let disambiguate = |axis: Vector3<f64>| -> Vector3<f64> {
        let mut proj = 0.0;
        for &(i, d) in &neighbors {
            proj += (radius - d) * (cloud.points[i] - keypoint).dot(&axis);
        }
        if proj < 0.0 {
            -axis
        } else {
            axis
        }
    };
    let x = disambiguate(e1.normalize());
    let mut z = disambiguate(e3.normalize());
    // Guard against numerical non-orthogonality from the eigen solve.
    z = (z - x * x.dot(&z)).normalize();
    let y = z.cross(&x);
    let axes = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let lrf = LocalReferenceFrame { axes };
    lrf.validate()?;
    Ok(lrf)
}

/// Fractional linear ("soft") binning over `bins` positions covering
/// `[lo, hi]`, bin centers at `lo + (i + 0.5)·w`. Returns up to two
/// (bin, weight) pairs; out-of-range mass is clamped to the end bins when
/// `wrap` is false and wrapped around otherwise.
fn soft_bin(value: f64, lo: f64, hi: f64, bins: usize, wrap: bool) -> [(usize, f64); 2] {
    let u = (value - lo) / (hi - lo) * bins as f64 - 0.5;
    let i0 = u.floor();
    let frac = u - i0;
    let place = |i: f64| -> usize {
        if wrap {
            i.rem_euclid(bins as f64) as usize
        } else {
            i.clamp(0.0, bins as f64 - 1.0) as usize
        }
    };
    [(place(i0), 1.0 - frac), (place(i0 + 1.0), frac)]
}

/// Histogram of neighbor density-vector orientations in the given frame.
/// Exposed separately from [`compute_descriptor`] so callers (and tests)
/// can bin against a known frame.
pub fn compute_descriptor_with_lrf(
    keypoint: &Vector3<f64>,
    lrf: &LocalReferenceFrame,
    cloud: &SampledCloud,
    radius: f64,
) -> Result<Vec<f64>> {
    let grid = PointGrid::build(&cloud.points, radius);
    compute_descriptor_binned(keypoint, lrf, cloud, &grid, radius)
}

fn compute_descriptor_binned(
    keypoint: &Vector3<f64>,
    lrf: &LocalReferenceFrame,
    cloud: &SampledCloud,
    grid: &PointGrid,
    radius: f64,
) -> Result<Vec<f64>> {
    let mut hist = vec![0.0f64; DESCRIPTOR_DIM];
    let z_axis = lrf.z_axis();
    let mut contributed = false;
    for (i, d) in grid.within_radius(keypoint, radius) {
        if d < NEIGHBOR_DIST_EPS {
            continue; // azimuth undefined at the keypoint itself
        }
        let local = lrf.to_local(&(cloud.points[i] - keypoint));
        let cos_theta = cloud.vectors[i].dot(&z_axis).clamp(-1.0, 1.0);
        let azimuth = local.y.atan2(local.x);
        let elev = usize::from(local.z < 0.0); // band 0: upper hemisphere

        let radial_parts = soft_bin(d, 0.0, radius, RADIAL_SHELLS, false);
        let azim_parts = soft_bin(
            azimuth,
            -std::f64::consts::PI,
            std::f64::consts::PI,
            AZIMUTH_WEDGES,
            true,
        );
        let cos_parts = soft_bin(cos_theta, -1.0, 1.0, COSINE_BINS, false);
        for &(shell, wr) in &radial_parts {
            if wr == 0.0 {
                continue;
            }
            for &(wedge, wa) in &azim_parts {
                if wa == 0.0 {
                    continue;
                }
                let sector = ((shell * ELEVATION_BANDS + elev) * AZIMUTH_WEDGES) + wedge;
                for &(bin, wc) in &cos_parts {
                    if wc == 0.0 {
                        continue;
                    }
                    hist[sector * COSINE_BINS + bin] += wr * wa * wc;
                    contributed = true;
                }
            }
        }
    }
    if !contributed {
        return Err(Error::DegenerateFrame(
            "no neighbor within the support radius".into(),
        ));
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut hist {
            *v /= norm;
        }
    }
    Ok(hist)
}

/// Frame plus histogram for a single keypoint.
pub fn compute_descriptor(
    keypoint_index: usize,
    keypoint: &Vector3<f64>,
    cloud: &SampledCloud,
    radius: f64,
) -> Result<Descriptor> {
    let grid = PointGrid::build(&cloud.points, radius);
    descriptor_indexed(keypoint_index, keypoint, cloud, &grid, radius)
}

fn descriptor_indexed(
    keypoint_index: usize,
    keypoint: &Vector3<f64>,
    cloud: &SampledCloud,
    grid: &PointGrid,
    radius: f64,
) -> Result<Descriptor> {
    let lrf = compute_lrf_indexed(keypoint, cloud, grid, radius)?;
    let values = compute_descriptor_binned(keypoint, &lrf, cloud, grid, radius)?;
    Ok(Descriptor {
        values,
        keypoint_index,
        support_radius: radius,
        lrf,
    })
}

/// Descriptors for every keypoint with a well-defined frame; keypoints with
/// degenerate frames are skipped (their indices simply don't appear), which
/// keeps zero vectors out of the matching stage.
pub fn compute_descriptors(
    keypoints: &KeyPointSet,
    cloud: &SampledCloud,
    radius: f64,
) -> Result<Vec<Descriptor>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidConfig("descriptor radius must be > 0".into()));
    }
    let grid = PointGrid::build(&cloud.points, radius);
    Ok(keypoints
        .positions
        .par_iter()
        .enumerate()
        .filter_map(|(i, kp)| descriptor_indexed(i, kp, cloud, &grid, radius).ok())
        .collect())
}
