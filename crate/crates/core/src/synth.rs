//! Synthetic density-map fixtures with ground truth known by construction.
//!
//! A fixture is a set of Gaussian blobs — either listed explicitly or grown
//! as seeded random chains, mimicking how molecular density concentrates
//! along backbones — rendered onto a voxel lattice, optionally placed by a
//! rigid transform and degraded with seeded Gaussian noise. The generator
//! records everything a test harness needs to verify an alignment.

use crate::error::{Error, Result};
use crate::map::{synthesize_map, DensityMap};
use crate::transform::RigidTransform;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Persistence of the chain random walk: each step keeps this much of the
/// previous direction before renormalizing, which produces elongated,
/// backbone-like blobs rather than isotropic clumps.
pub const CHAIN_PERSISTENCE: f64 = 0.7;
/// Default spacing between consecutive chain blob centers (Å), roughly one
/// residue step.
pub const CHAIN_STEP: f64 = 3.5;

/// Recipe for a random multi-chain blob layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomBlobSpec {
    /// Total number of blob centers across all chains.
    pub count: usize,
    /// Number of independent chains the count is split over.
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Step length between consecutive centers (Å).
    #[serde(default = "default_step")]
    pub step: f64,
    /// Chain starts are drawn uniformly inside a cube of this edge (Å),
    /// centered at the origin.
    #[serde(default = "default_extent")]
    pub extent: f64,
}

fn default_chains() -> usize {
    3
}
fn default_step() -> f64 {
    CHAIN_STEP
}
fn default_extent() -> f64 {
    40.0
}

/// Declarative description of a synthetic map.
///
/// Blob centers come from `centers` (with optional `weights`) or, when
/// `centers` is empty, from `random_blobs`. The optional `transform`
/// (row-major 4×4) is applied to the centers before rendering; `seed` drives
/// every random choice, so equal specs produce byte-identical maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default)]
    pub centers: Vec<[f64; 3]>,
    /// Per-center weights; defaults to 1.0 each when empty.
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub random_blobs: Option<RandomBlobSpec>,
    /// Nominal resolution (Å) controlling the blob width.
    pub resolution: f64,
    /// Cubic voxel edge (Å).
    pub voxel_size: f64,
    /// World-space padding around the blob bounding box (Å); defaults to
    /// twice the resolution so the density decays inside the box.
    #[serde(default)]
    pub padding: Option<f64>,
    /// Rigid placement applied to all centers, row-major 4×4.
    #[serde(default)]
    pub transform: Option<[f64; 16]>,
    /// Gaussian noise level as a fraction of the clean map's peak density.
    #[serde(default)]
    pub noise_sigma_frac: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Ground truth recorded alongside a generated map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    /// The rigid transform that was applied to the centers.
    pub transform: RigidTransform,
    /// Final (placed) blob centers, world Å.
    pub centers: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub resolution: f64,
    pub voxel_size: f64,
    pub noise_sigma_frac: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Convenience recipe: `count` chain blobs, default geometry.
    pub fn random(count: usize, resolution: f64, voxel_size: f64, seed: u64) -> Self {
        SynthSpec {
            centers: Vec::new(),
            weights: Vec::new(),
            random_blobs: Some(RandomBlobSpec {
                count,
                chains: default_chains(),
                step: default_step(),
                extent: default_extent(),
            }),
            resolution,
            voxel_size,
            padding: None,
            transform: None,
            noise_sigma_frac: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() && self.random_blobs.is_none() {
            return Err(Error::InvalidSpec(
                "spec needs explicit centers or a random_blobs recipe".into(),
            ));
        }
        if !self.centers.is_empty() && self.random_blobs.is_some() {
            return Err(Error::InvalidSpec(
                "give either explicit centers or random_blobs, not both".into(),
            ));
        }
        if let Some(r) = &self.random_blobs {
            if r.count == 0 {
                return Err(Error::InvalidSpec("random_blobs.count must be ≥ 1".into()));
            }
            if r.chains == 0 {
                return Err(Error::InvalidSpec("random_blobs.chains must be ≥ 1".into()));
            }
            if !(r.step > 0.0 && r.step.is_finite()) || !(r.extent >= 0.0 && r.extent.is_finite())
            {
                return Err(Error::InvalidSpec(
                    "random_blobs.step must be positive and extent non-negative".into(),
                ));
            }
        }
        if !self.weights.is_empty()
            && !self.centers.is_empty()
            && self.weights.len() != self.centers.len()
        {
            return Err(Error::InvalidSpec(format!(
                "{} weights for {} centers",
                self.weights.len(),
                self.centers.len()
            )));
        }
        if !(self.noise_sigma_frac >= 0.0 && self.noise_sigma_frac.is_finite()) {
            return Err(Error::InvalidSpec(
                "noise_sigma_frac must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Grows seeded random chains and returns their blob centers.
fn chain_centers(spec: &RandomBlobSpec, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut centers = Vec::with_capacity(spec.count);
    let per_chain = spec.count.div_ceil(spec.chains);
    let half = spec.extent / 2.0;
    'outer: for _ in 0..spec.chains {
        let mut pos = Vector3::new(
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
        );
        let mut dir = random_unit(rng);
        for _ in 0..per_chain {
            if centers.len() == spec.count {
                break 'outer;
            }
            centers.push(pos);
            dir = (CHAIN_PERSISTENCE * dir + random_unit(rng)).normalize();
            pos += spec.step * dir;
        }
    }
    centers
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Renders the spec into a density map plus its ground-truth record.
///
/// The contour level is always derived from the clean (noise-free) peak, so
/// adding noise does not silently move the threshold the pipeline samples
/// against.
pub fn build_synthetic(spec: &SynthSpec) -> Result<(DensityMap, TruthRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut centers: Vec<Vector3<f64>> = if let Some(recipe) = &spec.random_blobs {
        chain_centers(recipe, &mut rng)
    } else {
        spec.centers
            .iter()
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect()
    };
    let weights: Vec<f64> = if spec.weights.is_empty() {
        vec![1.0; centers.len()]
    } else if spec.weights.len() == centers.len() {
        spec.weights.clone()
    } else {
        return Err(Error::InvalidSpec(format!(
            "{} weights for {} generated centers",
            spec.weights.len(),
            centers.len()
        )));
    };

    let transform = match &spec.transform {
        Some(mat) => RigidTransform::from_mat4_row_major(mat, crate::transform::SO3_INPUT_TOL)?,
        None => RigidTransform::identity(),
    };
    for c in &mut centers {
        *c = transform.apply(c);
    }

    let padding = spec.padding.unwrap_or(2.0 * spec.resolution);
    let mut map = synthesize_map(&centers, &weights, spec.resolution, spec.voxel_size, padding)?;

    if spec.noise_sigma_frac > 0.0 {
        let sigma = spec.noise_sigma_frac as f32 * map.max_value();
        for v in &mut map.data {
            *v += sigma * rng.sample::<f64, _>(StandardNormal) as f32;
        }
    }

    let truth = TruthRecord {
        transform,
        centers: centers.iter().map(|c| [c.x, c.y, c.z]).collect(),
        weights,
        resolution: spec.resolution,
        voxel_size: spec.voxel_size,
        noise_sigma_frac: spec.noise_sigma_frac,
        seed: spec.seed,
    };
    Ok((map, truth))
}
