//! Rigid alignment of cryo-EM density maps.
//!
//! The pipeline converts each map into a sampled point cloud with density
//! vectors, extracts keypoints by mean-shift plus DBSCAN clustering,
//! describes them with 352-dimensional orientation histograms, matches
//! descriptors bidirectionally, estimates a robust coarse transform by
//! truncated least squares, refines it with Lp-norm sparse ICP, and scores
//! the superimposition from spatial-distribution divergence and density
//! vector agreement.

pub mod cloud;
pub mod config;
pub mod descriptor;
pub mod error;
pub mod local;
pub mod map;
pub mod pipeline;
pub mod registration;
pub mod scoring;
pub mod spatial;
pub mod synth;
pub mod transform;

pub use cloud::{sample_grid, KeyPointSet, MeanShiftParams, SampledCloud};
pub use config::{ConfigPatch, RunConfig};
pub use descriptor::{compute_descriptors, Descriptor};
pub use error::{Error, Result};
pub use local::{align_local, CandidateResult};
pub use map::{read_mrc, synthesize_map, write_mrc, DensityMap};
pub use pipeline::{align_global, GlobalAlignment};
pub use registration::{
    estimate_coarse, mutual_match, refine_sparse_icp, CoarseParams, Correspondence, FineParams,
};
pub use scoring::{rmsd_vs_ground_truth, similarity, EvalReport, SimilarityScore};
pub use synth::{build_synthetic, SynthSpec, TruthRecord};
pub use transform::RigidTransform;
